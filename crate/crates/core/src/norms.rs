//! Error norms against a manufactured solution.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::forms::{ElementData, RefTables};
use crate::manufactured::{ExactPoint, Manufactured};
use crate::space::{Field, MixedSpace};

/// Errors of one discrete state. `l2_gradu` and `l2_flux` use the spatial
/// gradient; `h1_u` and the U-norm use the full one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub l2_u: f64,
    pub h1_u: f64,
    pub l2_q: f64,
    pub l2_gradu: f64,
    pub l2_flux: f64,
    pub u_norm: f64,
}

/// Quadrature exactness used for error integrals.
pub fn error_exactness(p: usize) -> usize {
    2 * p + 5
}

/// Integrates squared errors elementwise against `exact`.
pub fn error_norms(ms: &MixedSpace, state: &[f64], exact: &Manufactured) -> Result<ErrorNorms> {
    error_norms_with(ms, state, &|x| exact.eval(x))
}

/// Same as [`error_norms`] with an arbitrary exact-field callback.
pub fn error_norms_with(ms: &MixedSpace, state: &[f64], exact: &(dyn Fn([f64; 2]) -> ExactPoint + Sync)) -> Result<ErrorNorms> {
    let tables = RefTables::with_exactness(ms, error_exactness(ms.degree()));
    let lo = ms.local_offsets();
    let ds = ms.layout().spatial_dims();
    let mut acc = [0.0f64; 9];
    for e in 0..ms.mesh().num_triangles() {
        let ed = ElementData::new(ms, &tables, e)?;
        let dofs = ms.element_dofs(e);
        let coeff = |f: Field| -> Vec<f64> { dofs[lo[f.index()]..lo[f.index() + 1]].iter().map(|&d| state[d]).collect() };
        let cu = coeff(Field::U);
        let cq = coeff(Field::Q);
        let cr = coeff(Field::R);
        let ct = coeff(Field::T);
        for (qp, &w) in ed.wq.iter().enumerate() {
            let ex = exact(ed.points[qp]);
            let (u, gu) = ed.tab(Field::U).combine(&cu, qp);
            let (q, gq) = ed.tab(Field::Q).combine(&cq, qp);
            let (r, gr) = ed.tab(Field::R).combine(&cr, qp);
            let (t, gt) = ed.tab(Field::T).combine(&ct, qp);
            let sq = |a: f64| a * a;
            acc[0] += w * sq(ex.u - u[0]);
            acc[1] += w * (sq(ex.grad_u[0] - gu[0][0]) + sq(ex.grad_u[1] - gu[0][1]));
            acc[2] += w * sq(ex.q - q[0]);
            acc[3] += w * (sq(ex.grad_q[0] - gq[0][0]) + sq(ex.grad_q[1] - gq[0][1]));
            let mut div_r = 0.0;
            let mut div_t = 0.0;
            for c in 0..ds {
                acc[4] += w * sq(ex.r[c] - gu[0][c]);
                acc[5] += w * sq(ex.r[c] - r[c]);
                acc[6] += w * sq(ex.t[c] - t[c]);
                div_r += gr[c][c];
                div_t += gt[c][c];
            }
            acc[7] += w * sq(ex.div_r - div_r);
            acc[8] += w * sq(ex.div_t - div_t);
        }
    }
    let u_norm2 = acc[0] + acc[1] + acc[2] + acc[3] + acc[5] + acc[6] + acc[7] + acc[8];
    Ok(ErrorNorms {
        l2_u: acc[0].sqrt(),
        h1_u: (acc[0] + acc[1]).sqrt(),
        l2_q: acc[2].sqrt(),
        l2_gradu: acc[4].sqrt(),
        l2_flux: acc[5].sqrt(),
        u_norm: u_norm2.sqrt(),
    })
}

/// Integral of `f` over the mesh at the error quadrature.
pub fn integrate(ms: &MixedSpace, f: &dyn Fn([f64; 2]) -> f64) -> Result<f64> {
    let tables = RefTables::with_exactness(ms, error_exactness(ms.degree()));
    let mut s = 0.0;
    for e in 0..ms.mesh().num_triangles() {
        let ed = ElementData::new(ms, &tables, e)?;
        for (qp, &w) in ed.wq.iter().enumerate() {
            s += w * f(ed.points[qp]);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::PhysicalParams;
    use crate::manufactured::ExactKind;
    use crate::mesh::make_rect_mesh;
    use crate::space::{build_mixed_space, FluxFamily, Layout};
    use std::sync::Arc;

    fn space(p: usize, layout: Layout) -> MixedSpace {
        let mesh = Arc::new(make_rect_mesh(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap());
        let ff = match layout {
            Layout::Stationary => FluxFamily::Rt,
            Layout::SpaceTime => FluxFamily::VectorLagrange,
        };
        build_mixed_space(mesh, p, ff, layout, 0).unwrap()
    }

    fn zero_point() -> ExactPoint {
        ExactPoint {
            u: 0.0,
            grad_u: [0.0; 2],
            q: 0.0,
            grad_q: [0.0; 2],
            r: [0.0; 2],
            t: [0.0; 2],
            div_r: 0.0,
            div_t: 0.0,
            source: 0.0,
        }
    }

    #[test]
    fn sine_square_norm_of_zero_state() {
        let ms = space(2, Layout::Stationary);
        let m = Manufactured::new(ExactKind::SineSquare, PhysicalParams::new(1.0, 1.0, true).unwrap());
        let e = error_norms(&ms, &vec![0.0; ms.total_dim()], &m).unwrap();
        assert!((e.l2_u - 0.5).abs() < 1e-6, "{}", e.l2_u);
    }

    #[test]
    fn linear_function_seminorm() {
        let ms = space(1, Layout::Stationary);
        let exact = |x: [f64; 2]| ExactPoint {
            u: x[0],
            grad_u: [1.0, 0.0],
            r: [1.0, 0.0],
            ..zero_point()
        };
        let e = error_norms_with(&ms, &vec![0.0; ms.total_dim()], &exact).unwrap();
        assert!((e.l2_gradu - 1.0).abs() < 1e-12);
        assert!((e.l2_flux - 1.0).abs() < 1e-12);
        assert!((e.h1_u - (1.0f64 + 1.0 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn polynomial_interpolant_has_zero_error() {
        for p in 1..=3 {
            for layout in [Layout::Stationary, Layout::SpaceTime] {
                let ms = space(p, layout);
                let k = p as i32;
                let u = move |x: [f64; 2]| x[0].powi(k) + 0.5 * x[1].powi(k) + 0.25;
                let ux = move |x: [f64; 2]| k as f64 * x[0].powi(k - 1);
                let uy = move |x: [f64; 2]| 0.5 * k as f64 * x[1].powi(k - 1);
                // q shares u, r and t are the p-1 degree spatial gradient
                let grad = move |x: [f64; 2]| match layout {
                    Layout::Stationary => [ux(x), uy(x)],
                    Layout::SpaceTime => [ux(x), 0.0],
                };
                let div = move |x: [f64; 2]| {
                    let d2 = |s: f64| if k >= 2 { (k * (k - 1)) as f64 * s.powi(k - 2) } else { 0.0 };
                    match layout {
                        Layout::Stationary => d2(x[0]) + 0.5 * d2(x[1]),
                        Layout::SpaceTime => d2(x[0]),
                    }
                };
                let mut state = vec![0.0; ms.total_dim()];
                ms.interpolate_into(Field::U, &mut state, &|x| [u(x), 0.0]).unwrap();
                ms.interpolate_into(Field::Q, &mut state, &|x| [u(x), 0.0]).unwrap();
                ms.interpolate_into(Field::R, &mut state, &grad).unwrap();
                ms.interpolate_into(Field::T, &mut state, &grad).unwrap();
                let exact = |x: [f64; 2]| ExactPoint {
                    u: u(x),
                    grad_u: [ux(x), uy(x)],
                    q: u(x),
                    grad_q: [ux(x), uy(x)],
                    r: grad(x),
                    t: grad(x),
                    div_r: div(x),
                    div_t: div(x),
                    source: 0.0,
                };
                let e = error_norms_with(&ms, &state, &exact).unwrap();
                assert!(e.u_norm < 1e-10, "p={p} {layout:?} {e:?}");
                assert!(e.l2_flux < 1e-10);
            }
        }
    }

    #[test]
    fn integrate_area() {
        let ms = space(1, Layout::Stationary);
        assert!((integrate(&ms, &|_| 1.0).unwrap() - 1.0).abs() < 1e-13);
    }
}
