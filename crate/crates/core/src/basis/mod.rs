//! Reference-triangle shape functions and their physical push-forward.
//!
//! Lagrange families (continuous or broken, scalar or vector valued) map
//! affinely; Raviart-Thomas functions map by the contravariant Piola
//! transform `v = J v̂ / det J`, which preserves normal-trace moments.

pub mod quadrature;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use quadrature::{line_rule, quad_rule, quad_rule_capped, LineRule, QuadRule};

pub const MAX_DEGREE: usize = 3;

const REF_VERTS: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lagrange,
    LagrangeDg,
    RaviartThomas,
    VectorLagrange,
    VectorLagrangeDg,
}

impl Family {
    pub fn is_continuous(self) -> bool {
        matches!(self, Family::Lagrange | Family::RaviartThomas | Family::VectorLagrange)
    }
}

/// Geometric entity a local degree of freedom is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Vertex(usize),
    /// `index` counts from the edge's local start vertex `(edge + 1) % 3`.
    Edge { edge: usize, index: usize },
    Interior(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofEntity {
    pub entity: Entity,
    pub comp: usize,
}

/// Sparse bivariate polynomial `Σ c x^a y^b`.
#[derive(Debug, Clone, Default)]
struct Poly(Vec<(f64, u32, u32)>);

impl Poly {
    fn mono(a: u32, b: u32) -> Self {
        Poly(vec![(1.0, a, b)])
    }

    fn eval(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for &(c, a, b) in &self.0 {
            let xa = x.powi(a as i32);
            let yb = y.powi(b as i32);
            v += c * xa * yb;
            if a > 0 {
                g[0] += c * a as f64 * x.powi(a as i32 - 1) * yb;
            }
            if b > 0 {
                g[1] += c * b as f64 * xa * y.powi(b as i32 - 1);
            }
        }
        (v, g)
    }
}

fn monomials(max_degree: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for d in 0..=max_degree {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

/// Legendre polynomial on `[-1, 1]`.
pub fn legendre(m: usize, s: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => s,
        2 => 0.5 * (3.0 * s * s - 1.0),
        _ => {
            let (mut p0, mut p1) = (1.0, s);
            for k in 1..m {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * s * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Tabulated values and gradients, indexed `(basis, point, component)`.
#[derive(Debug, Clone)]
pub struct Tab {
    pub nbf: usize,
    pub npts: usize,
    pub ncomp: usize,
    val: Vec<f64>,
    grad: Vec<f64>,
}

impl Tab {
    fn zeros(nbf: usize, npts: usize, ncomp: usize) -> Self {
        Tab {
            nbf,
            npts,
            ncomp,
            val: vec![0.0; nbf * npts * ncomp],
            grad: vec![0.0; nbf * npts * ncomp * 2],
        }
    }

    #[inline]
    fn idx(&self, i: usize, q: usize, c: usize) -> usize {
        (i * self.npts + q) * self.ncomp + c
    }

    #[inline]
    pub fn val(&self, i: usize, q: usize, c: usize) -> f64 {
        self.val[self.idx(i, q, c)]
    }

    /// `∂ v_c / ∂ x_d`.
    #[inline]
    pub fn grad(&self, i: usize, q: usize, c: usize, d: usize) -> f64 {
        self.grad[self.idx(i, q, c) * 2 + d]
    }

    /// Divergence over the first `dims` coordinates.
    #[inline]
    pub fn div(&self, i: usize, q: usize, dims: usize) -> f64 {
        (0..dims.min(self.ncomp)).map(|c| self.grad(i, q, c, c)).sum()
    }

    /// Multiplies every basis function `i` by `s[i]`.
    pub fn scale_rows(&mut self, s: &[f64]) {
        let block = self.npts * self.ncomp;
        for (i, &si) in s.iter().enumerate() {
            if si != 1.0 {
                self.val[i * block..(i + 1) * block].iter_mut().for_each(|v| *v *= si);
                self.grad[2 * i * block..2 * (i + 1) * block].iter_mut().for_each(|v| *v *= si);
            }
        }
    }

    /// Combination `Σ_i coeffs[i] v_i` at point `q`.
    pub fn combine(&self, coeffs: &[f64], q: usize) -> ([f64; 2], [[f64; 2]; 2]) {
        debug_assert_eq!(coeffs.len(), self.nbf);
        let mut v = [0.0; 2];
        let mut g = [[0.0; 2]; 2];
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for comp in 0..self.ncomp {
                let k = self.idx(i, q, comp);
                v[comp] += c * self.val[k];
                g[comp][0] += c * self.grad[2 * k];
                g[comp][1] += c * self.grad[2 * k + 1];
            }
        }
        (v, g)
    }
}

#[derive(Debug, Clone)]
enum Span {
    /// Scalar monomials; vector Lagrange reuses them per component.
    Scalar(Vec<(u32, u32)>),
    /// Vector-valued spanning set of the Raviart-Thomas space.
    Vector(Vec<[Poly; 2]>),
}

/// Shape functions of one family and degree on the reference triangle.
#[derive(Debug, Clone)]
pub struct RefBasis {
    family: Family,
    degree: usize,
    ncomp: usize,
    span: Span,
    /// Row `i` holds the span coefficients of basis function `i` (scalar
    /// basis functions only for the vector Lagrange families).
    coef: DMatrix<f64>,
    entities: Vec<DofEntity>,
    /// Lagrange nodes (scalar families).
    nodes: Vec<[f64; 2]>,
}

fn lagrange_nodes(p: usize) -> (Vec<[f64; 2]>, Vec<Entity>) {
    let pf = p as f64;
    let mut nodes = REF_VERTS.to_vec();
    let mut ent = vec![Entity::Vertex(0), Entity::Vertex(1), Entity::Vertex(2)];
    for e in 0..3 {
        let a = REF_VERTS[(e + 1) % 3];
        let b = REF_VERTS[(e + 2) % 3];
        for j in 1..p {
            let s = j as f64 / pf;
            nodes.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
            ent.push(Entity::Edge { edge: e, index: j });
        }
    }
    let mut k = 0;
    for j in 1..p {
        for i in 1..p {
            if i + j < p {
                nodes.push([i as f64 / pf, j as f64 / pf]);
                ent.push(Entity::Interior(k));
                k += 1;
            }
        }
    }
    (nodes, ent)
}

fn invert(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.try_inverse()
        .ok_or_else(|| Error::Argument(format!("{what}: singular dual matrix")))
}

impl RefBasis {
    pub fn new(family: Family, degree: usize) -> Result<Self> {
        Self::with_components(family, degree, 2)
    }

    /// Vector Lagrange families take `ncomp` components (1 or 2); other
    /// families ignore it.
    pub fn with_components(family: Family, degree: usize, ncomp: usize) -> Result<Self> {
        if !(1..=MAX_DEGREE + 1).contains(&degree) {
            return Err(Error::Argument(format!(
                "degree {degree} unsupported (1..={})",
                MAX_DEGREE + 1
            )));
        }
        match family {
            Family::Lagrange | Family::LagrangeDg => Self::lagrange(family, degree, 1),
            Family::VectorLagrange | Family::VectorLagrangeDg => {
                if !(1..=2).contains(&ncomp) {
                    return Err(Error::Argument(format!("{ncomp} vector components")));
                }
                Self::lagrange(family, degree, ncomp)
            }
            Family::RaviartThomas => Self::raviart_thomas(degree),
        }
    }

    fn lagrange(family: Family, p: usize, ncomp: usize) -> Result<Self> {
        let exps = monomials(p as u32);
        let (nodes, ent) = lagrange_nodes(p);
        let n = exps.len();
        debug_assert_eq!(n, nodes.len());
        let vand = DMatrix::from_fn(n, n, |r, j| {
            let (a, b) = exps[j];
            nodes[r][0].powi(a as i32) * nodes[r][1].powi(b as i32)
        });
        // coef * vandᵀ = I
        let coef = invert(vand.transpose(), "lagrange")?;
        let mut entities = Vec::with_capacity(n * ncomp);
        for comp in 0..ncomp {
            entities.extend(ent.iter().map(|&entity| DofEntity { entity, comp }));
        }
        Ok(RefBasis {
            family,
            degree: p,
            ncomp,
            span: Span::Scalar(exps),
            coef,
            entities,
            nodes,
        })
    }

    fn raviart_thomas(k: usize) -> Result<Self> {
        let mut span: Vec<[Poly; 2]> = Vec::new();
        for (a, b) in monomials(k as u32 - 1) {
            span.push([Poly::mono(a, b), Poly::default()]);
        }
        for (a, b) in monomials(k as u32 - 1) {
            span.push([Poly::default(), Poly::mono(a, b)]);
        }
        for b in 0..k as u32 {
            let a = k as u32 - 1 - b;
            span.push([Poly::mono(a + 1, b), Poly::mono(a, b + 1)]);
        }
        let n = span.len();
        debug_assert_eq!(n, k * (k + 2));
        let mut entities = Vec::with_capacity(n);
        for e in 0..3 {
            for m in 0..k {
                entities.push(DofEntity {
                    entity: Entity::Edge { edge: e, index: m },
                    comp: 0,
                });
            }
        }
        let interior = monomials(k.saturating_sub(2) as u32);
        let n_interior = if k >= 2 { 2 * interior.len() } else { 0 };
        for i in 0..n_interior {
            entities.push(DofEntity {
                entity: Entity::Interior(i),
                comp: 0,
            });
        }
        debug_assert_eq!(entities.len(), n);
        let mut basis = RefBasis {
            family: Family::RaviartThomas,
            degree: k,
            ncomp: 2,
            span: Span::Vector(span),
            coef: DMatrix::identity(n, n),
            entities,
            nodes: Vec::new(),
        };
        // duals[i][j] = ℓ_i(g_j); basis coefficients solve coef * dualsᵀ = I
        let mut duals = DMatrix::zeros(n, n);
        for j in 0..n {
            let g = |p: [f64; 2]| basis.eval_span_vector(j, p).0;
            let col = basis.apply_rt_functionals(&g);
            for i in 0..n {
                duals[(i, j)] = col[i];
            }
        }
        basis.coef = invert(duals.transpose(), "raviart-thomas")?;
        Ok(basis)
    }

    fn eval_span_vector(&self, j: usize, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        match &self.span {
            Span::Vector(s) => {
                let (vx, gx) = s[j][0].eval(p[0], p[1]);
                let (vy, gy) = s[j][1].eval(p[0], p[1]);
                ([vx, vy], [gx, gy])
            }
            Span::Scalar(_) => unreachable!(),
        }
    }

    /// Edge normal moments against Legendre polynomials, then interior
    /// moments against vector monomials of degree `k - 2`.
    fn apply_rt_functionals(&self, g: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let k = self.degree;
        let lr = line_rule(2 * k + 1);
        let mut out = Vec::with_capacity(self.entities.len());
        for e in 0..3 {
            let a = REF_VERTS[(e + 1) % 3];
            let b = REF_VERTS[(e + 2) % 3];
            let d = [b[0] - a[0], b[1] - a[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let n = [d[1] / len, -d[0] / len];
            for m in 0..k {
                let mut acc = 0.0;
                for (s, w) in lr.points.iter().zip(&lr.weights) {
                    let p = [a[0] + s * d[0], a[1] + s * d[1]];
                    let v = g(p);
                    acc += w * len * (v[0] * n[0] + v[1] * n[1]) * legendre(m, 2.0 * s - 1.0);
                }
                out.push(acc);
            }
        }
        if k >= 2 {
            let qr = quad_rule_capped(2 * k);
            for comp in 0..2 {
                for (a, b) in monomials(k as u32 - 2) {
                    let mut acc = 0.0;
                    for (p, w) in qr.points.iter().zip(&qr.weights) {
                        acc += w * g(*p)[comp] * p[0].powi(a as i32) * p[1].powi(b as i32);
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ncomp(&self) -> usize {
        match self.family {
            Family::Lagrange | Family::LagrangeDg => 1,
            _ => self.ncomp,
        }
    }

    pub fn ndofs(&self) -> usize {
        self.entities.len()
    }

    pub fn entities(&self) -> &[DofEntity] {
        &self.entities
    }

    /// Lagrange nodes of one scalar component.
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    /// Tabulates values and reference gradients at reference points.
    pub fn eval_basis(&self, pts: &[[f64; 2]]) -> Result<Tab> {
        for p in pts {
            let tol = 1e-12;
            if p[0] < -tol || p[1] < -tol || p[0] + p[1] > 1.0 + tol {
                return Err(Error::Argument(format!(
                    "point ({}, {}) lies outside the reference triangle",
                    p[0], p[1]
                )));
            }
        }
        Ok(self.eval_unchecked(pts))
    }

    pub(crate) fn eval_unchecked(&self, pts: &[[f64; 2]]) -> Tab {
        let nb = self.ndofs();
        let ncomp = self.ncomp();
        let mut tab = Tab::zeros(nb, pts.len(), ncomp);
        match &self.span {
            Span::Scalar(exps) => {
                let ns = exps.len();
                for (q, p) in pts.iter().enumerate() {
                    let mono: Vec<(f64, [f64; 2])> = exps
                        .iter()
                        .map(|&(a, b)| Poly::mono(a, b).eval(p[0], p[1]))
                        .collect();
                    for s in 0..ns {
                        let mut v = 0.0;
                        let mut g = [0.0; 2];
                        for (j, (mv, mg)) in mono.iter().enumerate() {
                            let c = self.coef[(s, j)];
                            v += c * mv;
                            g[0] += c * mg[0];
                            g[1] += c * mg[1];
                        }
                        for comp in 0..ncomp {
                            let k = tab.idx(comp * ns + s, q, comp);
                            tab.val[k] = v;
                            tab.grad[2 * k] = g[0];
                            tab.grad[2 * k + 1] = g[1];
                        }
                    }
                }
            }
            Span::Vector(span) => {
                for (q, p) in pts.iter().enumerate() {
                    let vals: Vec<_> = (0..span.len()).map(|j| self.eval_span_vector(j, *p)).collect();
                    for i in 0..nb {
                        for comp in 0..2 {
                            let mut v = 0.0;
                            let mut g = [0.0; 2];
                            for (j, (sv, sg)) in vals.iter().enumerate() {
                                let c = self.coef[(i, j)];
                                v += c * sv[comp];
                                g[0] += c * sg[comp][0];
                                g[1] += c * sg[comp][1];
                            }
                            let k = tab.idx(i, q, comp);
                            tab.val[k] = v;
                            tab.grad[2 * k] = g[0];
                            tab.grad[2 * k + 1] = g[1];
                        }
                    }
                }
            }
        }
        tab
    }

    /// Degrees of freedom of a reference-space function (already pulled
    /// back for Raviart-Thomas).
    pub fn reference_dofs(&self, g: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        match self.family {
            Family::RaviartThomas => self.apply_rt_functionals(g),
            _ => {
                let ncomp = self.ncomp();
                let mut out = Vec::with_capacity(self.ndofs());
                for comp in 0..ncomp {
                    for p in &self.nodes {
                        out.push(g(*p)[comp]);
                    }
                }
                out
            }
        }
    }
}

/// Affine map from the reference triangle onto a physical triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub corners: [[f64; 2]; 3],
    /// Columns are `x1 - x0` and `x2 - x0`.
    pub jac: [[f64; 2]; 2],
    pub inv: [[f64; 2]; 2],
    pub det: f64,
    /// Longest edge.
    pub diameter: f64,
}

impl ElementGeometry {
    pub fn new(corners: [[f64; 2]; 3]) -> Result<Self> {
        let [p0, p1, p2] = corners;
        let jac = [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let diameter = (0..3)
            .map(|i| {
                let a = corners[i];
                let b = corners[(i + 1) % 3];
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);
        if !(det.abs() > 1e-14 * diameter * diameter) || !det.is_finite() {
            return Err(Error::Geometry(format!(
                "triangle {corners:?} is degenerate (det J = {det:e})"
            )));
        }
        let inv = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
        Ok(ElementGeometry {
            corners,
            jac,
            inv,
            det,
            diameter,
        })
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }

    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let o = self.corners[0];
        [
            o[0] + self.jac[0][0] * p[0] + self.jac[0][1] * p[1],
            o[1] + self.jac[1][0] * p[0] + self.jac[1][1] * p[1],
        ]
    }

    pub fn inverse_map(&self, x: [f64; 2]) -> [f64; 2] {
        let o = self.corners[0];
        let d = [x[0] - o[0], x[1] - o[1]];
        [
            self.inv[0][0] * d[0] + self.inv[0][1] * d[1],
            self.inv[1][0] * d[0] + self.inv[1][1] * d[1],
        ]
    }

    /// Maps a reference tabulation to physical values and gradients.
    pub fn push_forward_tab(&self, family: Family, tab: &Tab) -> Tab {
        let mut out = tab.clone();
        let inv = self.inv;
        let n = tab.nbf * tab.npts * tab.ncomp;
        match family {
            Family::RaviartThomas => {
                let j = self.jac;
                let s = 1.0 / self.det;
                for i in 0..tab.nbf {
                    for q in 0..tab.npts {
                        let k0 = tab.idx(i, q, 0);
                        let v = [tab.val[k0], tab.val[k0 + 1]];
                        let g = [
                            [tab.grad[2 * k0], tab.grad[2 * k0 + 1]],
                            [tab.grad[2 * k0 + 2], tab.grad[2 * k0 + 3]],
                        ];
                        for c in 0..2 {
                            out.val[k0 + c] = s * (j[c][0] * v[0] + j[c][1] * v[1]);
                            for d in 0..2 {
                                let mut acc = 0.0;
                                for a in 0..2 {
                                    for b in 0..2 {
                                        acc += j[c][a] * g[a][b] * inv[b][d];
                                    }
                                }
                                out.grad[2 * (k0 + c) + d] = s * acc;
                            }
                        }
                    }
                }
            }
            _ => {
                for k in 0..n {
                    let g = [tab.grad[2 * k], tab.grad[2 * k + 1]];
                    // ∇φ = J⁻ᵀ ∇̂φ̂
                    out.grad[2 * k] = inv[0][0] * g[0] + inv[1][0] * g[1];
                    out.grad[2 * k + 1] = inv[0][1] * g[0] + inv[1][1] * g[1];
                }
            }
        }
        out
    }

    /// Pull-back of a physical vector value to the reference element.
    pub fn pull_back(&self, family: Family, v: [f64; 2]) -> [f64; 2] {
        match family {
            Family::RaviartThomas => {
                // v̂ = det J · J⁻¹ v
                [
                    self.det * (self.inv[0][0] * v[0] + self.inv[0][1] * v[1]),
                    self.det * (self.inv[1][0] * v[0] + self.inv[1][1] * v[1]),
                ]
            }
            _ => v,
        }
    }

    /// Outward unit normal, length, start point and direction of local edge `e`.
    pub fn edge(&self, e: usize) -> EdgeGeometry {
        let a = self.corners[(e + 1) % 3];
        let b = self.corners[(e + 2) % 3];
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let sgn = self.det.signum();
        EdgeGeometry {
            normal: [sgn * d[1] / len, -sgn * d[0] / len],
            length: len,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EdgeGeometry {
    pub normal: [f64; 2],
    pub length: f64,
}

/// Reference points along local edge `e` at parameters `s ∈ [0, 1]`.
pub fn edge_points(e: usize, s: &[f64]) -> Vec<[f64; 2]> {
    let a = REF_VERTS[(e + 1) % 3];
    let b = REF_VERTS[(e + 2) % 3];
    s.iter()
        .map(|&t| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
        .collect()
}

/// Physical values and derivatives of `basis` on triangle `geom` at
/// reference points `pts`.
pub fn push_forward(basis: &RefBasis, geom: &ElementGeometry, pts: &[[f64; 2]]) -> Result<Tab> {
    let tab = basis.eval_basis(pts)?;
    Ok(geom.push_forward_tab(basis.family(), &tab))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAMILIES: [Family; 5] = [
        Family::Lagrange,
        Family::LagrangeDg,
        Family::RaviartThomas,
        Family::VectorLagrange,
        Family::VectorLagrangeDg,
    ];

    fn geom() -> ElementGeometry {
        ElementGeometry::new([[0.3, -0.1], [1.4, 0.25], [0.55, 0.9]]).unwrap()
    }

    #[test]
    fn dof_counts() {
        for p in 1..=3 {
            let n = (p + 1) * (p + 2) / 2;
            assert_eq!(RefBasis::new(Family::Lagrange, p).unwrap().ndofs(), n);
            assert_eq!(RefBasis::new(Family::VectorLagrangeDg, p).unwrap().ndofs(), 2 * n);
            assert_eq!(RefBasis::with_components(Family::VectorLagrange, p, 1).unwrap().ndofs(), n);
            assert_eq!(RefBasis::new(Family::RaviartThomas, p).unwrap().ndofs(), p * (p + 2));
        }
        assert!(RefBasis::new(Family::Lagrange, 0).is_err());
        assert!(RefBasis::new(Family::Lagrange, 5).is_err());
    }

    #[test]
    fn p1_kronecker_at_vertices() {
        let b = RefBasis::new(Family::Lagrange, 1).unwrap();
        let t = b.eval_basis(&REF_VERTS).unwrap();
        for i in 0..3 {
            for q in 0..3 {
                assert_eq!(t.val(i, q, 0), if i == q { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn lagrange_kronecker_and_partition_of_unity() {
        for p in 1..=3 {
            let b = RefBasis::new(Family::Lagrange, p).unwrap();
            let t = b.eval_basis(b.nodes()).unwrap();
            for i in 0..b.ndofs() {
                for q in 0..b.ndofs() {
                    let want = if i == q { 1.0 } else { 0.0 };
                    assert!((t.val(i, q, 0) - want).abs() < 1e-12);
                }
            }
            let pts = [[0.2, 0.3], [0.05, 0.9], [0.6, 0.1]];
            let t = b.eval_basis(&pts).unwrap();
            for q in 0..pts.len() {
                let s: f64 = (0..b.ndofs()).map(|i| t.val(i, q, 0)).sum();
                assert!((s - 1.0).abs() < 1e-13);
                for d in 0..2 {
                    let g: f64 = (0..b.ndofs()).map(|i| t.grad(i, q, 0, d)).sum();
                    assert!(g.abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn outside_point_rejected() {
        let b = RefBasis::new(Family::Lagrange, 2).unwrap();
        assert!(matches!(b.eval_basis(&[[0.7, 0.7]]), Err(Error::Argument(_))));
    }

    #[test]
    fn rt1_normal_trace_is_inverse_edge_length() {
        let b = RefBasis::new(Family::RaviartThomas, 1).unwrap();
        for e in 0..3 {
            let a = REF_VERTS[(e + 1) % 3];
            let c = REF_VERTS[(e + 2) % 3];
            let d = [c[0] - a[0], c[1] - a[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let n = [d[1] / len, -d[0] / len];
            let pts = edge_points(e, &[0.1, 0.5, 0.85]);
            let t = b.eval_basis(&pts).unwrap();
            for i in 0..3 {
                for q in 0..pts.len() {
                    let vn = t.val(i, q, 0) * n[0] + t.val(i, q, 1) * n[1];
                    let want = if i == e { 1.0 / len } else { 0.0 };
                    assert!((vn - want).abs() < 1e-13, "i={i} e={e}");
                }
            }
        }
    }

    #[test]
    fn constant_maps_to_constant_and_p1_gradient() {
        let g = ElementGeometry::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = RefBasis::new(Family::Lagrange, 1).unwrap();
        let t = push_forward(&b, &g, &[[0.25, 0.25]]).unwrap();
        assert!((t.grad(0, 0, 0, 0) + 1.0).abs() < 1e-15);
        assert!((t.grad(0, 0, 0, 1) + 1.0).abs() < 1e-15);
        let g = geom();
        for p in 1..=3 {
            let b = RefBasis::new(Family::Lagrange, p).unwrap();
            let t = push_forward(&b, &g, &[[0.1, 0.7], [0.3, 0.3]]).unwrap();
            for q in 0..2 {
                let ones = vec![1.0; b.ndofs()];
                let (v, gr) = t.combine(&ones, q);
                assert!((v[0] - 1.0).abs() < 1e-12);
                assert!(gr[0][0].abs() < 1e-11 && gr[0][1].abs() < 1e-11);
            }
        }
    }

    #[test]
    fn degenerate_triangle_rejected() {
        assert!(matches!(
            ElementGeometry::new([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn rt_divergence_theorem() {
        let g = geom();
        let qr = quad_rule(8).unwrap();
        let lr = line_rule(8);
        for k in 1..=3 {
            let b = RefBasis::new(Family::RaviartThomas, k).unwrap();
            let vol = push_forward(&b, &g, &qr.points).unwrap();
            for i in 0..b.ndofs() {
                let lhs: f64 = (0..qr.len()).map(|q| qr.weights[q] * g.det * vol.div(i, q, 2)).sum();
                let mut rhs = 0.0;
                for e in 0..3 {
                    let eg = g.edge(e);
                    let t = push_forward(&b, &g, &edge_points(e, &lr.points)).unwrap();
                    for q in 0..lr.points.len() {
                        let vn = t.val(i, q, 0) * eg.normal[0] + t.val(i, q, 1) * eg.normal[1];
                        rhs += lr.weights[q] * eg.length * vn;
                    }
                }
                assert!((lhs - rhs).abs() < 1e-12, "k={k} i={i}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let g = geom();
        let pts = [[0.2, 0.2], [0.7, 0.1], [0.1, 0.6], [0.0, 0.0], [0.5, 0.5]];
        for fam in FAMILIES {
            for p in 1..=3 {
                let b = RefBasis::new(fam, p).unwrap();
                // a polynomial in the space: degree p for Lagrange, degree p-1 for RT
                let deg = if fam == Family::RaviartThomas { p - 1 } else { p } as i32;
                let cross = if deg >= 1 { 1.0 } else { 0.0 };
                let f = move |x: [f64; 2]| {
                    let m = (deg - 1).max(0);
                    [
                        0.3 + x[0].powi(deg) - 0.7 * x[1].powi(deg) + 0.2 * cross * x[0] * x[1].powi(m),
                        -1.1 + 0.5 * x[1].powi(deg) + cross * x[0].powi(m) * x[1],
                    ]
                };
                let coeffs = b.reference_dofs(&|xh| g.pull_back(fam, f(g.map(xh))));
                let t = push_forward(&b, &g, &pts).unwrap();
                for (q, xh) in pts.iter().enumerate() {
                    let (v, _) = t.combine(&coeffs, q);
                    let want = f(g.map(*xh));
                    for c in 0..b.ncomp() {
                        assert!((v[c] - want[c]).abs() < 1e-12, "{fam:?} p={p} comp={c}");
                    }
                }
            }
        }
    }

    #[test]
    fn rt_normal_trace_continuous_across_shared_edge() {
        // two triangles sharing the edge (a, b); an RT field given by the
        // same global edge dofs must have equal normal traces there
        let a = [0.2, 0.1];
        let bpt = [0.9, 0.6];
        let g1 = ElementGeometry::new([[0.1, 0.8], a, bpt]).unwrap();
        let g2 = ElementGeometry::new([[0.8, -0.3], bpt, a]).unwrap();
        let s = [0.13, 0.5, 0.77];
        for k in 1..=3 {
            let b = RefBasis::new(Family::RaviartThomas, k).unwrap();
            let t1 = push_forward(&b, &g1, &edge_points(0, &s)).unwrap();
            let s2: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
            let t2 = push_forward(&b, &g2, &edge_points(0, &s2)).unwrap();
            let n = g1.edge(0).normal;
            for m in 0..k {
                // element 2 traverses the edge backwards: sign (-1)^(m+1)
                let sign2 = if m % 2 == 0 { -1.0 } else { 1.0 };
                for q in 0..s.len() {
                    let v1 = t1.val(m, q, 0) * n[0] + t1.val(m, q, 1) * n[1];
                    let v2 = sign2 * (t2.val(m, q, 0) * n[0] + t2.val(m, q, 1) * n[1]);
                    assert!((v1 - v2).abs() < 1e-12, "k={k} m={m}");
                }
            }
        }
    }
}
