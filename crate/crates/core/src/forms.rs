//! Element-level variational forms.
//!
//! With trial fields `U = (u, q, r, t)` and test fields `V = (v, w, s, p)`
//! the form on one element `K` is
//!
//! ```text
//! B(U; V) = ∫_K (∇ₛu - r)·s + (∇ₛq - t)·p + (N(u) - q) v + λ r·∇ₛv
//!               - [∂ₜu w] - D t·∇ₛw
//!         + ∮_∂K D (t·nₛ) w - λ (r·nₛ) v
//! ```
//!
//! where `∇ₛ` is the spatial gradient, `N(u) = u³ - u` (or `-u` in linear
//! mode) and the bracketed time derivative only appears in space-time
//! runs. The load is `F(V) = ∫_K f w`. Test functions `(v, w, s, p)` live in
//! the error-representation blocks `(ψ, φ, ξ, η)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{edge_points, line_rule, quad_rule_capped, ElementGeometry, LineRule, QuadRule, Tab};
use crate::error::{Error, Result};
use crate::space::{Field, Layout, MixedSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub d: f64,
    pub lambda: f64,
    /// Replace `u³ - u` by `-u`.
    #[serde(default)]
    pub linear: bool,
}

impl PhysicalParams {
    pub fn new(d: f64, lambda: f64, linear: bool) -> Result<Self> {
        let p = PhysicalParams { d, lambda, linear };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) || !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "D and lambda must be positive (got D = {}, lambda = {})",
                self.d, self.lambda
            )));
        }
        Ok(())
    }

    /// `N(u)`, `N'(u)` and `N''(u)`.
    #[inline]
    pub fn reaction(&self, u: f64) -> (f64, f64, f64) {
        if self.linear {
            (-u, -1.0, 0.0)
        } else {
            (u * u * u - u, 3.0 * u * u - 1.0, 6.0 * u)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VNormScaling {
    /// Gradient terms weighted by `h²`.
    #[default]
    Scaled,
    /// Plain `L²` on every component.
    Plain,
}

/// Volume quadrature exactness for degree `p` trial and `p + enrichment`
/// test functions: enough for `u³ v`, at least `2p + 3`.
pub fn volume_exactness(p: usize, enrichment: usize) -> usize {
    (2 * p + 3).max(4 * p + enrichment)
}

/// Reference tabulations of all eight blocks at the volume and edge rules.
#[derive(Debug, Clone)]
pub struct RefTables {
    pub rule: &'static QuadRule,
    pub line: LineRule,
    vol: Vec<Tab>,
    edges: Vec<Vec<Tab>>,
}

impl RefTables {
    pub fn new(ms: &MixedSpace) -> Self {
        Self::with_exactness(ms, volume_exactness(ms.degree(), ms.enrichment()))
    }

    pub fn with_exactness(ms: &MixedSpace, exactness: usize) -> Self {
        let rule = quad_rule_capped(exactness);
        let line = line_rule(exactness);
        let vol = Field::ALL
            .iter()
            .map(|&f| ms.block(f).basis().eval_unchecked(&rule.points))
            .collect();
        let edges = (0..3)
            .map(|e| {
                let pts = edge_points(e, &line.points);
                Field::ALL
                    .iter()
                    .map(|&f| ms.block(f).basis().eval_unchecked(&pts))
                    .collect()
            })
            .collect();
        RefTables { rule, line, vol, edges }
    }
}

/// Physical tabulations of the element's global shape functions.
#[derive(Debug, Clone)]
pub struct ElementData {
    pub elem: usize,
    pub geom: ElementGeometry,
    pub h: f64,
    /// Spatial dimension: gradients, normals and vector fields use the
    /// first `ds` components.
    pub ds: usize,
    pub space_time: bool,
    /// Quadrature weights times `|det J|`.
    pub wq: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub vol: Vec<Tab>,
    pub edges: Vec<EdgeData>,
    /// Local block sizes and offsets in block order.
    pub nloc: [usize; 8],
    pub loff: [usize; 9],
}

#[derive(Debug, Clone)]
pub struct EdgeData {
    pub normal: [f64; 2],
    /// Line weights times edge length.
    pub wq: Vec<f64>,
    pub tabs: Vec<Tab>,
}

impl ElementData {
    pub fn new(ms: &MixedSpace, tables: &RefTables, elem: usize) -> Result<Self> {
        let geom = ElementGeometry::new(ms.mesh().corners(elem))?;
        let push = |f: Field, t: &Tab| {
            let b = ms.block(f);
            let mut tab = geom.push_forward_tab(b.family(), t);
            tab.scale_rows(b.signs(elem));
            tab
        };
        let vol = Field::ALL.iter().zip(&tables.vol).map(|(&f, t)| push(f, t)).collect();
        let edges = (0..3)
            .map(|e| {
                let eg = geom.edge(e);
                EdgeData {
                    normal: eg.normal,
                    wq: tables.line.weights.iter().map(|w| w * eg.length).collect(),
                    tabs: Field::ALL.iter().zip(&tables.edges[e]).map(|(&f, t)| push(f, t)).collect(),
                }
            })
            .collect();
        let mut nloc = [0; 8];
        let mut loff = [0; 9];
        for f in Field::ALL {
            nloc[f.index()] = ms.block(f).nloc();
            loff[f.index() + 1] = loff[f.index()] + nloc[f.index()];
        }
        Ok(ElementData {
            elem,
            h: geom.diameter,
            ds: ms.layout().spatial_dims(),
            space_time: ms.layout() == Layout::SpaceTime,
            wq: tables.rule.weights.iter().map(|w| w * geom.det.abs()).collect(),
            points: tables.rule.points.iter().map(|&p| geom.map(p)).collect(),
            geom,
            vol,
            edges,
            nloc,
            loff,
        })
    }

    pub fn tab(&self, f: Field) -> &Tab {
        &self.vol[f.index()]
    }

    /// Local trial dof count `(u, q, r, t)`.
    pub fn n_trial(&self) -> usize {
        self.loff[4]
    }

    /// Local error-representation dof count `(ψ, φ, ξ, η)`.
    pub fn n_test(&self) -> usize {
        self.loff[8] - self.loff[4]
    }
}

/// Values of one field at a point: value components and full gradients.
#[derive(Debug, Clone, Copy, Default)]
struct Pt {
    v: [f64; 2],
    g: [[f64; 2]; 2],
}

fn at(tab: &Tab, c: &[f64], q: usize) -> Pt {
    let (v, g) = tab.combine(c, q);
    Pt { v, g }
}

#[inline]
fn dot_s(a: &[f64; 2], b: &[f64; 2], ds: usize) -> f64 {
    (0..ds).map(|k| a[k] * b[k]).sum()
}

/// Shared integrand of `B` and `B'`: `reaction(q)` supplies the value at
/// volume point `q` of `N(u)` (for `B`) or `N'(u) a` (for `B'`).
fn form_core(
    ed: &ElementData,
    params: &PhysicalParams,
    trial: [&[f64]; 4],
    test: [&[f64]; 4],
    reaction: &dyn Fn(usize) -> f64,
) -> f64 {
    let ds = ed.ds;
    let (lam, d) = (params.lambda, params.d);
    let mut acc = 0.0;
    for (q, &w) in ed.wq.iter().enumerate() {
        let u = at(ed.tab(Field::U), trial[0], q);
        let qq = at(ed.tab(Field::Q), trial[1], q);
        let r = at(ed.tab(Field::R), trial[2], q);
        let t = at(ed.tab(Field::T), trial[3], q);
        let v = at(ed.tab(Field::Psi), test[0], q);
        let wv = at(ed.tab(Field::Phi), test[1], q);
        let s = at(ed.tab(Field::Xi), test[2], q);
        let p = at(ed.tab(Field::Eta), test[3], q);
        let mut val = 0.0;
        for k in 0..ds {
            val += (u.g[0][k] - r.v[k]) * s.v[k];
            val += (qq.g[0][k] - t.v[k]) * p.v[k];
        }
        val += (reaction(q) - qq.v[0]) * v.v[0];
        val += lam * dot_s(&r.v, &v.g[0], ds);
        if ed.space_time {
            val -= u.g[0][1] * wv.v[0];
        }
        val -= d * dot_s(&t.v, &wv.g[0], ds);
        acc += w * val;
    }
    acc + skeleton_core(ed, params, [trial[2], trial[3]], [test[0], test[1]])
}

/// Edge terms `∮ D (t·nₛ) w - λ (r·nₛ) v` for fluxes `(r, t)` and tests `(v, w)`.
fn skeleton_core(ed: &ElementData, params: &PhysicalParams, flux: [&[f64]; 2], test: [&[f64]; 2]) -> f64 {
    let ds = ed.ds;
    let mut acc = 0.0;
    for e in &ed.edges {
        for (q, &w) in e.wq.iter().enumerate() {
            let r = at(&e.tabs[Field::R.index()], flux[0], q);
            let t = at(&e.tabs[Field::T.index()], flux[1], q);
            let v = at(&e.tabs[Field::Psi.index()], test[0], q);
            let wv = at(&e.tabs[Field::Phi.index()], test[1], q);
            acc += w
                * (params.d * dot_s(&t.v, &e.normal, ds) * wv.v[0]
                    - params.lambda * dot_s(&r.v, &e.normal, ds) * v.v[0]);
        }
    }
    acc
}

/// `B((u,q,r,t); (v,w,s,p))` on one element including its edge terms.
pub fn eval_b_local(ed: &ElementData, params: &PhysicalParams, trial: [&[f64]; 4], test: [&[f64]; 4]) -> f64 {
    let tu = ed.tab(Field::U);
    form_core(ed, params, trial, test, &|q| {
        let u = at(tu, trial[0], q).v[0];
        params.reaction(u).0
    })
}

/// Gateaux derivative `B'_u((a,b,c,d); (ψ,φ,ξ,η))` at state `u`.
pub fn eval_bprime_local(
    ed: &ElementData,
    params: &PhysicalParams,
    state_u: &[f64],
    dir: [&[f64]; 4],
    test: [&[f64]; 4],
) -> f64 {
    let tu = ed.tab(Field::U);
    form_core(ed, params, dir, test, &|q| {
        let u = at(tu, state_u, q).v[0];
        let a = at(tu, dir[0], q).v[0];
        params.reaction(u).1 * a
    })
}

/// Edge part of `B` alone.
pub fn eval_skeleton_local(ed: &ElementData, params: &PhysicalParams, flux: [&[f64]; 2], test: [&[f64]; 2]) -> f64 {
    skeleton_core(ed, params, flux, test)
}

/// `F(w) = ∫ f w` with `f` sampled at the element's quadrature points.
pub fn eval_load(ed: &ElementData, f_at_points: &[f64], w: &[f64]) -> f64 {
    let tab = ed.tab(Field::Phi);
    ed.wq
        .iter()
        .enumerate()
        .map(|(q, &wq)| wq * f_at_points[q] * at(tab, w, q).v[0])
        .sum()
}

/// Gram matrix of the broken test inner product over the element's
/// `(ψ, φ, ξ, η)` dofs.
pub fn eval_vnorm_gram(ed: &ElementData, scaling: VNormScaling) -> DMatrix<f64> {
    let n = ed.n_test();
    let base = ed.loff[4];
    let h2 = match scaling {
        VNormScaling::Scaled => ed.h * ed.h,
        VNormScaling::Plain => 0.0,
    };
    let mut g = DMatrix::zeros(n, n);
    for f in [Field::Psi, Field::Phi, Field::Xi, Field::Eta] {
        let tab = ed.tab(f);
        let off = ed.loff[f.index()] - base;
        let scalar = matches!(f, Field::Psi | Field::Phi);
        for (q, &w) in ed.wq.iter().enumerate() {
            for i in 0..tab.nbf {
                for j in 0..=i {
                    let mut val = 0.0;
                    for c in 0..tab.ncomp {
                        val += tab.val(i, q, c) * tab.val(j, q, c);
                    }
                    if scalar && h2 > 0.0 {
                        for k in 0..2 {
                            val += h2 * tab.grad(i, q, 0, k) * tab.grad(j, q, 0, k);
                        }
                    }
                    g[(off + i, off + j)] += w * val;
                }
            }
        }
    }
    g.fill_upper_triangle_with_lower_triangle();
    g
}

/// Gram matrix of the trial norm: `H¹` for `u, q` and `H(div)` in the
/// spatial variables for `r, t`.
pub fn eval_unorm_gram(ed: &ElementData) -> DMatrix<f64> {
    let n = ed.n_trial();
    let ds = ed.ds;
    let mut g = DMatrix::zeros(n, n);
    for f in [Field::U, Field::Q, Field::R, Field::T] {
        let tab = ed.tab(f);
        let off = ed.loff[f.index()];
        let scalar = matches!(f, Field::U | Field::Q);
        for (q, &w) in ed.wq.iter().enumerate() {
            for i in 0..tab.nbf {
                for j in 0..=i {
                    let mut val = 0.0;
                    for c in 0..tab.ncomp {
                        val += tab.val(i, q, c) * tab.val(j, q, c);
                    }
                    if scalar {
                        for k in 0..2 {
                            val += tab.grad(i, q, 0, k) * tab.grad(j, q, 0, k);
                        }
                    } else {
                        val += tab.div(i, q, ds) * tab.div(j, q, ds);
                    }
                    g[(off + i, off + j)] += w * val;
                }
            }
        }
    }
    g.fill_upper_triangle_with_lower_triangle();
    g
}

/// Element contributions to the coupled residual and Jacobian.
#[derive(Debug, Clone)]
pub struct LocalSystem {
    pub n_trial: usize,
    pub n_test: usize,
    /// `B'_U(a_j; e_i)`, volume part, row-major `n_test × n_trial`.
    pub bprime_vol: Vec<f64>,
    /// Edge part of the same matrix.
    pub bprime_skel: Vec<f64>,
    /// `B(U; e_i) - F(e_i)`.
    pub b_minus_f: Vec<f64>,
    /// Test-space Gram matrix, row-major.
    pub gram: Vec<f64>,
    /// `∫ N''(u) ψ a_j a_k` over the `u` block, row-major.
    pub hessian: Vec<f64>,
}

impl LocalSystem {
    #[inline]
    pub fn bprime(&self, i: usize, j: usize) -> f64 {
        let k = i * self.n_trial + j;
        self.bprime_vol[k] + self.bprime_skel[k]
    }

    /// Residual rows: `G E - (B(U; e) - F(e))` for the test block and
    /// `-B'_U(a; E)` for the trial block, in element-local order.
    pub fn residual(&self, e_local: &[f64]) -> Vec<f64> {
        let (nu, ne) = (self.n_trial, self.n_test);
        let mut res = vec![0.0; nu + ne];
        for i in 0..ne {
            let mut acc = -self.b_minus_f[i];
            for j in 0..ne {
                acc += self.gram[i * ne + j] * e_local[j];
            }
            res[nu + i] = acc;
            let ei = e_local[i];
            if ei != 0.0 {
                for j in 0..nu {
                    res[j] -= self.bprime(i, j) * ei;
                }
            }
        }
        res
    }

    /// Dense local Jacobian `[[-H, -B'ᵀ], [-B', G]]` in element-local order
    /// (trial block first). `gauss_newton` drops `H`.
    pub fn jacobian(&self, gauss_newton: bool) -> Vec<f64> {
        let (nu, ne) = (self.n_trial, self.n_test);
        let n = nu + ne;
        let mut jac = vec![0.0; n * n];
        let nuu = (self.hessian.len() as f64).sqrt() as usize;
        if !gauss_newton {
            for a in 0..nuu {
                for b in 0..nuu {
                    jac[a * n + b] = -self.hessian[a * nuu + b];
                }
            }
        }
        for i in 0..ne {
            for j in 0..nu {
                let v = -self.bprime(i, j);
                jac[(nu + i) * n + j] = v;
                jac[j * n + nu + i] = v;
            }
            for j in 0..ne {
                jac[(nu + i) * n + nu + j] = self.gram[i * ne + j];
            }
        }
        jac
    }
}

/// Vectorized element kernel: every test-basis evaluation of `B`, `B'`
/// and the load at once. `local` holds the element coefficients of all
/// eight blocks; `source` the load at the quadrature points (`None` for
/// zero).
pub fn element_system(
    ed: &ElementData,
    params: &PhysicalParams,
    scaling: VNormScaling,
    local: &[f64],
    source: Option<&[f64]>,
) -> LocalSystem {
    let nu = ed.n_trial();
    let ne = ed.n_test();
    let ds = ed.ds;
    let lo = ed.loff;
    let base = lo[4];
    let (lam, dcoef) = (params.lambda, params.d);
    let mut bv = vec![0.0; ne * nu];
    let mut bs = vec![0.0; ne * nu];
    let mut nvec = vec![0.0; ne];
    let nuu = ed.nloc[0];
    let mut hess = vec![0.0; nuu * nuu];

    let tu = ed.tab(Field::U);
    let tq = ed.tab(Field::Q);
    let tr = ed.tab(Field::R);
    let tt = ed.tab(Field::T);
    let tpsi = ed.tab(Field::Psi);
    let tphi = ed.tab(Field::Phi);
    let txi = ed.tab(Field::Xi);
    let teta = ed.tab(Field::Eta);
    let cu = &local[lo[0]..lo[1]];
    let cpsi = &local[lo[4]..lo[5]];

    let row = |f: Field, i: usize| lo[f.index()] - base + i;
    let col = |f: Field, j: usize| lo[f.index()] + j;

    for (q, &w) in ed.wq.iter().enumerate() {
        let uval = at(tu, cu, q).v[0];
        let psi = at(tpsi, cpsi, q).v[0];
        let (nu_val, nprime, nsecond) = params.reaction(uval);
        // ψ rows: (N(u) - q) v + λ r·∇ₛv
        for i in 0..tpsi.nbf {
            let vi = tpsi.val(i, q, 0);
            let gvi = [tpsi.grad(i, q, 0, 0), tpsi.grad(i, q, 0, 1)];
            let ri = row(Field::Psi, i) * nu;
            nvec[row(Field::Psi, i)] += w * nu_val * vi;
            for j in 0..tu.nbf {
                bv[ri + col(Field::U, j)] += w * nprime * tu.val(j, q, 0) * vi;
            }
            for j in 0..tq.nbf {
                bv[ri + col(Field::Q, j)] -= w * tq.val(j, q, 0) * vi;
            }
            for j in 0..tr.nbf {
                let mut s = 0.0;
                for k in 0..ds {
                    s += tr.val(j, q, k) * gvi[k];
                }
                bv[ri + col(Field::R, j)] += w * lam * s;
            }
        }
        // φ rows: -∂ₜu w - D t·∇ₛw
        for i in 0..tphi.nbf {
            let wi = tphi.val(i, q, 0);
            let gwi = [tphi.grad(i, q, 0, 0), tphi.grad(i, q, 0, 1)];
            let ri = row(Field::Phi, i) * nu;
            if ed.space_time {
                for j in 0..tu.nbf {
                    bv[ri + col(Field::U, j)] -= w * tu.grad(j, q, 0, 1) * wi;
                }
            }
            for j in 0..tt.nbf {
                let mut s = 0.0;
                for k in 0..ds {
                    s += tt.val(j, q, k) * gwi[k];
                }
                bv[ri + col(Field::T, j)] -= w * dcoef * s;
            }
        }
        // ξ rows: (∇ₛu - r)·s, η rows: (∇ₛq - t)·p
        for (ftest, tx, fs, ts, ff, tf) in [
            (Field::Xi, txi, Field::U, tu, Field::R, tr),
            (Field::Eta, teta, Field::Q, tq, Field::T, tt),
        ] {
            for i in 0..tx.nbf {
                let si = [tx.val(i, q, 0), if ds > 1 { tx.val(i, q, 1) } else { 0.0 }];
                let ri = row(ftest, i) * nu;
                for j in 0..ts.nbf {
                    let mut s = 0.0;
                    for k in 0..ds {
                        s += ts.grad(j, q, 0, k) * si[k];
                    }
                    bv[ri + col(fs, j)] += w * s;
                }
                for j in 0..tf.nbf {
                    let mut s = 0.0;
                    for k in 0..ds {
                        s += tf.val(j, q, k) * si[k];
                    }
                    bv[ri + col(ff, j)] -= w * s;
                }
            }
        }
        if nsecond != 0.0 && psi != 0.0 {
            let c = w * nsecond * psi;
            for a in 0..nuu {
                let ua = c * tu.val(a, q, 0);
                for b in 0..nuu {
                    hess[a * nuu + b] += ua * tu.val(b, q, 0);
                }
            }
        }
    }

    for e in &ed.edges {
        let er = &e.tabs[Field::R.index()];
        let et = &e.tabs[Field::T.index()];
        let epsi = &e.tabs[Field::Psi.index()];
        let ephi = &e.tabs[Field::Phi.index()];
        for (q, &w) in e.wq.iter().enumerate() {
            let rn: Vec<f64> = (0..er.nbf)
                .map(|j| (0..ds).map(|k| er.val(j, q, k) * e.normal[k]).sum())
                .collect();
            let tn: Vec<f64> = (0..et.nbf)
                .map(|j| (0..ds).map(|k| et.val(j, q, k) * e.normal[k]).sum())
                .collect();
            for i in 0..epsi.nbf {
                let c = -w * lam * epsi.val(i, q, 0);
                let ri = row(Field::Psi, i) * nu;
                for (j, rnj) in rn.iter().enumerate() {
                    bs[ri + col(Field::R, j)] += c * rnj;
                }
            }
            for i in 0..ephi.nbf {
                let c = w * dcoef * ephi.val(i, q, 0);
                let ri = row(Field::Phi, i) * nu;
                for (j, tnj) in tn.iter().enumerate() {
                    bs[ri + col(Field::T, j)] += c * tnj;
                }
            }
        }
    }

    // B(U; e_i) = (B0 U)_i + ∫ N(u) e_i; the u-column of bv carries N'(u)
    // rather than a state-independent part, so it is skipped here.
    let trial = &local[..nu];
    let mut b_minus_f = nvec;
    for i in 0..ne {
        let mut acc = 0.0;
        for j in nuu..nu {
            acc += (bv[i * nu + j] + bs[i * nu + j]) * trial[j];
        }
        b_minus_f[i] += acc;
    }
    if ed.space_time {
        // -∂ₜu w is linear in u and lives in the u-column of the φ rows
        for i in 0..tphi.nbf {
            let ri = row(Field::Phi, i);
            let mut acc = 0.0;
            for j in 0..nuu {
                acc += bv[ri * nu + j] * trial[j];
            }
            b_minus_f[ri] += acc;
        }
    }
    // ξ rows see u through ∇ₛu
    for i in 0..txi.nbf {
        let ri = row(Field::Xi, i);
        let mut acc = 0.0;
        for j in 0..nuu {
            acc += bv[ri * nu + j] * trial[j];
        }
        b_minus_f[ri] += acc;
    }
    if let Some(f) = source {
        for i in 0..tphi.nbf {
            let ri = row(Field::Phi, i);
            let mut acc = 0.0;
            for (q, &w) in ed.wq.iter().enumerate() {
                acc += w * f[q] * tphi.val(i, q, 0);
            }
            b_minus_f[ri] -= acc;
        }
    }

    let g = eval_vnorm_gram(ed, scaling);
    LocalSystem {
        n_trial: nu,
        n_test: ne,
        bprime_vol: bv,
        bprime_skel: bs,
        b_minus_f,
        gram: g.transpose().as_slice().to_vec(),
        hessian: hess,
    }
}
