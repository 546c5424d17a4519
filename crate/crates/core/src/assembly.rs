//! Global assembly of the coupled residual and Jacobian.
//!
//! The unknown is one flat vector `[U, E]` over the mixed space. The
//! residual rows are
//!
//! ```text
//! E rows:  G E - B(U; ·) + F(·)
//! U rows:  -B'_U(·; E)
//! ```
//!
//! which makes the Jacobian symmetric. Constrained rows are zero and the
//! Jacobian is restricted to the free dofs.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Result;
use crate::forms::{element_system, ElementData, LocalSystem, PhysicalParams, RefTables, VNormScaling};
use crate::solve::{Pattern, SparseOperator};
use crate::space::{DirichletTable, Field, Layout, MixedSpace, ScalarFn};

/// Elements processed per parallel batch.
const CHUNK: usize = 256;

/// Data the residual depends on besides the state.
#[derive(Clone)]
pub struct Problem {
    pub params: PhysicalParams,
    pub scaling: VNormScaling,
    pub source: Option<ScalarFn>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("params", &self.params)
            .field("scaling", &self.scaling)
            .field("source", &self.source.is_some())
            .finish()
    }
}

/// Block pairs with nonzero Jacobian entries.
pub fn coupling(layout: Layout) -> [[bool; 8]; 8] {
    use Field::*;
    let mut m = [[false; 8]; 8];
    let mut set = |a: Field, b: Field| {
        m[a.index()][b.index()] = true;
        m[b.index()][a.index()] = true;
    };
    set(U, U);
    for f in [Psi, Phi, Xi, Eta] {
        set(f, f);
    }
    for f in [U, Q, R] {
        set(Psi, f);
    }
    set(Phi, T);
    if layout == Layout::SpaceTime {
        set(Phi, U);
    }
    set(Xi, U);
    set(Xi, R);
    set(Eta, Q);
    set(Eta, T);
    m
}

/// Assembly context for one mixed space, problem and Dirichlet table.
pub struct Assembler {
    ms: Arc<MixedSpace>,
    tables: RefTables,
    problem: Problem,
    dirichlet: DirichletTable,
    /// Position among free dofs, `usize::MAX` for constrained ones.
    free_index: Vec<usize>,
    source_at: Vec<Vec<f64>>,
    pattern: Arc<Pattern>,
    block_of_local: Vec<usize>,
    coupling: [[bool; 8]; 8],
}

impl Assembler {
    pub fn new(ms: Arc<MixedSpace>, problem: Problem, dirichlet: DirichletTable) -> Result<Self> {
        problem.params.validate()?;
        let tables = RefTables::new(&ms);
        let n = ms.total_dim();
        let mut free_index = vec![usize::MAX; n];
        for (k, &d) in dirichlet.free().iter().enumerate() {
            free_index[d] = k;
        }
        let ne = ms.mesh().num_triangles();
        let source_at = match &problem.source {
            Some(f) => (0..ne)
                .into_par_iter()
                .map(|e| {
                    let g = crate::basis::ElementGeometry::new(ms.mesh().corners(e))?;
                    Ok(tables.rule.points.iter().map(|&p| f(g.map(p))).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?,
            None => Vec::new(),
        };
        let lo = ms.local_offsets();
        let block_of_local: Vec<usize> = (0..lo[8])
            .map(|i| (0..8).find(|&b| i < lo[b + 1]).expect("local index in range"))
            .collect();
        let coupling = coupling(ms.layout());
        let nfree = dirichlet.free().len();
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); nfree];
        for e in 0..ne {
            let dofs = ms.element_dofs(e);
            for (a, &da) in dofs.iter().enumerate() {
                let fa = free_index[da];
                if fa == usize::MAX {
                    continue;
                }
                for (b, &db) in dofs.iter().enumerate() {
                    let fb = free_index[db];
                    if fb != usize::MAX && coupling[block_of_local[a]][block_of_local[b]] {
                        cols[fb].push(fa);
                    }
                }
            }
        }
        let test_start = ms.offset(Field::Psi);
        let split = dirichlet.free().partition_point(|&d| d < test_start);
        let pattern = Arc::new(Pattern::from_columns(nfree, cols).with_split(split));
        Ok(Assembler {
            ms,
            tables,
            problem,
            dirichlet,
            free_index,
            source_at,
            pattern,
            block_of_local,
            coupling,
        })
    }

    pub fn space(&self) -> &MixedSpace {
        &self.ms
    }

    pub fn space_arc(&self) -> &Arc<MixedSpace> {
        &self.ms
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn dirichlet(&self) -> &DirichletTable {
        &self.dirichlet
    }

    pub fn tables(&self) -> &RefTables {
        &self.tables
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn num_free(&self) -> usize {
        self.dirichlet.free().len()
    }

    pub fn element_data(&self, elem: usize) -> Result<ElementData> {
        ElementData::new(&self.ms, &self.tables, elem)
    }

    /// Element kernel output for one element.
    pub fn local_system(&self, elem: usize, state: &[f64]) -> Result<(Vec<usize>, Vec<f64>, LocalSystem)> {
        let ed = self.element_data(elem)?;
        let dofs = self.ms.element_dofs(elem);
        let local: Vec<f64> = dofs.iter().map(|&d| state[d]).collect();
        let src = self.source_at.get(elem).map(Vec::as_slice);
        let sys = element_system(&ed, &self.problem.params, self.problem.scaling, &local, src);
        Ok((dofs, local, sys))
    }

    /// Runs `f` on every element's kernel output, in parallel batches, and
    /// returns the results in element order.
    pub fn map_elements<T: Send>(
        &self,
        state: &[f64],
        f: impl Fn(usize, &[usize], &[f64], &LocalSystem) -> T + Sync,
    ) -> Result<Vec<T>> {
        let ne = self.ms.mesh().num_triangles();
        let mut out = Vec::with_capacity(ne);
        for start in (0..ne).step_by(CHUNK) {
            let end = (start + CHUNK).min(ne);
            let batch: Vec<T> = (start..end)
                .into_par_iter()
                .map(|e| {
                    let (dofs, local, sys) = self.local_system(e, state)?;
                    Ok(f(e, &dofs, &local, &sys))
                })
                .collect::<Result<Vec<T>>>()?;
            out.extend(batch);
        }
        Ok(out)
    }

    /// Full-length residual with constrained rows zeroed.
    pub fn residual(&self, state: &[f64]) -> Result<Vec<f64>> {
        let nu = self.ms.local_offsets()[4];
        let n = self.ms.total_dim();
        let mut res = vec![0.0; n];
        let ne = self.ms.mesh().num_triangles();
        for start in (0..ne).step_by(CHUNK) {
            let end = (start + CHUNK).min(ne);
            let batch = (start..end)
                .into_par_iter()
                .map(|e| {
                    let (dofs, local, sys) = self.local_system(e, state)?;
                    Ok((dofs, sys.residual(&local[nu..])))
                })
                .collect::<Result<Vec<_>>>()?;
            for (dofs, r) in batch {
                for (&d, v) in dofs.iter().zip(r) {
                    res[d] += v;
                }
            }
        }
        for &d in self.dirichlet.entries().keys() {
            res[d] = 0.0;
        }
        Ok(res)
    }

    /// Residual and free-dof Jacobian in one pass.
    pub fn system(&self, state: &[f64], gauss_newton: bool) -> Result<(Vec<f64>, SparseOperator)> {
        let nu = self.ms.local_offsets()[4];
        let n = self.ms.total_dim();
        let mut res = vec![0.0; n];
        let mut jac = SparseOperator::zeros(self.pattern.clone());
        jac.symmetric = true;
        let ne = self.ms.mesh().num_triangles();
        for start in (0..ne).step_by(CHUNK) {
            let end = (start + CHUNK).min(ne);
            let batch = (start..end)
                .into_par_iter()
                .map(|e| {
                    let (dofs, local, sys) = self.local_system(e, state)?;
                    Ok((dofs, sys.residual(&local[nu..]), sys.jacobian(gauss_newton)))
                })
                .collect::<Result<Vec<_>>>()?;
            for (dofs, r, j) in batch {
                let m = dofs.len();
                for (&d, v) in dofs.iter().zip(r) {
                    res[d] += v;
                }
                for (a, &da) in dofs.iter().enumerate() {
                    let fa = self.free_index[da];
                    if fa == usize::MAX {
                        continue;
                    }
                    let ba = self.block_of_local[a];
                    for (b, &db) in dofs.iter().enumerate() {
                        let fb = self.free_index[db];
                        if fb == usize::MAX || !self.coupling[ba][self.block_of_local[b]] {
                            continue;
                        }
                        let v = j[a * m + b];
                        if v != 0.0 {
                            jac.add(fa, fb, v);
                        }
                    }
                }
            }
        }
        for &d in self.dirichlet.entries().keys() {
            res[d] = 0.0;
        }
        Ok((res, jac))
    }

    pub fn assemble_jacobian(&self, state: &[f64], gauss_newton: bool) -> Result<SparseOperator> {
        self.system(state, gauss_newton).map(|(_, j)| j)
    }

    /// Restriction of a full vector to the free dofs.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.dirichlet.free().iter().map(|&d| full[d]).collect()
    }

    /// Adds `alpha * delta` (free-dof vector) to `state`.
    pub fn axpy_free(&self, state: &mut [f64], alpha: f64, delta: &[f64]) {
        for (&d, v) in self.dirichlet.free().iter().zip(delta) {
            state[d] += alpha * v;
        }
    }

    /// `‖E‖²_V` and `B(U; E) - F(E)` summed over elements.
    pub fn estimator_identity(&self, state: &[f64]) -> Result<(f64, f64)> {
        let nu = self.ms.local_offsets()[4];
        let parts = self.map_elements(state, |_, _, local, sys| {
            let e = &local[nu..];
            let ne = e.len();
            let mut g = 0.0;
            let mut b = 0.0;
            for i in 0..ne {
                b += sys.b_minus_f[i] * e[i];
                for j in 0..ne {
                    g += e[i] * sys.gram[i * ne + j] * e[j];
                }
            }
            (g, b)
        })?;
        Ok(parts.iter().fold((0.0, 0.0), |(a, b), (g, h)| (a + g, b + h)))
    }
}

/// Squared element indicators `E_mᵀ G_m E_m`.
pub fn squared_indicators(asm: &Assembler, state: &[f64]) -> Result<Vec<f64>> {
    let ms = asm.space();
    let lo = ms.local_offsets();
    let ne = ms.mesh().num_triangles();
    let scaling = asm.problem().scaling;
    let mut out = Vec::with_capacity(ne);
    for start in (0..ne).step_by(CHUNK) {
        let end = (start + CHUNK).min(ne);
        let batch = (start..end)
            .into_par_iter()
            .map(|e| {
                let ed = asm.element_data(e)?;
                let g = crate::forms::eval_vnorm_gram(&ed, scaling);
                let dofs = ms.element_dofs(e);
                let ev: Vec<f64> = dofs[lo[4]..].iter().map(|&d| state[d]).collect();
                let v = nalgebra::DVector::from_vec(ev);
                Ok((v.transpose() * &g * &v)[(0, 0)].max(0.0))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.extend(batch);
    }
    Ok(out)
}
