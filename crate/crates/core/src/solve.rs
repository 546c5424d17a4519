//! Compressed sparse column operators and the direct sparse solver.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::linalg::solvers::Solve;
use faer::perm::PermRef;
use faer::sparse::linalg::amd;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, CholeskySymbolicParams, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use crate::error::{Error, Result};

/// Relative residual every successful solve meets.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Sorted row indices per column, shared by operators on the same mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Indices at or above this one form a block that a symmetric
    /// factorization eliminates first.
    split: Option<usize>,
}

impl Pattern {
    /// Builds a pattern from unsorted, possibly repeated rows per column.
    pub fn from_columns(n: usize, mut cols: Vec<Vec<usize>>) -> Self {
        assert_eq!(cols.len(), n);
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for c in cols.iter_mut() {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        Pattern {
            n,
            col_ptr,
            row_idx,
            split: None,
        }
    }

    /// Marks `split..n` as the block to eliminate first in symmetric solves.
    pub fn with_split(mut self, split: usize) -> Self {
        assert!(split <= self.n);
        self.split = Some(split);
        self
    }

    pub fn split(&self) -> Option<usize> {
        self.split
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Position of entry `(i, j)` in the value array.
    #[inline]
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.row_idx[a..b].binary_search(&i).ok().map(|k| a + k)
    }

    fn symbolic_ref(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }
}

/// Square sparse matrix in compressed column form.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
    /// Set when the operator is symmetric by construction.
    pub symmetric: bool,
}

impl SparseOperator {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let nnz = pattern.nnz();
        SparseOperator {
            pattern,
            values: vec![0.0; nnz],
            symmetric: false,
        }
    }

    /// Sums duplicate triplets.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut cols = vec![Vec::new(); n];
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(Error::Argument(format!("entry ({i}, {j}) outside {n} x {n}")));
            }
            cols[j].push(i);
        }
        let mut op = SparseOperator::zeros(Arc::new(Pattern::from_columns(n, cols)));
        for &(i, j, v) in triplets {
            op.add(i, j, v);
        }
        Ok(op)
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        let mut op = SparseOperator::from_triplets(n, &t).expect("indices in range");
        op.symmetric = true;
        op
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .pattern
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) is not in the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &*self.pattern;
        let mut y = vec![0.0; p.n];
        for j in 0..p.n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                y[p.row_idx[k]] += self.values[k] * xj;
            }
        }
        y
    }

    /// Column-major dense copy.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let p = &*self.pattern;
        let mut m = nalgebra::DMatrix::zeros(p.n, p.n);
        for j in 0..p.n {
            for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                m[(p.row_idx[k], j)] += self.values[k];
            }
        }
        m
    }

    /// `max |A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let p = &*self.pattern;
        let mut worst: f64 = 0.0;
        for j in 0..p.n {
            for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                let i = p.row_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Symmetric Ruiz scaling in place: `A <- S A S` with positive diagonal
    /// `S` chosen so every row and column has max-norm close to one.
    /// Returns the diagonal of `S`.
    pub fn equilibrate(&mut self, passes: usize) -> Vec<f64> {
        let p = self.pattern.clone();
        let mut scale = vec![1.0; p.n];
        for _ in 0..passes {
            let mut rmax = vec![0.0f64; p.n];
            for j in 0..p.n {
                for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                    let i = p.row_idx[k];
                    let a = self.values[k].abs();
                    rmax[i] = rmax[i].max(a);
                    rmax[j] = rmax[j].max(a);
                }
            }
            let d: Vec<f64> = rmax.iter().map(|&m| if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 }).collect();
            for j in 0..p.n {
                for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                    self.values[k] *= d[p.row_idx[k]] * d[j];
                }
            }
            for (s, x) in scale.iter_mut().zip(&d) {
                *s *= x;
            }
        }
        scale
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Elimination order for a symmetric pattern with a trailing block: the
/// trailing indices in natural order, then the leading ones by approximate
/// minimum degree on the pattern left after eliminating the trailing block.
pub fn split_ordering(p: &Pattern, split: usize) -> Result<Vec<usize>> {
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); split];
    for j in 0..split {
        for &i in &p.row_idx[p.col_ptr[j]..p.col_ptr[j + 1]] {
            if i < split {
                cols[j].push(i);
            }
        }
    }
    for j in split..p.n {
        let lead: Vec<usize> = p.row_idx[p.col_ptr[j]..p.col_ptr[j + 1]].iter().copied().filter(|&i| i < split).collect();
        for &a in &lead {
            cols[a].extend_from_slice(&lead);
        }
    }
    let reduced = Pattern::from_columns(split, cols);
    let mut fwd = vec![0usize; split];
    let mut inv = vec![0usize; split];
    if split > 0 {
        let nnz = reduced.nnz();
        let mut mem = MemBuffer::new(amd::order_scratch::<usize>(split, nnz));
        amd::order(&mut fwd, &mut inv, reduced.symbolic_ref(), amd::Control::default(), MemStack::new(&mut mem))
            .map_err(|e| Error::Solver(format!("ordering failed: {e:?}")))?;
    }
    let mut order: Vec<usize> = (split..p.n).collect();
    order.extend_from_slice(&fwd);
    Ok(order)
}

/// Statistics of one linear solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveStats {
    pub dim: usize,
    pub nnz: usize,
    pub refinement_steps: usize,
    pub relative_residual: f64,
}

enum Symbolic {
    Lu(SymbolicLu<usize>),
    Ldlt(SymbolicCholesky<usize>),
}

/// Direct sparse solver that reuses its symbolic factorization while the
/// sparsity pattern stays the same. Symmetric operators whose pattern
/// carries a split are factored as `LDLᵀ` with the trailing block first;
/// everything else, and any `LDLᵀ` that misses the tolerance, goes through
/// LU.
#[derive(Default)]
pub struct LuSolver {
    cached: Option<(Arc<Pattern>, Symbolic)>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl LuSolver {
    pub fn new() -> Self {
        LuSolver { cached: None }
    }

    pub fn solve(&mut self, op: &SparseOperator, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let n = op.dim();
        if rhs.len() != n {
            return Err(Error::Argument(format!("rhs length {} for a {n} x {n} operator", rhs.len())));
        }
        let mut stats = SolveStats {
            dim: n,
            nnz: op.nnz(),
            ..Default::default()
        };
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok((vec![0.0; n], stats));
        }
        if !op.is_finite() || !rhs.iter().all(|v| v.is_finite()) {
            return Err(Error::Solver("non-finite entries in the linear system".into()));
        }
        let pattern = op.pattern().clone();
        let use_ldlt = op.symmetric && pattern.split.is_some();
        let reuse = matches!(&self.cached, Some((p, sym))
            if (Arc::ptr_eq(p, &pattern) || **p == *pattern) && matches!(sym, Symbolic::Ldlt(_)) == use_ldlt);
        if !reuse {
            let sym = if use_ldlt {
                Symbolic::Ldlt(symbolic_ldlt(&pattern)?)
            } else {
                Symbolic::Lu(symbolic_lu(&pattern)?)
            };
            self.cached = Some((pattern.clone(), sym));
        }
        if let Some((_, Symbolic::Ldlt(sym))) = &self.cached {
            if let Some((x, s)) = ldlt_solve(sym, op, rhs, bnorm) {
                if s.relative_residual <= SOLVE_TOLERANCE {
                    stats.refinement_steps = s.refinement_steps;
                    stats.relative_residual = s.relative_residual;
                    return Ok((x, stats));
                }
            }
            self.cached = Some((pattern.clone(), Symbolic::Lu(symbolic_lu(&pattern)?)));
        }
        let Some((_, Symbolic::Lu(symbolic))) = &self.cached else {
            unreachable!("LU symbolic factorization cached above")
        };
        let mat = SparseColMatRef::new(pattern.symbolic_ref(), &op.values);
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), mat)
            .map_err(|e| Error::Solver(format!("numeric factorization failed: {e:?}")))?;
        let (x, steps, rel) = refine(op, rhs, bnorm, |v| {
            lu.solve_in_place(MatMut::from_column_major_slice_mut(v, n, 1));
        });
        stats.refinement_steps = steps;
        stats.relative_residual = rel;
        if !(rel <= SOLVE_TOLERANCE) {
            return Err(Error::Solver(format!(
                "relative residual {rel:.3e} exceeds {SOLVE_TOLERANCE:e} after LU with refinement (singular or ill-conditioned pivot)"
            )));
        }
        Ok((x, stats))
    }
}

fn symbolic_lu(p: &Pattern) -> Result<SymbolicLu<usize>> {
    SymbolicLu::try_new(p.symbolic_ref()).map_err(|e| Error::Solver(format!("symbolic factorization failed: {e:?}")))
}

fn symbolic_ldlt(p: &Pattern) -> Result<SymbolicCholesky<usize>> {
    let split = p.split.expect("split pattern");
    let fwd = split_ordering(p, split)?;
    let mut inv = vec![0usize; p.n];
    for (k, &i) in fwd.iter().enumerate() {
        inv[i] = k;
    }
    let perm = PermRef::new_checked(&fwd, &inv, p.n);
    factorize_symbolic_cholesky(
        p.symbolic_ref(),
        Side::Lower,
        SymmetricOrdering::Custom(perm),
        CholeskySymbolicParams::default(),
    )
    .map_err(|e| Error::Solver(format!("symbolic factorization failed: {e:?}")))
}

/// `LDLᵀ` without pivoting; `None` when the factorization breaks down.
fn ldlt_solve(sym: &SymbolicCholesky<usize>, op: &SparseOperator, rhs: &[f64], bnorm: f64) -> Option<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    let mat = SparseColMatRef::new(op.pattern.symbolic_ref(), &op.values);
    let mut values = vec![0.0f64; sym.len_val()];
    let par = Par::Seq;
    let mut mem = MemBuffer::new(
        sym.factorize_numeric_ldlt_scratch::<f64>(par, Default::default())
            .or(sym.solve_in_place_scratch::<f64>(1, par)),
    );
    let ldlt = sym
        .factorize_numeric_ldlt(
            &mut values,
            mat,
            Side::Lower,
            LdltRegularization::default(),
            par,
            MemStack::new(&mut mem),
            Default::default(),
        )
        .ok()?;
    let (x, steps, rel) = refine(op, rhs, bnorm, |v| {
        ldlt.solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(v, n, 1), par, MemStack::new(&mut mem));
    });
    Some((
        x,
        SolveStats {
            dim: n,
            nnz: op.nnz(),
            refinement_steps: steps,
            relative_residual: rel,
        },
    ))
}

/// Solve followed by up to four steps of iterative refinement, keeping a
/// correction only when it lowers the residual.
fn refine(op: &SparseOperator, rhs: &[f64], bnorm: f64, mut apply: impl FnMut(&mut [f64])) -> (Vec<f64>, usize, f64) {
    let mut x = rhs.to_vec();
    apply(&mut x);
    let mut rel = f64::INFINITY;
    let mut steps = 0;
    for step in 0..=4 {
        let ax = op.matvec(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        rel = norm(&r) / bnorm;
        steps = step;
        if !rel.is_finite() || rel <= 1e-14 || step == 4 {
            break;
        }
        let mut d = r;
        apply(&mut d);
        let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let at = op.matvec(&trial);
        let rt = norm(&rhs.iter().zip(&at).map(|(b, a)| b - a).collect::<Vec<_>>()) / bnorm;
        if !(rt < rel) {
            break;
        }
        x = trial;
    }
    (x, steps, rel)
}

/// Solves `op x = rhs` with a fresh factorization.
pub fn linear_solve(op: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    LuSolver::new().solve(op, rhs).map(|(x, _)| x)
}
