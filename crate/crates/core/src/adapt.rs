//! Error indicators, Dörfler marking, the adaptive loop and an inf-sup probe.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::assembly::{squared_indicators, Assembler};
use crate::error::{Error, Result};
use crate::forms::eval_unorm_gram;
use crate::mesh::{refine, uniform_refine, TriMesh};
use crate::newton::{solve_checked, NewtonOptions, NewtonReport};
use crate::norms::ErrorNorms;
use crate::space::{Field, MixedSpace};

/// Element indicators `η_m = ‖E‖_V(K_m)` and their root-sum-square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorField {
    pub eta: Vec<f64>,
    pub global: f64,
}

impl IndicatorField {
    pub fn from_squared(eta2: &[f64]) -> Self {
        let global = eta2.iter().sum::<f64>().sqrt();
        IndicatorField {
            eta: eta2.iter().map(|v| v.max(0.0).sqrt()).collect(),
            global,
        }
    }
}

pub fn compute_indicators(asm: &Assembler, state: &[f64]) -> Result<IndicatorField> {
    Ok(IndicatorField::from_squared(&squared_indicators(asm, state)?))
}

/// Smallest set of largest indicators whose squares reach `theta` of the total.
pub fn dorfler_mark(ind: &IndicatorField, theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Argument(format!("theta must lie in (0, 1], got {theta}")));
    }
    let eta2: Vec<f64> = ind.eta.iter().map(|e| e * e).collect();
    let total: f64 = eta2.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Marking("all indicators vanish".into()));
    }
    let mut order: Vec<usize> = (0..eta2.len()).filter(|&i| eta2[i] > 0.0).collect();
    order.sort_by(|&a, &b| eta2[b].total_cmp(&eta2[a]).then(a.cmp(&b)));
    if theta >= 1.0 {
        order.sort_unstable();
        return Ok(order);
    }
    let target = theta * total;
    let mut sum = 0.0;
    let mut marked = Vec::new();
    for i in order {
        marked.push(i);
        sum += eta2[i];
        if sum >= target {
            break;
        }
    }
    marked.sort_unstable();
    Ok(marked)
}

/// How the mesh changes between passes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Refinement {
    /// Red refinement of every element.
    #[default]
    Uniform,
    /// Dörfler marking with bulk parameter `theta`, then bisection.
    Adaptive { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptOptions {
    pub refinement: Refinement,
    /// Number of solves.
    pub max_iters: usize,
    /// Stop once the total dof count reaches this.
    pub max_ndof: Option<usize>,
    pub newton: NewtonOptions,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions {
            refinement: Refinement::Adaptive { theta: 0.5 },
            max_iters: 10,
            max_ndof: None,
            newton: NewtonOptions::default(),
        }
    }
}

/// One pass of the solve-estimate-mark-refine loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptStep {
    pub iteration: usize,
    pub num_elements: usize,
    pub h_max: f64,
    pub ndof_solution: usize,
    pub ndof_total: usize,
    pub estimate: f64,
    pub newton_iters: usize,
    /// Relative gap between `‖E‖²_V` and `B(U;E) - F(E)`.
    pub identity_defect: f64,
    /// Elements marked for refinement. Empty for uniform refinement and
    /// on the last pass.
    pub marked: Vec<usize>,
    pub errors: Option<ErrorNorms>,
}

/// Hooks binding the loop to a concrete problem.
pub trait AdaptProblem {
    fn assembler(&self, mesh: Arc<TriMesh>) -> Result<Assembler>;
    /// Starting guess on the first mesh.
    fn initial_state(&self, asm: &Assembler) -> Result<Vec<f64>>;
    fn errors(&self, _ms: &MixedSpace, _state: &[f64]) -> Result<Option<ErrorNorms>> {
        Ok(None)
    }
}

/// Discrete solution of one pass.
pub struct LevelSolution {
    pub space: Arc<MixedSpace>,
    pub state: Vec<f64>,
    pub indicators: IndicatorField,
    pub report: NewtonReport,
}

pub struct AdaptOutcome {
    pub steps: Vec<AdaptStep>,
    pub levels: Vec<LevelSolution>,
    /// First failure, which stops the loop.
    pub failure: Option<Error>,
}

/// Runs solve, estimate, mark and refine until the pass or dof budget is
/// spent. Later passes start from the prolonged previous solution. A
/// failure ends the loop and keeps the passes completed so far.
pub fn adaptive_solve(problem: &dyn AdaptProblem, mesh0: Arc<TriMesh>, opts: &AdaptOptions) -> AdaptOutcome {
    let mut out = AdaptOutcome {
        steps: Vec::new(),
        levels: Vec::new(),
        failure: None,
    };
    if let Err(e) = adapt_loop(problem, mesh0, opts, &mut out) {
        out.failure = Some(e);
    }
    out
}

fn adapt_loop(problem: &dyn AdaptProblem, mesh0: Arc<TriMesh>, opts: &AdaptOptions, out: &mut AdaptOutcome) -> Result<()> {
    let mut mesh = mesh0;
    for it in 0..opts.max_iters {
        let asm = problem.assembler(mesh.clone())?;
        let guess = match out.levels.last() {
            Some(prev) => asm.space().prolong(&prev.space, &prev.state)?,
            None => problem.initial_state(&asm)?,
        };
        let solved = solve_checked(&asm, guess, &opts.newton)?;
        let ind = compute_indicators(&asm, &solved.state)?;
        let ms = asm.space();
        let errors = problem.errors(ms, &solved.state)?;
        let ndof_total = ms.total_dim();
        let last = it + 1 == opts.max_iters || opts.max_ndof.is_some_and(|m| ndof_total >= m);
        let marked = match opts.refinement {
            Refinement::Adaptive { theta } if !last => dorfler_mark(&ind, theta)?,
            _ => Vec::new(),
        };
        out.steps.push(AdaptStep {
            iteration: it,
            num_elements: mesh.num_triangles(),
            h_max: mesh.max_diameter(),
            ndof_solution: ms.solution_dim(),
            ndof_total,
            estimate: ind.global,
            newton_iters: solved.report.iterations,
            identity_defect: solved.identity_defect(),
            marked: marked.clone(),
            errors,
        });
        out.levels.push(LevelSolution {
            space: asm.space_arc().clone(),
            state: solved.state,
            indicators: ind,
            report: solved.report,
        });
        if last {
            break;
        }
        mesh = Arc::new(match opts.refinement {
            Refinement::Uniform => uniform_refine(&mesh),
            Refinement::Adaptive { .. } => refine(&mesh, &marked)?,
        });
    }
    Ok(())
}

/// Largest total dimension accepted by the dense inf-sup probe.
pub const INFSUP_MAX_DIM: usize = 4000;

/// Smallest generalized singular value of the discrete form,
/// `min sqrt(λ)` for `(Bᵀ G⁻¹ B) x = λ M_U x` on the free dofs.
/// The problem must be linear, so the operator does not depend on the state.
pub fn estimate_infsup(asm: &Assembler) -> Result<InfSup> {
    if !asm.problem().params.linear {
        return Err(Error::Config("inf-sup probe needs the linear reaction term".into()));
    }
    let ms = asm.space();
    let n = ms.total_dim();
    if n > INFSUP_MAX_DIM {
        return Err(Error::Argument(format!("dimension {n} too large for the dense probe")));
    }
    let zero = vec![0.0; n];
    let jac = asm.assemble_jacobian(&zero, false)?.to_dense();
    let free = asm.dirichlet().free();
    let split = ms.offset(Field::Psi);
    let nu = free.iter().filter(|&&d| d < split).count();
    let ne = free.len() - nu;
    // free dofs are sorted, so trial dofs come first
    let g = jac.view((nu, nu), (ne, ne)).into_owned();
    let b = -jac.view((nu, 0), (ne, nu)).into_owned();
    let mut m_full = DMatrix::<f64>::zeros(split, split);
    for e in 0..ms.mesh().num_triangles() {
        let ed = asm.element_data(e)?;
        let gm = eval_unorm_gram(&ed);
        let dofs = ms.element_dofs(e);
        let nt = ed.n_trial();
        for i in 0..nt {
            for j in 0..nt {
                m_full[(dofs[i], dofs[j])] += gm[(i, j)];
            }
        }
    }
    let m = DMatrix::from_fn(nu, nu, |i, j| m_full[(free[i], free[j])]);
    let min_g = SymmetricEigen::new(g.clone()).eigenvalues.min();
    let min_m = SymmetricEigen::new(m.clone()).eigenvalues.min();
    let lg = g
        .cholesky()
        .ok_or_else(|| Error::Solver("V-norm Gram is not positive definite".into()))?;
    let c = lg
        .l()
        .solve_lower_triangular(&b)
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let s = c.transpose() * c;
    let lm = m
        .cholesky()
        .ok_or_else(|| Error::Solver("U-norm Gram is not positive definite".into()))?;
    let l = lm.l();
    let y = l
        .solve_lower_triangular(&s)
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let z = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let z = (&z + z.transpose()) * 0.5;
    let lam = SymmetricEigen::new(z).eigenvalues.min();
    Ok(InfSup {
        gamma: lam.max(0.0).sqrt(),
        min_eig_v_gram: min_g,
        min_eig_u_gram: min_m,
        trial_dim: nu,
        test_dim: ne,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfSup {
    pub gamma: f64,
    pub min_eig_v_gram: f64,
    pub min_eig_u_gram: f64,
    pub trial_dim: usize,
    pub test_dim: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(eta2: &[f64]) -> IndicatorField {
        IndicatorField::from_squared(eta2)
    }

    #[test]
    fn dorfler_examples() {
        let f = field(&[16.0, 9.0, 4.0, 1.0]);
        assert_eq!(dorfler_mark(&f, 0.5).unwrap(), vec![0]);
        assert_eq!(dorfler_mark(&f, 0.9).unwrap(), vec![0, 1, 2]);
        assert_eq!(dorfler_mark(&f, 1.0).unwrap(), vec![0, 1, 2, 3]);
        let g = field(&[0.0, 4.0, 0.0, 1.0]);
        assert_eq!(dorfler_mark(&g, 1.0).unwrap(), vec![1, 3]);
    }

    #[test]
    fn dorfler_rejects_zero_and_bad_theta() {
        assert!(matches!(dorfler_mark(&field(&[0.0, 0.0]), 0.5), Err(Error::Marking(_))));
        assert!(matches!(dorfler_mark(&field(&[1.0]), 0.0), Err(Error::Argument(_))));
        assert!(matches!(dorfler_mark(&field(&[1.0]), 1.5), Err(Error::Argument(_))));
    }

    #[test]
    fn global_is_root_sum_square() {
        let f = field(&[1.0, 2.0, 3.5]);
        let s: f64 = f.eta.iter().map(|e| e * e).sum();
        assert!((f.global * f.global - s).abs() <= 1e-12 * s);
    }

    /// Brute-force minimal cardinality over all subsets.
    fn min_card(eta2: &[f64], theta: f64) -> usize {
        let total: f64 = eta2.iter().sum();
        let n = eta2.len();
        (0u32..1 << n)
            .filter(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| eta2[i]).sum::<f64>() >= theta * total)
            .map(|mask| mask.count_ones() as usize)
            .min()
            .unwrap()
    }

    proptest! {
        #[test]
        fn marking_is_minimal_and_monotone(
            eta2 in proptest::collection::vec(0.01f64..10.0, 1..9),
            t1 in 0.05f64..0.95,
            dt in 0.0f64..0.5,
        ) {
            let f = field(&eta2);
            let t2 = (t1 + dt).min(1.0);
            let m1 = dorfler_mark(&f, t1).unwrap();
            let m2 = dorfler_mark(&f, t2).unwrap();
            let sq: Vec<f64> = f.eta.iter().map(|e| e * e).collect();
            prop_assert_eq!(m1.len(), min_card(&sq, t1));
            let sum: f64 = m1.iter().map(|&i| sq[i]).sum();
            prop_assert!(sum >= t1 * sq.iter().sum::<f64>());
            for i in &m1 {
                prop_assert!(m2.contains(i));
            }
        }
    }
}
