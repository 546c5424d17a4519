//! Damped Newton iteration on the coupled `[U, E]` system.

use serde::{Deserialize, Serialize};

use crate::assembly::Assembler;
use crate::error::{Error, Result};
use crate::solve::{LuSolver, SolveStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
    /// Drop the second-derivative term from the trial-trial block.
    pub gauss_newton: bool,
    /// Backtracking on the residual norm.
    pub line_search: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            rtol: 1e-8,
            atol: 1e-10,
            max_iter: 50,
            gauss_newton: false,
            line_search: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Free-dof residual norms, starting with the initial one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub step_lengths: Vec<f64>,
    pub linear_solves: Vec<SolveStats>,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Error for a run that did not converge.
    pub fn check(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NewtonDiverged {
                iterations: self.iterations,
                residual: self.final_residual(),
            })
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const SUFFICIENT_DECREASE: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const EQUILIBRATION_PASSES: usize = 3;

/// Newton's method from `initial`, whose constrained entries are overwritten
/// with their prescribed values. Updates only touch free dofs, so
/// constrained entries stay bit-exact. A run that exhausts `max_iter`
/// returns its last iterate with `converged = false`.
pub fn newton_solve(asm: &Assembler, initial: Vec<f64>, opts: &NewtonOptions) -> Result<(Vec<f64>, NewtonReport)> {
    let mut state = initial;
    if state.len() != asm.space().total_dim() {
        return Err(Error::Argument(format!(
            "state length {} differs from space dimension {}",
            state.len(),
            asm.space().total_dim()
        )));
    }
    asm.dirichlet().impose(&mut state);
    let mut report = NewtonReport::default();
    let mut solver = LuSolver::new();
    let mut res = asm.residual(&state)?;
    let mut rnorm = norm(&res);
    if !rnorm.is_finite() {
        return Err(Error::Solver("non-finite initial residual".into()));
    }
    report.residual_history.push(rnorm);
    let tol = opts.atol.max(opts.rtol * rnorm);
    if rnorm <= tol {
        report.converged = true;
        return Ok((state, report));
    }
    while report.iterations < opts.max_iter {
        let (r, mut jac) = asm.system(&state, opts.gauss_newton)?;
        res = r;
        let scale = jac.equilibrate(EQUILIBRATION_PASSES);
        let rhs: Vec<f64> = asm.restrict(&res).iter().zip(&scale).map(|(v, s)| -v * s).collect();
        let (mut delta, stats) = solver.solve(&jac, &rhs)?;
        for (d, s) in delta.iter_mut().zip(&scale) {
            *d *= s;
        }
        report.linear_solves.push(stats);

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut best: Option<(f64, Vec<f64>, f64)> = None;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = state.clone();
            asm.axpy_free(&mut trial, alpha, &delta);
            let tres = asm.residual(&trial)?;
            let tn = norm(&tres);
            if tn.is_finite() && tn <= (1.0 - SUFFICIENT_DECREASE * alpha) * rnorm {
                accepted = Some((trial, tn, alpha));
                break;
            }
            if tn.is_finite() && best.as_ref().is_none_or(|b| tn < b.0) {
                best = Some((tn, trial, alpha));
            }
            if !opts.line_search {
                break;
            }
            alpha *= 0.5;
        }
        report.iterations += 1;
        let (trial, tn, a) = match accepted {
            Some(x) => x,
            None => match best {
                // no sufficient decrease: take the best trial step and stop
                Some((tn, trial, a)) if !opts.line_search => (trial, tn, a),
                _ => {
                    report.step_lengths.push(0.0);
                    report.residual_history.push(rnorm);
                    return Ok((state, report));
                }
            },
        };
        state = trial;
        rnorm = tn;
        report.step_lengths.push(a);
        report.residual_history.push(rnorm);
        if rnorm <= tol {
            report.converged = true;
            break;
        }
    }
    Ok((state, report))
}

/// Relative tolerance of the check `‖E‖²_V = B(U;E) - F(E)`.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;
const POLISH_ATTEMPTS: usize = 3;

/// Converged state with its estimator-identity check.
#[derive(Debug, Clone)]
pub struct CheckedSolve {
    pub state: Vec<f64>,
    pub report: NewtonReport,
    /// `‖E‖²_V` and `B(U;E) - F(E)`.
    pub identity: (f64, f64),
}

impl CheckedSolve {
    pub fn identity_defect(&self) -> f64 {
        identity_defect(self.identity)
    }
}

fn identity_defect((g, b): (f64, f64)) -> f64 {
    let scale = g.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (g - b).abs() / scale
    }
}

/// Newton solve that fails unless it converges and the estimator identity
/// holds. A converged state that misses the identity gets a few extra
/// full steps.
pub fn solve_checked(asm: &Assembler, initial: Vec<f64>, opts: &NewtonOptions) -> Result<CheckedSolve> {
    let (mut state, mut report) = newton_solve(asm, initial, opts)?;
    report.check()?;
    let mut identity = asm.estimator_identity(&state)?;
    let mut attempts = 0;
    while identity_defect(identity) > IDENTITY_TOLERANCE && attempts < POLISH_ATTEMPTS {
        let polish = NewtonOptions {
            rtol: 0.0,
            atol: 0.0,
            max_iter: 1,
            ..*opts
        };
        let (s, extra) = newton_solve(asm, state, &polish)?;
        state = s;
        report.iterations += extra.iterations;
        report.residual_history.extend(extra.residual_history.iter().skip(1));
        report.step_lengths.extend(extra.step_lengths);
        report.linear_solves.extend(extra.linear_solves);
        identity = asm.estimator_identity(&state)?;
        attempts += 1;
    }
    if identity_defect(identity) > IDENTITY_TOLERANCE {
        return Err(Error::Solver(format!(
            "estimator identity violated: |E|^2 = {:.6e}, B(U;E) - F(E) = {:.6e}",
            identity.0, identity.1
        )));
    }
    Ok(CheckedSolve { state, report, identity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Problem;
    use crate::forms::{PhysicalParams, VNormScaling};
    use crate::mesh::{make_rect_mesh, BoundaryTag};
    use crate::space::{apply_dirichlet, build_mixed_space, BoundaryData, FluxFamily, Layout};
    use std::sync::Arc;

    fn setup(linear: bool) -> Assembler {
        let mesh = Arc::new(make_rect_mesh(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap());
        let ms = Arc::new(build_mixed_space(mesh, 1, FluxFamily::Rt, Layout::Stationary, 0).unwrap());
        let data = BoundaryData::uniform(
            Arc::new(|x: [f64; 2]| 0.3 * x[0] - 0.2 * x[1]),
            &BoundaryTag::ALL,
            Arc::new(|x: [f64; 2]| x[0] * x[1]),
            &BoundaryTag::ALL,
        );
        let table = apply_dirichlet(&ms, &data).unwrap();
        let problem = Problem {
            params: PhysicalParams::new(1.0, 0.05, linear).unwrap(),
            scaling: VNormScaling::Scaled,
            source: Some(Arc::new(|x: [f64; 2]| (3.0 * x[0]).sin() + x[1])),
        };
        Assembler::new(ms, problem, table).unwrap()
    }

    #[test]
    fn linear_problem_takes_one_iteration() {
        let asm = setup(true);
        let n = asm.space().total_dim();
        let (state, rep) = newton_solve(&asm, vec![0.0; n], &NewtonOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        for (&d, &v) in asm.dirichlet().entries() {
            assert_eq!(state[d].to_bits(), v.to_bits());
        }
    }

    #[test]
    fn nonlinear_history_decreases() {
        let asm = setup(false);
        let n = asm.space().total_dim();
        let (state, rep) = newton_solve(&asm, vec![0.0; n], &NewtonOptions::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert_eq!(rep.residual_history.len(), rep.iterations + 1);
        for w in rep.residual_history[1..].windows(2) {
            assert!(w[1] < w[0]);
        }
        for (&d, &v) in asm.dirichlet().entries() {
            assert_eq!(state[d].to_bits(), v.to_bits());
        }
        let (g, b) = asm.estimator_identity(&state).unwrap();
        assert!((g - b).abs() <= 1e-8 * g.abs());
    }

    #[test]
    fn exhausted_budget_is_reported() {
        let asm = setup(false);
        let n = asm.space().total_dim();
        let opts = NewtonOptions {
            max_iter: 1,
            rtol: 1e-30,
            atol: 0.0,
            ..Default::default()
        };
        let (_, rep) = newton_solve(&asm, vec![0.0; n], &opts).unwrap();
        assert!(!rep.converged);
        assert!(matches!(rep.check(), Err(Error::NewtonDiverged { .. })));
    }
}
