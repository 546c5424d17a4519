//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use avsfe::adapt::AdaptProblem;
use avsfe::{solve_checked, Assembler, ProblemConfig, ProblemKind, Study};

/// Assembler for `kind` at degree `p` on the seed mesh refined `levels` times.
pub fn assembler(kind: ProblemKind, p: usize, levels: usize) -> (Study, Assembler) {
    let mut cfg = ProblemConfig::new(kind);
    cfg.degree = p;
    let study = Study::new(&cfg).expect("valid config");
    let mesh = Arc::new(study.uniform_mesh(levels).expect("mesh"));
    let asm = study.assembler(mesh).expect("assembler");
    (study, asm)
}

/// Starting guess of the study, with boundary values imposed.
pub fn initial(study: &Study, asm: &Assembler) -> Vec<f64> {
    study.initial_state(asm).expect("initial state")
}

/// Converged state on `asm`.
pub fn converged(study: &Study, asm: &Assembler) -> Vec<f64> {
    let init = initial(study, asm);
    solve_checked(asm, init, &study.config().newton).expect("newton converges").state
}
