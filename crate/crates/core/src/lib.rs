//! AVS-FE minimum-residual finite elements for the Cahn-Hilliard equation
//! on triangles.

pub mod adapt;
pub mod assembly;
pub mod basis;
pub mod config;
pub mod error;
pub mod forms;
pub mod manufactured;
pub mod mesh;
pub mod newton;
pub mod norms;
pub mod output;
pub mod rates;
pub mod solve;
pub mod space;
pub mod study;

pub use adapt::{adaptive_solve, compute_indicators, dorfler_mark, estimate_infsup, AdaptOptions, AdaptOutcome, AdaptStep, IndicatorField, InfSup, Refinement};
pub use assembly::{Assembler, Problem};
pub use config::{load_config, PhaseData, ProblemConfig, ProblemKind};
pub use error::{Error, Result};
pub use forms::{PhysicalParams, VNormScaling};
pub use manufactured::{ExactKind, Manufactured};
pub use mesh::{make_rect_mesh, refine, uniform_refine, BoundaryTag, TriMesh};
pub use newton::{newton_solve, solve_checked, NewtonOptions, NewtonReport};
pub use norms::{error_norms, ErrorNorms};
pub use output::{write_csv, write_vtk, ConvergenceRow, CSV_COLUMNS};
pub use rates::{fit_rate, RateFit};
pub use space::{build_mixed_space, Field, FluxFamily, Layout, MixedSpace};
pub use study::{infsup_probe, run_study, solve_single, Study, StudyRecord};

/// Sets the worker count of the assembly pool. One thread also makes the
/// sparse factorization sequential. The pool can be sized only once per
/// process; later calls change only the factorization setting.
pub fn configure_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("thread count must be positive".into()));
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    faer::set_global_parallelism(if n == 1 { faer::Par::Seq } else { faer::Par::rayon(n) });
    Ok(())
}
