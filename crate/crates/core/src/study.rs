//! Problem catalog and study driver.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapt::{adaptive_solve, estimate_infsup, AdaptOptions, AdaptOutcome, AdaptProblem, AdaptStep, InfSup, LevelSolution};
use crate::assembly::{Assembler, Problem};
use crate::config::{ProblemConfig, ProblemKind};
use crate::error::{Error, Result};
use crate::forms::PhysicalParams;
use crate::manufactured::{ExactKind, Manufactured};
use crate::mesh::{make_rect_mesh, uniform_refine, BoundaryTag, TriMesh};
use crate::norms::{error_exactness, ErrorNorms};
use crate::output::{vertex_values, write_csv, write_json, write_vtk, ConvergenceRow};
use crate::rates::{fit_rate, RateFit};
use crate::space::{apply_dirichlet, build_mixed_space, dirichlet_tags, BoundaryData, Field, MixedSpace, ScalarFn};

/// A resolved configuration with its exact solution, if any.
#[derive(Debug, Clone)]
pub struct Study {
    cfg: ProblemConfig,
    params: PhysicalParams,
    exact: Option<Manufactured>,
}

impl Study {
    pub fn new(cfg: &ProblemConfig) -> Result<Self> {
        let cfg = cfg.resolved()?;
        let params = cfg.params()?;
        let exact = match cfg.kind {
            ProblemKind::FrontStationary => Some(ExactKind::Front),
            ProblemKind::LinearAppendix => Some(ExactKind::SineSquare),
            ProblemKind::TransientSine1d => Some(ExactKind::TransientSine),
            ProblemKind::Phase1d => None,
        }
        .map(|k| Manufactured::new(k, params));
        Ok(Study { cfg, params, exact })
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.cfg
    }

    pub fn params(&self) -> PhysicalParams {
        self.params
    }

    pub fn exact(&self) -> Option<&Manufactured> {
        self.exact.as_ref()
    }

    pub fn formula(&self) -> Option<&'static str> {
        self.exact.as_ref().map(Manufactured::formula)
    }

    pub fn seed_mesh(&self) -> Result<TriMesh> {
        let [x0, x1, y0, y1] = self.cfg.domain();
        let [nx, ny] = self.cfg.mesh.unwrap_or(self.cfg.kind.default_mesh());
        make_rect_mesh(x0, x1, y0, y1, nx, ny)
    }

    /// Seed mesh refined uniformly `levels` times.
    pub fn uniform_mesh(&self, levels: usize) -> Result<TriMesh> {
        let mut m = self.seed_mesh()?;
        for _ in 0..levels {
            m = uniform_refine(&m);
        }
        Ok(m)
    }

    pub fn boundary_data(&self) -> BoundaryData {
        match (&self.exact, self.cfg.phase) {
            (Some(m), _) => m.boundary_data(),
            (None, phase) => {
                let ph = phase.unwrap_or_default();
                let wall_u: ScalarFn = Arc::new(move |_| ph.wall_u);
                let wall_q: ScalarFn = Arc::new(move |_| ph.wall_q);
                let init: ScalarFn = Arc::new(move |x| ph.initial(x[0]));
                let (ut, qt) = dirichlet_tags(self.cfg.kind.layout());
                let mut data = BoundaryData::uniform(wall_u, ut, wall_q, qt);
                data.u.insert(BoundaryTag::Bottom, init);
                data
            }
        }
    }

    pub fn space(&self, mesh: Arc<TriMesh>) -> Result<MixedSpace> {
        build_mixed_space(
            mesh,
            self.cfg.degree,
            self.cfg.flux_family.expect("resolved config"),
            self.cfg.kind.layout(),
            self.cfg.enrichment,
        )
    }

    pub fn problem(&self) -> Problem {
        Problem {
            params: self.params,
            scaling: self.cfg.scaling,
            source: self.exact.as_ref().map(Manufactured::source_fn),
        }
    }

    pub fn adapt_options(&self) -> AdaptOptions {
        AdaptOptions {
            refinement: self.cfg.refinement,
            max_iters: self.cfg.levels,
            max_ndof: self.cfg.max_ndof,
            newton: self.cfg.newton,
        }
    }

    /// Runs the configured refinement loop without writing anything.
    pub fn run(&self) -> Result<AdaptOutcome> {
        Ok(adaptive_solve(self, Arc::new(self.seed_mesh()?), &self.adapt_options()))
    }
}

impl AdaptProblem for Study {
    fn assembler(&self, mesh: Arc<TriMesh>) -> Result<Assembler> {
        let ms = Arc::new(self.space(mesh)?);
        let table = apply_dirichlet(&ms, &self.boundary_data())?;
        Assembler::new(ms, self.problem(), table)
    }

    /// Zero, except for the phase problem, which starts from its initial
    /// profile held constant in time.
    fn initial_state(&self, asm: &Assembler) -> Result<Vec<f64>> {
        let ms = asm.space();
        let mut state = vec![0.0; ms.total_dim()];
        if let Some(ph) = self.cfg.phase {
            ms.interpolate_into(Field::U, &mut state, &|x| [ph.initial(x[0]), 0.0])?;
        }
        asm.dirichlet().impose(&mut state);
        Ok(state)
    }

    fn errors(&self, ms: &MixedSpace, state: &[f64]) -> Result<Option<ErrorNorms>> {
        self.exact.as_ref().map(|m| crate::norms::error_norms(ms, state, m)).transpose()
    }
}

/// Minimum and maximum of `u^h` over vertices and quadrature points.
pub fn solution_bounds(ms: &MixedSpace, state: &[f64]) -> Result<[f64; 2]> {
    let tables = crate::forms::RefTables::with_exactness(ms, error_exactness(ms.degree()));
    let lo = ms.local_offsets();
    let mut b = [f64::INFINITY, f64::NEG_INFINITY];
    for v in vertex_values(ms, state, Field::U)? {
        b = [b[0].min(v), b[1].max(v)];
    }
    for e in 0..ms.mesh().num_triangles() {
        let ed = crate::forms::ElementData::new(ms, &tables, e)?;
        let dofs = ms.element_dofs(e);
        let c: Vec<f64> = dofs[lo[0]..lo[1]].iter().map(|&d| state[d]).collect();
        for q in 0..ed.wq.len() {
            let v = ed.tab(Field::U).combine(&c, q).0[0];
            b = [b[0].min(v), b[1].max(v)];
        }
    }
    Ok(b)
}

/// Rates of every CSV error column and the estimate against `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub err_l2_u: RateFit,
    pub err_h1_u: RateFit,
    pub err_l2_q: RateFit,
    pub err_l2_gradu: RateFit,
    pub err_l2_flux: RateFit,
    #[serde(rename = "err_U")]
    pub err_u_norm: RateFit,
    pub estimate: RateFit,
}

pub fn rate_summary(rows: &[ConvergenceRow]) -> Result<RateSummary> {
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let fit = |f: fn(&ConvergenceRow) -> f64| fit_rate(&rows.iter().map(f).collect::<Vec<_>>(), &hs);
    Ok(RateSummary {
        err_l2_u: fit(|r| r.err_l2_u)?,
        err_h1_u: fit(|r| r.err_h1_u)?,
        err_l2_q: fit(|r| r.err_l2_q)?,
        err_l2_gradu: fit(|r| r.err_l2_gradu)?,
        err_l2_flux: fit(|r| r.err_l2_flux)?,
        err_u_norm: fit(|r| r.err_u_norm)?,
        estimate: fit(|r| r.estimate)?,
    })
}

pub fn convergence_row(step: &AdaptStep) -> ConvergenceRow {
    let e = step.errors.unwrap_or(ErrorNorms {
        l2_u: f64::NAN,
        h1_u: f64::NAN,
        l2_q: f64::NAN,
        l2_gradu: f64::NAN,
        l2_flux: f64::NAN,
        u_norm: f64::NAN,
    });
    ConvergenceRow {
        level: step.iteration,
        h: step.h_max,
        ndof_solution: step.ndof_solution,
        ndof_total: step.ndof_total,
        err_l2_u: e.l2_u,
        err_h1_u: e.h1_u,
        err_l2_q: e.l2_q,
        err_l2_gradu: e.l2_gradu,
        err_l2_flux: e.l2_flux,
        err_u_norm: e.u_norm,
        estimate: step.estimate,
        newton_iters: step.newton_iters,
    }
}

/// Per-pass details echoed next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub num_elements: usize,
    pub marked: usize,
    pub identity_defect: f64,
    pub residual_history: Vec<f64>,
    /// `[min, max]` of `u^h`.
    pub u_bounds: [f64; 2],
}

/// Everything a study reports, also written as `metadata.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub config: ProblemConfig,
    pub formula: Option<String>,
    pub rows: Vec<ConvergenceRow>,
    pub rates: Option<RateSummary>,
    pub levels: Vec<LevelSummary>,
    pub failure: Option<String>,
}

impl StudyRecord {
    pub fn check(&self) -> Result<()> {
        match &self.failure {
            None => Ok(()),
            Some(f) => Err(Error::Solver(format!("study failed: {f}"))),
        }
    }
}

pub const CSV_FILE: &str = "convergence.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Runs the configured study and, when `out_dir` is given, writes
/// `convergence.csv`, `metadata.json` and one `level_<k>.vtk` per pass.
/// Outputs of completed passes are written even after a failure, which is
/// then reported in the record.
pub fn run_study(cfg: &ProblemConfig, out_dir: Option<&Path>) -> Result<StudyRecord> {
    let study = Study::new(cfg)?;
    let outcome = study.run()?;
    finish(&study, &outcome, out_dir)
}

/// One solve on the seed mesh refined uniformly `refinements` times,
/// reported and written like a one-level study.
pub fn solve_single(cfg: &ProblemConfig, refinements: usize, out_dir: Option<&Path>) -> Result<StudyRecord> {
    let study = Study::new(cfg)?;
    let opts = AdaptOptions {
        max_iters: 1,
        ..study.adapt_options()
    };
    let outcome = adaptive_solve(&study, Arc::new(study.uniform_mesh(refinements)?), &opts);
    finish(&study, &outcome, out_dir)
}

fn finish(study: &Study, outcome: &AdaptOutcome, out_dir: Option<&Path>) -> Result<StudyRecord> {
    let rows: Vec<ConvergenceRow> = outcome.steps.iter().map(convergence_row).collect();
    let mut levels = Vec::new();
    for (step, sol) in outcome.steps.iter().zip(&outcome.levels) {
        levels.push(LevelSummary {
            level: step.iteration,
            num_elements: step.num_elements,
            marked: step.marked.len(),
            identity_defect: step.identity_defect,
            residual_history: sol.report.residual_history.clone(),
            u_bounds: solution_bounds(&sol.space, &sol.state)?,
        });
    }
    let rates = if study.exact.is_some() && rows.len() >= 2 && rows.windows(2).all(|w| w[1].h < w[0].h) {
        rate_summary(&rows).ok()
    } else {
        None
    };
    let record = StudyRecord {
        config: study.cfg.clone(),
        formula: study.formula().map(String::from),
        rows,
        rates,
        levels,
        failure: outcome.failure.as_ref().map(ToString::to_string),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join(CSV_FILE), &record.rows)?;
        write_json(&dir.join(METADATA_FILE), &record)?;
        for (k, sol) in outcome.levels.iter().enumerate() {
            write_level_vtk(&dir.join(format!("level_{k}.vtk")), sol)?;
        }
    }
    Ok(record)
}

/// Vertex values of `u` and `q` and the element indicators.
pub fn write_level_vtk(path: &Path, sol: &LevelSolution) -> Result<()> {
    let u = vertex_values(&sol.space, &sol.state, Field::U)?;
    let q = vertex_values(&sol.space, &sol.state, Field::Q)?;
    write_vtk(path, sol.space.mesh(), &[("u", &u), ("q", &q)], &[("eta", &sol.indicators.eta)])
}

/// Inf-sup probe of the linear problem on the seed mesh refined `levels`
/// times.
pub fn infsup_probe(cfg: &ProblemConfig, levels: usize) -> Result<InfSup> {
    let study = Study::new(cfg)?;
    if !study.params.linear {
        return Err(Error::Config("the inf-sup probe runs on linear_appendix".into()));
    }
    let asm = study.assembler(Arc::new(study.uniform_mesh(levels)?))?;
    estimate_infsup(&asm)
}
