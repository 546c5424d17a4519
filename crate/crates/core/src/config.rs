//! Problem configuration, read from and echoed to JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use crate::adapt::Refinement;
use crate::error::{Error, Result};
use crate::forms::{PhysicalParams, VNormScaling};
use crate::newton::NewtonOptions;
use crate::space::{FluxFamily, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// Stationary tanh front on the unit square.
    FrontStationary,
    /// Linear reaction term with `u = sin(πx) sin(πy)`.
    LinearAppendix,
    /// Space-time `u = sin(πt) sin(πx)` on `(0,1) × (0,0.1)`.
    #[serde(rename = "transient_sine_1d")]
    TransientSine1d,
    /// Space-time phase separation from a step profile, no exact solution.
    #[serde(rename = "phase_1d")]
    Phase1d,
}

impl ProblemKind {
    pub fn layout(self) -> Layout {
        match self {
            ProblemKind::FrontStationary | ProblemKind::LinearAppendix => Layout::Stationary,
            ProblemKind::TransientSine1d | ProblemKind::Phase1d => Layout::SpaceTime,
        }
    }

    pub fn has_exact_solution(self) -> bool {
        self != ProblemKind::Phase1d
    }

    /// `(D, λ)` used when the config leaves them out.
    pub fn default_params(self) -> (f64, f64) {
        match self {
            ProblemKind::FrontStationary => (1.0, 1.0 / 320.0),
            ProblemKind::LinearAppendix | ProblemKind::TransientSine1d => (1.0, 1.0),
            ProblemKind::Phase1d => (1.0, 0.01),
        }
    }

    pub fn default_mesh(self) -> [usize; 2] {
        match self {
            ProblemKind::FrontStationary | ProblemKind::LinearAppendix => [1, 1],
            ProblemKind::TransientSine1d => [10, 1],
            ProblemKind::Phase1d => [32, 1],
        }
    }

    pub fn default_final_time(self) -> Option<f64> {
        match self {
            ProblemKind::TransientSine1d => Some(0.1),
            ProblemKind::Phase1d => Some(0.015625),
            _ => None,
        }
    }
}

/// Step initial profile and wall data of the phase problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseData {
    /// `u_inside` on this open interval at `t = 0`, `u_outside` elsewhere.
    pub interval: [f64; 2],
    pub u_inside: f64,
    pub u_outside: f64,
    pub wall_u: f64,
    pub wall_q: f64,
}

impl Default for PhaseData {
    fn default() -> Self {
        PhaseData {
            interval: [0.25, 0.75],
            u_inside: 1.0,
            u_outside: -1.0,
            wall_u: -1.0,
            wall_q: 0.0,
        }
    }
}

impl PhaseData {
    pub fn initial(&self, x: f64) -> f64 {
        if x > self.interval[0] && x < self.interval[1] {
            self.u_inside
        } else {
            self.u_outside
        }
    }
}

fn one() -> usize {
    1
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default = "one")]
    pub degree: usize,
    /// Extra polynomial degree of the test spaces.
    #[serde(default = "one")]
    pub enrichment: usize,
    #[serde(default)]
    pub flux_family: Option<FluxFamily>,
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Cells of the seed mesh in each direction.
    #[serde(default)]
    pub mesh: Option<[usize; 2]>,
    /// Height of the space-time slab.
    #[serde(default)]
    pub final_time: Option<f64>,
    #[serde(default)]
    pub phase: Option<PhaseData>,
    #[serde(default)]
    pub refinement: Refinement,
    /// Uniform levels, or adaptive passes.
    #[serde(default = "four")]
    pub levels: usize,
    #[serde(default)]
    pub max_ndof: Option<usize>,
    #[serde(default)]
    pub newton: NewtonOptions,
    #[serde(default)]
    pub scaling: VNormScaling,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ProblemConfig {
    pub fn new(kind: ProblemKind) -> Self {
        ProblemConfig {
            kind,
            degree: 1,
            enrichment: 1,
            flux_family: None,
            d: None,
            lambda: None,
            mesh: None,
            final_time: None,
            phase: None,
            refinement: Refinement::Uniform,
            levels: 4,
            max_ndof: None,
            newton: NewtonOptions::default(),
            scaling: VNormScaling::Scaled,
            output_dir: None,
        }
    }

    /// Copy with every defaulted field filled in, after validation.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let (d, lambda) = c.kind.default_params();
        c.d.get_or_insert(d);
        c.lambda.get_or_insert(lambda);
        c.mesh.get_or_insert(c.kind.default_mesh());
        c.flux_family.get_or_insert(match c.kind.layout() {
            Layout::Stationary => FluxFamily::Rt,
            Layout::SpaceTime => FluxFamily::VectorLagrange,
        });
        if let Some(t) = c.kind.default_final_time() {
            c.final_time.get_or_insert(t);
        } else if c.final_time.is_some() {
            return Err(Error::Config("final_time only applies to space-time problems".into()));
        }
        if c.kind == ProblemKind::Phase1d {
            c.phase.get_or_insert_with(PhaseData::default);
        } else if c.phase.is_some() {
            return Err(Error::Config("phase data only applies to phase_1d".into()));
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.degree) {
            return Err(Error::Config(format!("degree must be 1, 2 or 3, got {}", self.degree)));
        }
        if self.enrichment > 1 {
            return Err(Error::Config(format!("enrichment must be 0 or 1, got {}", self.enrichment)));
        }
        if self.levels == 0 {
            return Err(Error::Config("levels must be positive".into()));
        }
        if let Refinement::Adaptive { theta } = self.refinement {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::Config(format!("theta must lie in (0, 1], got {theta}")));
            }
        }
        if self.mesh.is_some_and(|m| m[0] == 0 || m[1] == 0) {
            return Err(Error::Config("mesh cell counts must be positive".into()));
        }
        if self.final_time.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("final_time must be positive".into()));
        }
        if self.kind.layout() == Layout::SpaceTime && self.flux_family == Some(FluxFamily::Rt) {
            return Err(Error::Config("space-time runs use vector Lagrange fluxes".into()));
        }
        let n = &self.newton;
        if !(n.rtol >= 0.0 && n.atol >= 0.0) || n.max_iter == 0 {
            return Err(Error::Config("invalid Newton tolerances".into()));
        }
        self.params()?;
        Ok(())
    }

    /// Physical parameters, with defaults for missing values.
    pub fn params(&self) -> Result<PhysicalParams> {
        let (d, lambda) = self.kind.default_params();
        PhysicalParams::new(
            self.d.unwrap_or(d),
            self.lambda.unwrap_or(lambda),
            self.kind == ProblemKind::LinearAppendix,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    /// `[x0, x1, y0, y1]`.
    pub fn domain(&self) -> [f64; 4] {
        let t = self.final_time.or(self.kind.default_final_time());
        match t {
            Some(t) => [0.0, 1.0, 0.0, t],
            None => [0.0, 1.0, 0.0, 1.0],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ProblemConfig = serde_json::from_str(text)?;
        c.resolved()
    }
}

/// Reads a config, or the `config` entry of a run-metadata file.
pub fn load_config(path: &Path) -> Result<ProblemConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let inner = match value.get("config") {
        Some(c) if value.get("kind").is_none() => c.clone(),
        _ => value,
    };
    let c: ProblemConfig = serde_json::from_value(inner)?;
    c.resolved()
}
