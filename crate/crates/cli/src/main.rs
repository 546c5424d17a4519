use std::path::PathBuf;
use std::process::ExitCode;

use avsfe::config::load_config;
use avsfe::{infsup_probe, run_study, solve_single, FluxFamily, ProblemConfig, ProblemKind, Refinement, StudyRecord, VNormScaling};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// AVS-FE solver for the Cahn-Hilliard equation on triangles.
#[derive(Parser, Debug)]
#[command(name = "avsfe", version)]
struct Cli {
    /// Worker threads for assembly; 1 also makes factorization sequential.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Uniform refinement study.
    Converge(Opts),
    /// Adaptive refinement study.
    Adapt {
        #[command(flatten)]
        opts: Opts,
        /// Dörfler bulk parameter.
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
    },
    /// One solve on a uniformly refined seed mesh.
    Solve {
        #[command(flatten)]
        opts: Opts,
        /// Uniform refinements of the seed mesh.
        #[arg(long, default_value_t = 0)]
        refinements: usize,
    },
    /// Smallest generalized singular value of the linear problem.
    Infsup {
        #[command(flatten)]
        opts: Opts,
        /// Uniform refinements of the seed mesh.
        #[arg(long, default_value_t = 0)]
        refinements: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    FrontStationary,
    LinearAppendix,
    #[value(name = "transient-sine-1d")]
    TransientSine1d,
    #[value(name = "phase-1d")]
    Phase1d,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Flux {
    Rt,
    VectorLagrange,
}

#[derive(Args, Debug)]
struct Opts {
    /// JSON config or run metadata; replaces all problem flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "front-stationary")]
    kind: Kind,
    #[arg(long, default_value_t = 1)]
    degree: usize,
    #[arg(long, default_value_t = 1)]
    enrichment: usize,
    #[arg(long, value_enum)]
    flux: Option<Flux>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Seed mesh cells in x and y.
    #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
    mesh: Option<Vec<usize>>,
    #[arg(long)]
    final_time: Option<f64>,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long)]
    max_ndof: Option<usize>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    max_newton: Option<usize>,
    #[arg(long)]
    gauss_newton: bool,
    /// Drop the `h²` weights from the test norm.
    #[arg(long)]
    plain_norm: bool,
    /// Directory for CSV, VTK and metadata output.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Opts {
    fn config(&self, refinement: Refinement) -> avsfe::Result<ProblemConfig> {
        if let Some(path) = &self.config {
            let mut c = load_config(path)?;
            if self.out.is_some() {
                c.output_dir = self.out.clone();
            }
            return Ok(c);
        }
        let kind = match self.kind {
            Kind::FrontStationary => ProblemKind::FrontStationary,
            Kind::LinearAppendix => ProblemKind::LinearAppendix,
            Kind::TransientSine1d => ProblemKind::TransientSine1d,
            Kind::Phase1d => ProblemKind::Phase1d,
        };
        let mut c = ProblemConfig::new(kind);
        c.degree = self.degree;
        c.enrichment = self.enrichment;
        c.flux_family = self.flux.map(|f| match f {
            Flux::Rt => FluxFamily::Rt,
            Flux::VectorLagrange => FluxFamily::VectorLagrange,
        });
        c.d = self.d;
        c.lambda = self.lambda;
        c.mesh = self.mesh.as_ref().map(|m| [m[0], m[1]]);
        c.final_time = self.final_time;
        c.refinement = refinement;
        c.levels = self.levels;
        c.max_ndof = self.max_ndof;
        if let Some(v) = self.rtol {
            c.newton.rtol = v;
        }
        if let Some(v) = self.atol {
            c.newton.atol = v;
        }
        if let Some(v) = self.max_newton {
            c.newton.max_iter = v;
        }
        c.newton.gauss_newton = self.gauss_newton;
        if self.plain_norm {
            c.scaling = VNormScaling::Plain;
        }
        c.output_dir = self.out.clone();
        c.resolved()
    }
}

fn print_record(rec: &StudyRecord) {
    println!("{}", avsfe::CSV_COLUMNS.join(","));
    for r in &rec.rows {
        println!(
            "{},{:.6e},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
            r.level,
            r.h,
            r.ndof_solution,
            r.ndof_total,
            r.err_l2_u,
            r.err_h1_u,
            r.err_l2_q,
            r.err_l2_gradu,
            r.err_l2_flux,
            r.err_u_norm,
            r.estimate,
            r.newton_iters
        );
    }
    if let Some(rates) = &rec.rates {
        let last = |f: &avsfe::RateFit| f.intervals.last().copied().unwrap_or(f64::NAN);
        println!(
            "rates (last interval): l2_u {:.3}  h1_u {:.3}  l2_q {:.3}  gradu {:.3}  flux {:.3}  U {:.3}  estimate {:.3}",
            last(&rates.err_l2_u),
            last(&rates.err_h1_u),
            last(&rates.err_l2_q),
            last(&rates.err_l2_gradu),
            last(&rates.err_l2_flux),
            last(&rates.err_u_norm),
            last(&rates.estimate)
        );
    }
    for l in &rec.levels {
        println!(
            "level {}: {} elements, {} marked, u in [{:.4}, {:.4}], identity defect {:.2e}",
            l.level, l.num_elements, l.marked, l.u_bounds[0], l.u_bounds[1], l.identity_defect
        );
    }
}

fn run(cli: Cli) -> avsfe::Result<bool> {
    avsfe::configure_threads(cli.threads)?;
    let rec = match &cli.command {
        Command::Converge(o) => {
            let c = o.config(Refinement::Uniform)?;
            run_study(&c, c.output_dir.as_deref())?
        }
        Command::Adapt { opts, theta } => {
            let c = opts.config(Refinement::Adaptive { theta: *theta })?;
            run_study(&c, c.output_dir.as_deref())?
        }
        Command::Solve { opts, refinements } => {
            let c = opts.config(Refinement::Uniform)?;
            solve_single(&c, *refinements, c.output_dir.as_deref())?
        }
        Command::Infsup { opts, refinements } => {
            let mut c = opts.config(Refinement::Uniform)?;
            if opts.config.is_none() {
                c.kind = ProblemKind::LinearAppendix;
                c = c.resolved()?;
            }
            let r = infsup_probe(&c, *refinements)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            return Ok(true);
        }
    };
    print_record(&rec);
    if let Some(f) = &rec.failure {
        eprintln!("error: {f}");
        return Ok(false);
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
