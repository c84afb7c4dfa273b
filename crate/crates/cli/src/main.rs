use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex;
use vortexflow::finitedim::{BruteForceOptions, FdFlowConfig, LojasiewiczProbeOptions};
use vortexflow::stability::{ClassifyOptions, RayOptions};
use vortexflow::ActionSpec;
use vortexflow_cli::commands::{self, FiniteTask, Outcome};
use vortexflow_cli::config::{extract_overrides, ExperimentConfig};
use vortexflow_cli::CliError;

/// Gradient flow experiments for vortex equations on a lattice torus.
///
/// Configuration keys can be overridden with dotted flags, for example
/// `--grid.nx=64` or `--flow.scheme semi-implicit`. The thread count is read
/// from VORTEXFLOW_THREADS (default: available parallelism).
///
/// Exit codes: 0 success or converged, 1 analysis check failed, 2 flow hit
/// tmax, 3 blow-up, 4 step size underflow, 5 halted after --halt-at,
/// 64 configuration error, 74 i/o or file format error.
#[derive(Parser, Debug)]
#[command(name = "vortexflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the flow; writes timeseries.csv, snapshots, checkpoint.bin and report.json.
    Run(RunArgs),
    /// Weights of the initial pair along constant rays or the flow's dominant direction.
    Weights(WeightsArgs),
    /// Classify the flow limit (stable, polystable, semistable-only, unstable).
    Classify(ClassifyArgs),
    /// Compare flows from two points of one complexified orbit.
    Uniqueness(UniquenessArgs),
    /// Finite-dimensional oracle: the same action on a single point.
    Finitedim(FiniteArgs),
    /// Fit the decay of a time series column against its terminal value.
    Lojfit(LojfitArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Continue from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write output.dir/checkpoint.bin at the first state with t >= T and stop.
    #[arg(long, value_name = "T")]
    halt_at: Option<f64>,
}

#[derive(Args, Debug)]
struct RayArgs {
    /// First nonzero sample time of the ray.
    #[arg(long, default_value_t = 1e-2)]
    t_first: f64,
    /// Last sample time of the ray.
    #[arg(long, default_value_t = 1e12)]
    ray_t_max: f64,
    /// Relative convergence tolerance of the ray limit.
    #[arg(long, default_value_t = 1e-12)]
    ray_tol: f64,
    /// Values beyond this multiple of the scale with growing increments count as +inf.
    #[arg(long, default_value_t = 1e8)]
    divergence: f64,
}

impl RayArgs {
    fn options(&self) -> RayOptions<f64> {
        RayOptions { t_first: self.t_first, t_max: self.ray_t_max, tol: self.ray_tol, divergence: self.divergence }
    }
}

#[derive(Args, Debug)]
struct WeightsArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Constant ray direction, one value per factor (repeatable), e.g. --xi=-1.
    #[arg(long = "xi", value_name = "V1,V2,..", allow_hyphen_values = true)]
    xi: Vec<String>,
    /// Also run the flow and test the moment-weight inequality along xi_inf.
    #[arg(long)]
    from_flow: bool,
    #[command(flatten)]
    ray: RayArgs,
    /// Tolerance of the moment-weight inequality and equality checks.
    #[arg(long, default_value_t = 1e-2)]
    mw_tol: f64,
    /// Report file (default output.dir/weights.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Classify a stored pair instead of running the flow.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Criticality tolerance: limits with residual above 10x this are rejected.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// |Phi| below this counts as a zero of the moment residual.
    #[arg(long, default_value_t = 1e-5)]
    phi_tol: f64,
    /// Smallest singular value of the infinitesimal action below this counts as zero.
    #[arg(long, default_value_t = 1e-6)]
    sigma_tol: f64,
    #[arg(long, default_value_t = 300)]
    lanczos_steps: usize,
    /// Report file (default output.dir/classify.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct UniquenessArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Seed of the complex gauge (default analysis.uniqueness_gauge_seed).
    #[arg(long)]
    gauge_seed: Option<u64>,
    /// Largest admissible discrepancy of gauge-invariant limit observables.
    #[arg(long, default_value_t = 1e-4)]
    obs_tol: f64,
    /// Largest admissible difference of the terminal |Phi|.
    #[arg(long, default_value_t = 1e-6)]
    phi_tol: f64,
    /// Report file (default output.dir/uniqueness.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FiniteArgs {
    /// Take the group (weights, tau) from this configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight matrix, rows separated by ';', e.g. "1,0;0,1".
    #[arg(long, allow_hyphen_values = true)]
    weights: Option<String>,
    /// FI parameters, e.g. "1,3".
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<String>,
    /// Point of C^n; each entry is "re" or "re:im", e.g. "0,0" or "1:0.5,0".
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    #[arg(long, value_enum, default_value_t = FiniteTask::DominantWeight)]
    task: FiniteTask,
    /// Direction for --task weight.
    #[arg(long, allow_hyphen_values = true)]
    xi: Option<String>,
    /// Grid points per axis on each cube face of the brute-force search.
    #[arg(long, default_value_t = 41)]
    per_axis: usize,
    /// Compass-search starts taken from the best grid points.
    #[arg(long, default_value_t = 8)]
    refine: usize,
    /// Compass-search step at which refinement stops.
    #[arg(long, default_value_t = 1e-10)]
    bf_tol: f64,
    /// Horizon of the finite-dimensional flow.
    #[arg(long, default_value_t = 1e4)]
    t_max: f64,
    /// Flow stops once |grad F| falls below this (--task flow only).
    #[arg(long, default_value_t = 1e-10)]
    flow_tol: f64,
    #[command(flatten)]
    ray: RayArgs,
    /// Shell radii of the Lojasiewicz probe.
    #[arg(long, default_value = "0.1,0.03,0.01")]
    radii: String,
    #[arg(long, default_value_t = 64)]
    per_shell: usize,
    /// Fresh samples used to recheck the fitted inequality.
    #[arg(long, default_value_t = 1000)]
    fresh: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file (default ./finitedim.json).
    #[arg(long, default_value = "finitedim.json")]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct LojfitArgs {
    /// Time series CSV with a `t` column.
    #[arg(long)]
    series: PathBuf,
    #[arg(long, default_value = "ymh")]
    column: String,
    /// Ignore values within this of the terminal one (default 1e-11 * max(1, |f_end|)).
    #[arg(long)]
    floor: Option<f64>,
    /// Report file (default lojfit.json next to the series).
    #[arg(long)]
    report: Option<PathBuf>,
}

fn floats(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| CliError::Config(format!("{what}: cannot parse `{p}` as a number"))))
        .collect()
}

fn complexes(s: &str) -> Result<Vec<Complex<f64>>, CliError> {
    s.split(',')
        .map(|p| {
            let (re, im) = p.split_once(':').unwrap_or((p, "0"));
            let f = |v: &str| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("--x: cannot parse `{p}`")));
            Ok(Complex::new(f(re)?, f(im)?))
        })
        .collect()
}

fn finite_spec(a: &FiniteArgs, overrides: &[(String, String)]) -> Result<ActionSpec<f64>, CliError> {
    if let Some(path) = &a.config {
        if a.weights.is_some() || a.tau.is_some() {
            return Err(CliError::Config("give either --config or --weights/--tau, not both".into()));
        }
        return ExperimentConfig::load(path, overrides)?.spec();
    }
    let (Some(w), Some(t)) = (&a.weights, &a.tau) else {
        return Err(CliError::Config("finitedim needs --weights and --tau (or --config)".into()));
    };
    let rows: Vec<Vec<i64>> = w
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| v.trim().parse::<i64>().map_err(|_| CliError::Config(format!("--weights: bad entry `{v}`"))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let k = rows.len();
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config("--weights: rows differ in length".into()));
    }
    ActionSpec::new(k, n, rows.concat(), floats(t, "--tau")?, vec![0; k]).map_err(|e| CliError::Config(e.to_string()))
}

fn setup_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("VORTEXFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("VORTEXFLOW_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn dispatch(cmd: Command, overrides: &[(String, String)]) -> Result<Outcome, CliError> {
    let load = |c: &ConfigArg| ExperimentConfig::load(&c.config, overrides);
    let no_overrides = || {
        if overrides.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config("dotted configuration overrides need --config".into()))
        }
    };
    match cmd {
        Command::Run(a) => {
            let cfg = load(&a.config)?;
            commands::run(&cfg, &commands::RunOptions { resume: a.resume, halt_at: a.halt_at })
        }
        Command::Weights(a) => {
            let cfg = load(&a.config)?;
            let rays = a.xi.iter().map(|s| floats(s, "--xi")).collect::<Result<_, _>>()?;
            commands::weights(
                &cfg,
                &commands::WeightsOptions {
                    rays,
                    from_flow: a.from_flow,
                    ray: a.ray.options(),
                    mw_tol: a.mw_tol,
                    report: a.report,
                },
            )
        }
        Command::Classify(a) => {
            let cfg = load(&a.config)?;
            let opts = ClassifyOptions {
                tol: a.tol,
                phi_tol: a.phi_tol,
                sigma_tol: a.sigma_tol,
                lanczos_steps: a.lanczos_steps,
            };
            commands::classify(&cfg, &commands::ClassifyCmdOptions { snapshot: a.snapshot, opts, report: a.report })
        }
        Command::Uniqueness(a) => {
            let cfg = load(&a.config)?;
            commands::uniqueness(
                &cfg,
                &commands::UniquenessOptions {
                    gauge_seed: a.gauge_seed,
                    obs_tol: a.obs_tol,
                    phi_tol: a.phi_tol,
                    report: a.report,
                },
            )
        }
        Command::Finitedim(a) => {
            if a.config.is_none() {
                no_overrides()?;
            }
            let spec = finite_spec(&a, overrides)?;
            let flow = FdFlowConfig { t_max: a.t_max, tol: a.flow_tol, ..FdFlowConfig::default() };
            commands::finitedim(&commands::FiniteOptions {
                x: complexes(&a.x)?,
                spec,
                task: a.task,
                xi: a.xi.as_deref().map(|s| floats(s, "--xi")).transpose()?,
                brute: BruteForceOptions { per_axis: a.per_axis, refine: a.refine, tol: a.bf_tol },
                flow,
                ray: a.ray.options(),
                radii: floats(&a.radii, "--radii")?,
                probe: LojasiewiczProbeOptions { per_shell: a.per_shell, fresh: a.fresh, seed: a.seed },
                report: a.report,
            })
        }
        Command::Lojfit(a) => {
            no_overrides()?;
            commands::lojfit(&commands::LojfitOptions {
                series: a.series,
                column: a.column,
                floor: a.floor,
                report: a.report,
            })
        }
    }
}

fn main() -> ExitCode {
    let (args, overrides) = extract_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    let result = setup_threads().and_then(|_| dispatch(cli.command, &overrides));
    match result {
        Ok(o) => {
            println!("{}", o.summary);
            println!("report: {}", o.report.display());
            ExitCode::from(o.code as u8)
        }
        Err(e) => {
            eprintln!("vortexflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
