//! Command implementations. Each writes one JSON report and returns an exit
//! code with a short human-readable summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde_json::{json, Value};
use vortexflow::finitedim::{
    fd_dominant_weight_bruteforce, fd_flow, fd_lojasiewicz_probe, fd_ray_weight, fd_weight, BruteForceOptions,
    FdFlowConfig, FinitePoint, LojasiewiczProbeOptions,
};
use vortexflow::flow::{
    dominant_weight_estimate, lojasiewicz_fit, run_flow, ymh_decay_fit, DecayKind, Flow, FlowState, GaugePath,
    LojasiewiczFit, SeriesRow, Terminal,
};
use vortexflow::stability::{
    classify_limit, classify_run, moment_weight_check, ness_uniqueness_test, weight, Boundedness, ClassifyOptions,
    RayOptions, WeightResult, WeightValue,
};
use vortexflow::{ActionSpec, SiteField64};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::snapshot::{self, Checkpoint, Snapshot};

/// Result of a command that ran to completion.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub summary: String,
    pub report: PathBuf,
}

pub const TIMESERIES_COLUMNS: [&str; 7] = ["t", "ymh", "f_moment", "dbar_resid", "phi_l2", "sup_u2", "kn_value"];
/// Ratio between successive recorded gauge samples, as in `run_flow`.
const PATH_RATIO: f64 = 1.02;

pub fn exit_code(t: Terminal) -> i32 {
    match t {
        Terminal::Converged => 0,
        Terminal::MaxTimeReached => 2,
        Terminal::BlowUp => 3,
        Terminal::Stalled => 4,
        Terminal::Halted => 5,
    }
}

/// JSON number, or a string for non-finite values (JSON has no infinity).
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("+inf")
    } else {
        json!("-inf")
    }
}

fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

fn component_means(xi: &SiteField64) -> Vec<f64> {
    (0..xi.comps).map(|a| xi.mean(a)).collect()
}

fn fit_json(f: &LojasiewiczFit) -> Value {
    json!({
        "gamma": num(f.gamma),
        "kind": match f.kind { DecayKind::Exponential => "exponential", DecayKind::PowerLaw => "power-law" },
        "r2": num(f.r2),
        "rate": num(f.rate),
        "window": [num(f.window.0), num(f.window.1)],
    })
}

fn write_report(path: &Path, v: &Value) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    let mut text = serde_json::to_string_pretty(v).map_err(CliError::analysis)?;
    text.push('\n');
    snapshot::write_atomic(path, text.as_bytes())
}

fn report_path(cfg: Option<&ExperimentConfig>, explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| match cfg {
        Some(c) => c.output.dir.join(format!("{name}.json")),
        None => PathBuf::from(format!("{name}.json")),
    })
}

fn config_json(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    serde_json::to_value(cfg).map_err(CliError::analysis)
}

pub fn write_timeseries(path: &Path, rows: &[SeriesRow<f64>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Format { path: path.to_path_buf(), msg: e.to_string() };
    w.write_record(TIMESERIES_COLUMNS).map_err(io)?;
    for r in rows {
        let f = [r.t, r.ymh, r.f_moment, r.dbar_resid, r.phi_l2, r.sup_u2, r.kn_value];
        w.write_record(f.iter().map(|v| format!("{v:e}"))).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    snapshot::write_atomic(path, &bytes)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint instead of the configured start.
    pub resume: Option<PathBuf>,
    /// Write a checkpoint and stop at the first accepted state with `t >=`
    /// this value.
    pub halt_at: Option<f64>,
}

/// Integrates the flow and writes `timeseries.csv`, snapshots, a final
/// snapshot, `checkpoint.bin` and `report.json` into `output.dir`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let fcfg = cfg.flow_config()?;
    let dir = cfg.output.dir.clone();
    let format = cfg.output.snapshot_format;
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    if fcfg.snapshot_every > 0 {
        let sd = dir.join("snapshots");
        std::fs::create_dir_all(&sd).map_err(CliError::io(&sd))?;
    }

    let (initial, mut rows, mut path, resumed_from) = match &opts.resume {
        Some(p) => {
            let ck = snapshot::read_checkpoint(p)?;
            if ck.current.grid != model.grid || ck.current.spec != model.spec {
                return Err(CliError::Config(format!(
                    "checkpoint {} was written for a different grid or group",
                    p.display()
                )));
            }
            let st = ck.state(&model);
            let mut rows = ck.rows;
            // The resumed run reports the restored state again as its first row.
            rows.pop();
            let mut path = GaugePath::new(PATH_RATIO);
            path.samples = ck.path;
            (st, rows, path, Some(ck.current.t))
        }
        None => {
            let pair = cfg.initial_pair(&model)?;
            (FlowState::new(&model, pair, fcfg.dt0), Vec::new(), GaugePath::new(PATH_RATIO), None)
        }
    };

    let flow = Flow::new(&model, fcfg.clone(), &initial.origin).map_err(|e| CliError::Config(e.to_string()))?;
    let start_steps = initial.steps;
    let ckpt_path = dir.join("checkpoint.bin");
    let mut failure: Option<CliError> = None;
    let checkpoint = |st: &FlowState<f64>, rows: &[SeriesRow<f64>], path: &GaugePath<f64>| Checkpoint {
        current: Snapshot { t: st.t, grid: model.grid, spec: model.spec.clone(), pair: st.pair.clone() },
        origin: st.origin.clone(),
        gauge: st.gauge.clone(),
        dt: st.dt,
        steps: st.steps,
        rows: rows.to_vec(),
        path: path.samples.clone(),
    };

    let report = flow.run_until(initial, |st| {
        path.record(st);
        rows.push(st.row(&model));
        let fresh = st.steps > start_steps;
        let io = || -> Result<bool, CliError> {
            if fresh && fcfg.snapshot_every > 0 && st.steps % fcfg.snapshot_every == 0 {
                let snap = Snapshot { t: st.t, grid: model.grid, spec: model.spec.clone(), pair: st.pair.clone() };
                snapshot::write_snapshot(&snapshot::snapshot_path(&dir, st.steps, format), &snap, format)?;
            }
            let every = cfg.output.checkpoint_every;
            if fresh && every > 0 && st.steps % every == 0 {
                snapshot::write_checkpoint(&ckpt_path, &checkpoint(st, &rows, &path))?;
            }
            if let Some(h) = opts.halt_at {
                if fresh && st.t >= h {
                    snapshot::write_checkpoint(&ckpt_path, &checkpoint(st, &rows, &path))?;
                    return Ok(false);
                }
            }
            Ok(true)
        };
        match io() {
            Ok(go) => go,
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let fin = &report.final_state;
    if report.terminal != Terminal::Halted {
        path.force_record(fin);
        snapshot::write_checkpoint(&ckpt_path, &checkpoint(fin, &rows, &path))?;
    }
    write_timeseries(&dir.join("timeseries.csv"), &rows)?;
    let final_snap = Snapshot { t: fin.t, grid: model.grid, spec: model.spec.clone(), pair: fin.pair.clone() };
    let final_path = dir.join(format!("final.{}", snapshot::snapshot_extension(format)));
    snapshot::write_snapshot(&final_path, &final_snap, format)?;

    let xi_inf = dominant_weight_estimate(&model.grid, &path).ok();
    let fit = if cfg.analysis.loj_fit { ymh_decay_fit(&rows).ok() } else { None };
    let max_inc = rows.windows(2).map(|w| w[1].ymh - w[0].ymh).fold(f64::NEG_INFINITY, f64::max);
    let max_sup = rows.iter().map(|r| r.sup_u2).fold(f64::NEG_INFINITY, f64::max);
    let phi = fin.phi_norm(&model);
    let code = exit_code(report.terminal);
    let integral_u2: Vec<f64> = (0..model.n())
        .map(|j| {
            let n = model.grid.len();
            fin.pair.u.data[j * n..(j + 1) * n].iter().map(|z| z.norm_sqr()).sum::<f64>() * model.grid.cell_area()
        })
        .collect();
    let v = json!({
        "command": "run",
        "terminal": report.terminal.token(),
        "exit_code": code,
        "error": report.error.as_ref().map(|e| e.to_string()),
        "resumed_from_t": resumed_from.map(num),
        "t": num(fin.t),
        "steps": fin.steps,
        "rejected_steps_this_segment": report.rejected_steps,
        "dt_cap": num(flow.dt_cap()),
        "phi_l2": num(phi),
        "grad_norm": num(fin.grad_norm),
        "ymh": num(fin.energies.ymh),
        "f_moment": num(fin.energies.f_moment),
        "dbar_resid": num(fin.dbar_resid),
        "integral_abs_u_sq": nums(&integral_u2),
        "max_ymh_increase": num(max_inc),
        "sup_bound": num(report.sup_bound),
        "max_sup_u2": num(max_sup),
        "xi_inf": xi_inf.as_ref().map(|x| json!({
            "component_means": nums(&component_means(x)),
            "l2_norm": num(x.norm(&model.grid)),
            "sup_deviation_from_mean": num((0..x.comps).map(|a| {
                let m = x.mean(a);
                x.comp(a).iter().fold(0.0_f64, |acc, v| acc.max((v - m).abs()))
            }).fold(0.0, f64::max)),
        })),
        "lojasiewicz": fit.as_ref().map(fit_json),
        "config": config_json(cfg)?,
    });
    let report_file = dir.join("report.json");
    write_report(&report_file, &v)?;
    let mut s = String::new();
    let _ = writeln!(s, "run: {} at t = {:.6e} after {} steps", report.terminal.token(), fin.t, fin.steps);
    let _ = writeln!(s, "  |Phi|_L2 = {phi:.3e}, |grad F| = {:.3e}, ymh = {:.9e}", fin.grad_norm, fin.energies.ymh);
    let _ = writeln!(s, "  max ymh increase = {max_inc:.3e}, sup|u|^2 = {max_sup:.6e} (bound {:.6e})", report.sup_bound);
    if let Some(x) = &xi_inf {
        let _ = writeln!(s, "  xi_inf means = {:?}, |xi_inf| = {:.6e}", component_means(x), x.norm(&model.grid));
    }
    if let Some(f) = &fit {
        let _ = writeln!(s, "  decay fit: gamma = {:.4}, R^2 = {:.5}, rate = {:.4e}", f.gamma, f.r2, f.rate);
    }
    let _ = write!(s, "  outputs in {}", dir.display());
    Ok(Outcome { code, summary: s, report: report_file })
}

fn weight_json(w: &WeightResult<f64>) -> Value {
    json!({
        "value": match w.value { WeightValue::Finite(v) => num(v), WeightValue::PlusInfinity => json!("+inf") },
        "connection_part": num(w.split.0),
        "section_part": num(w.split.1),
        "error_estimate": num(w.error_estimate),
        "moment_along_ray": match w.mu_bounded {
            Boundedness::Bounded => "bounded",
            Boundedness::Unbounded => "unbounded",
            Boundedness::Inconclusive => "inconclusive",
        },
        "samples": w.samples.len(),
    })
}

fn show_weight(v: &WeightValue<f64>) -> String {
    match v {
        WeightValue::Finite(x) => format!("{x:.12e}"),
        WeightValue::PlusInfinity => "+inf".into(),
    }
}

#[derive(Clone, Debug)]
pub struct WeightsOptions {
    /// Constant directions, one value per factor; empty uses `analysis.rays`.
    pub rays: Vec<Vec<f64>>,
    /// Also run the flow and evaluate the weight along its dominant direction.
    pub from_flow: bool,
    pub ray: RayOptions<f64>,
    /// Slack allowed in the moment-weight inequality.
    pub mw_tol: f64,
    pub report: Option<PathBuf>,
}

/// Weights of the configured initial pair along constant rays and, with
/// `from_flow`, along the dominant direction extracted from the flow.
pub fn weights(cfg: &ExperimentConfig, o: &WeightsOptions) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let x = cfg.initial_pair(&model)?;
    let rays = if o.rays.is_empty() { cfg.analysis.rays.clone() } else { o.rays.clone() };
    if rays.is_empty() && !o.from_flow {
        return Err(CliError::Config("no rays: pass --xi or set analysis.rays (or use --from-flow)".into()));
    }
    let mut out = Vec::new();
    let mut s = String::from("weights:");
    for r in &rays {
        if r.len() != model.k() {
            return Err(CliError::Config(format!("ray {r:?} has {} entries, group.k = {}", r.len(), model.k())));
        }
        let xi = SiteField64::constant(&model.grid, r);
        let w = weight(&model, &x, &xi, &o.ray).map_err(CliError::analysis)?;
        let _ = write!(s, "\n  xi = {r:?}: w = {}", show_weight(&w.value));
        let mut e = weight_json(&w);
        e["xi"] = nums(r);
        out.push(e);
    }
    let mut flow_part = Value::Null;
    if o.from_flow {
        let fcfg = cfg.flow_config()?;
        let (rep, _) = run_flow(&model, &x, &fcfg).map_err(CliError::analysis)?;
        let phi = rep.final_state.phi_norm(&model);
        let xi = rep
            .xi_inf
            .ok_or_else(|| CliError::Analysis("the flow gauge did not settle on a dominant direction".into()))?;
        let w = weight(&model, &x, &xi, &o.ray).map_err(CliError::analysis)?;
        let mw = moment_weight_check(&model, &xi, &w, phi, o.mw_tol, Some(o.mw_tol)).map_err(CliError::analysis)?;
        let _ = write!(
            s,
            "\n  xi_inf (|xi| = {:.6e}): w = {}; -w/|xi| = {:.9e} vs |Phi_inf| = {phi:.9e}",
            xi.norm(&model.grid),
            show_weight(&w.value),
            mw.lhs
        );
        flow_part = json!({
            "terminal": rep.terminal.token(),
            "phi_l2": num(phi),
            "xi_inf_component_means": nums(&component_means(&xi)),
            "xi_inf_l2_norm": num(xi.norm(&model.grid)),
            "weight": weight_json(&w),
            "moment_weight": {
                "lhs": num(mw.lhs), "rhs": num(mw.rhs), "slack": num(mw.slack), "equality": mw.equality,
            },
        });
    }
    let v = json!({
        "command": "weights",
        "rays": out,
        "from_flow": flow_part,
        "options": {
            "t_first": num(o.ray.t_first), "t_max": num(o.ray.t_max), "tol": num(o.ray.tol),
            "divergence": num(o.ray.divergence), "mw_tol": num(o.mw_tol),
        },
        "config": config_json(cfg)?,
    });
    let report = report_path(Some(cfg), o.report.clone(), "weights");
    write_report(&report, &v)?;
    Ok(Outcome { code: 0, summary: s, report })
}

#[derive(Clone, Debug)]
pub struct ClassifyCmdOptions {
    /// Classify this stored pair instead of running the flow.
    pub snapshot: Option<PathBuf>,
    pub opts: ClassifyOptions<f64>,
    pub report: Option<PathBuf>,
}

pub fn classify(cfg: &ExperimentConfig, o: &ClassifyCmdOptions) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let (verdict, terminal) = match &o.snapshot {
        Some(p) => {
            let snap = snapshot::read_snapshot(p)?;
            if snap.grid != model.grid || snap.spec != model.spec {
                return Err(CliError::Config(format!("snapshot {} does not match the configuration", p.display())));
            }
            (classify_limit(&model, &snap.pair, &o.opts).map_err(CliError::analysis)?, None)
        }
        None => {
            let x = cfg.initial_pair(&model)?;
            let (rep, path) = run_flow(&model, &x, &cfg.flow_config()?).map_err(CliError::analysis)?;
            (classify_run(&model, &rep, &path, &o.opts).map_err(CliError::analysis)?, Some(rep.terminal))
        }
    };
    let v = json!({
        "command": "classify",
        "class": verdict.class.token(),
        "phi_l2": num(verdict.phi_norm),
        "sigma_min": num(verdict.sigma_min),
        "criticality_residual": num(verdict.residual),
        "flow_terminal": terminal.map(|t| t.token()),
        "options": {
            "tol": num(o.opts.tol), "phi_tol": num(o.opts.phi_tol),
            "sigma_tol": num(o.opts.sigma_tol), "lanczos_steps": o.opts.lanczos_steps,
        },
        "config": config_json(cfg)?,
    });
    let report = report_path(Some(cfg), o.report.clone(), "classify");
    write_report(&report, &v)?;
    let summary = format!(
        "classify: {} (|Phi| = {:.3e}, sigma_min = {:.3e}, residual = {:.3e})",
        verdict.class.token(),
        verdict.phi_norm,
        verdict.sigma_min,
        verdict.residual
    );
    Ok(Outcome { code: 0, summary, report })
}

#[derive(Clone, Debug)]
pub struct UniquenessOptions {
    pub gauge_seed: Option<u64>,
    /// Largest admissible discrepancy of the limit observables.
    pub obs_tol: f64,
    /// Largest admissible difference of the terminal `|Phi|`.
    pub phi_tol: f64,
    pub report: Option<PathBuf>,
}

/// Flows from the initial pair and from a seeded complex-gauge transform of
/// it; exits 1 when the limits disagree beyond the tolerances.
pub fn uniqueness(cfg: &ExperimentConfig, o: &UniquenessOptions) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let seed = o.gauge_seed.or(cfg.analysis.uniqueness_gauge_seed).ok_or_else(|| {
        CliError::Config("uniqueness needs a gauge seed: --gauge-seed or analysis.uniqueness_gauge_seed".into())
    })?;
    let x = cfg.initial_pair(&model)?;
    let g = cfg.uniqueness_gauge(&model.grid, seed);
    let r = ness_uniqueness_test(&model, &x, &g, &cfg.flow_config()?).map_err(CliError::analysis)?;
    let phi_gap = (r.phi_norms.0 - r.phi_norms.1).abs();
    let agree = r.discrepancy <= o.obs_tol && phi_gap <= o.phi_tol;
    let per: serde_json::Map<String, Value> = r.per_observable.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
    let v = json!({
        "command": "uniqueness",
        "gauge_seed": seed,
        "discrepancy": num(r.discrepancy),
        "per_observable": per,
        "translation": [r.shift.0, r.shift.1],
        "phi_l2": [num(r.phi_norms.0), num(r.phi_norms.1)],
        "phi_l2_difference": num(phi_gap),
        "terminals": [r.terminals.0.token(), r.terminals.1.token()],
        "agree": agree,
        "options": { "obs_tol": num(o.obs_tol), "phi_tol": num(o.phi_tol) },
        "config": config_json(cfg)?,
    });
    let report = report_path(Some(cfg), o.report.clone(), "uniqueness");
    write_report(&report, &v)?;
    let summary = format!(
        "uniqueness: {} (observable discrepancy {:.3e}, |Phi| difference {:.3e}, terminals {}/{})",
        if agree { "limits agree" } else { "limits DISAGREE" },
        r.discrepancy,
        phi_gap,
        r.terminals.0.token(),
        r.terminals.1.token()
    );
    Ok(Outcome { code: if agree { 0 } else { 1 }, summary, report })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FiniteTask {
    /// Brute-force maximiser of -w/|xi| and the flow-extracted direction.
    DominantWeight,
    /// Closed-form and ray-limit weight along `--xi`.
    Weight,
    /// Adaptive flow of the moment-map-squared function.
    Flow,
    /// Lojasiewicz probe around a critical point.
    Probe,
}

#[derive(Clone, Debug)]
pub struct FiniteOptions {
    pub spec: ActionSpec<f64>,
    pub x: Vec<Complex<f64>>,
    pub task: FiniteTask,
    pub xi: Option<Vec<f64>>,
    pub brute: BruteForceOptions<f64>,
    pub flow: FdFlowConfig<f64>,
    pub ray: RayOptions<f64>,
    pub radii: Vec<f64>,
    pub probe: LojasiewiczProbeOptions,
    pub report: PathBuf,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn wv(v: &WeightValue<f64>) -> Value {
    match v {
        WeightValue::Finite(x) => num(*x),
        WeightValue::PlusInfinity => json!("+inf"),
    }
}

pub fn finitedim(o: &FiniteOptions) -> Result<Outcome, CliError> {
    let p = FinitePoint::new(o.spec.clone(), o.x.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let point = json!({
        "x": o.x.iter().map(|z| json!([num(z.re), num(z.im)])).collect::<Vec<_>>(),
        "weights": o.spec.weights, "k": o.spec.k, "n": o.spec.n, "tau": nums(&o.spec.tau),
    });
    let (body, summary) = match o.task {
        FiniteTask::DominantWeight => {
            let (dir, value) = fd_dominant_weight_bruteforce(&p, &o.brute).map_err(CliError::analysis)?;
            let mut fcfg = o.flow;
            fcfg.tol = 0.0;
            let traj = fd_flow(&p, &fcfg).map_err(CliError::analysis)?;
            let xi = traj.dominant_weight();
            let xn = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            let c = cosine(&dir, &xi);
            (
                json!({
                    "bruteforce": { "direction": nums(&dir), "value": num(value) },
                    "flow": { "xi_inf": nums(&xi), "norm": num(xn), "t_max": num(traj.final_time()) },
                    "cosine": num(c),
                    "value_difference": num((value - xn).abs()),
                }),
                format!(
                    "finitedim dominant weight: brute force {value:.12} along {dir:?}; flow |xi_inf| = {xn:.12}, cosine {c:.9}"
                ),
            )
        }
        FiniteTask::Weight => {
            let xi = o.xi.as_ref().ok_or_else(|| CliError::Config("--task weight needs --xi".into()))?;
            let closed = fd_weight(&p, xi).map_err(CliError::analysis)?;
            let ray = fd_ray_weight(&p, xi, &o.ray).map_err(CliError::analysis)?;
            let diff = match (closed, ray) {
                (WeightValue::Finite(a), WeightValue::Finite(b)) => num((a - b).abs()),
                (WeightValue::PlusInfinity, WeightValue::PlusInfinity) => num(0.0),
                _ => num(f64::INFINITY),
            };
            (
                json!({ "xi": nums(xi), "closed_form": wv(&closed), "ray_limit": wv(&ray), "difference": diff }),
                format!("finitedim weight along {xi:?}: closed form {}, ray limit {}", show_weight(&closed), show_weight(&ray)),
            )
        }
        FiniteTask::Flow => {
            let traj = fd_flow(&p, &o.flow).map_err(CliError::analysis)?;
            let lim = traj.limit();
            let mu = vortexflow::finitedim::fd_moment(&o.spec, lim);
            let last_mu = traj.mu_norms.last().copied().unwrap_or(f64::NAN);
            (
                json!({
                    "converged": traj.converged,
                    "t": num(traj.final_time()),
                    "steps": traj.ts.len() - 1,
                    "limit": lim.iter().map(|z| json!([num(z.re), num(z.im)])).collect::<Vec<_>>(),
                    "moment": nums(&mu),
                    "moment_norm": num(last_mu),
                    "gauge": nums(traj.gauge.last().map(Vec::as_slice).unwrap_or(&[])),
                }),
                format!(
                    "finitedim flow: {} at t = {:.6e}, |mu| = {last_mu:.6e}",
                    if traj.converged { "converged" } else { "horizon reached" },
                    traj.final_time()
                ),
            )
        }
        FiniteTask::Probe => {
            let pr = fd_lojasiewicz_probe(&p, &o.radii, &o.probe).map_err(CliError::analysis)?;
            (
                json!({
                    "gamma": num(pr.gamma), "c": num(pr.c), "r2": num(pr.r2), "samples": pr.samples.len(),
                    "revalidated": pr.revalidated, "violations": pr.violations, "radii": nums(&o.radii),
                }),
                format!(
                    "finitedim probe: gamma = {:.5}, C = {:.5e}, R^2 = {:.5}, {} violations in {} fresh samples",
                    pr.gamma, pr.c, pr.r2, pr.violations, pr.revalidated
                ),
            )
        }
    };
    let v = json!({ "command": "finitedim", "task": format!("{:?}", o.task), "point": point, "result": body });
    write_report(&o.report, &v)?;
    Ok(Outcome { code: 0, summary, report: o.report.clone() })
}

#[derive(Clone, Debug)]
pub struct LojfitOptions {
    pub series: PathBuf,
    pub column: String,
    /// Values of `f - f_end` at or below this are ignored; default
    /// `1e-11 * max(1, |f_end|)`.
    pub floor: Option<f64>,
    pub report: Option<PathBuf>,
}

/// Decay fit of one column of a time series against its terminal value.
pub fn lojfit(o: &LojfitOptions) -> Result<Outcome, CliError> {
    let fmt = |msg: String| CliError::Format { path: o.series.clone(), msg };
    let mut rd = csv::Reader::from_path(&o.series).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::Io { path: o.series.clone(), source: io },
        other => fmt(format!("{other:?}")),
    })?;
    let headers = rd.headers().map_err(|e| fmt(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("column `{name}` not in {}", o.series.display())))
    };
    let (it, ic) = (col("t")?, col(&o.column)?);
    let (mut ts, mut fs) = (Vec::new(), Vec::new());
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let parse = |j: usize| -> Result<f64, CliError> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| fmt(format!("row {i}: field {j} is not a number")))
        };
        ts.push(parse(it)?);
        fs.push(parse(ic)?);
    }
    let last = *fs.last().ok_or_else(|| fmt("empty series".into()))?;
    let floor = o.floor.unwrap_or(1e-11 * last.abs().max(1.0));
    let shifted: Vec<f64> = fs.iter().map(|f| f - last).collect();
    let fit = lojasiewicz_fit(&ts, &shifted, floor).map_err(CliError::analysis)?;
    let v = json!({
        "command": "lojfit",
        "column": o.column,
        "rows": ts.len(),
        "floor": num(floor),
        "fit": fit_json(&fit),
    });
    let report = o.report.clone().unwrap_or_else(|| {
        o.series.parent().unwrap_or(Path::new(".")).join("lojfit.json")
    });
    write_report(&report, &v)?;
    let summary = format!(
        "lojfit: {} decay, gamma = {:.4}, R^2 = {:.5}, rate = {:.4e} over t in [{:.3e}, {:.3e}]",
        match fit.kind {
            DecayKind::Exponential => "exponential",
            DecayKind::PowerLaw => "power-law",
        },
        fit.gamma,
        fit.r2,
        fit.rate,
        fit.window.0,
        fit.window.1
    );
    Ok(Outcome { code: 0, summary, report })
}

