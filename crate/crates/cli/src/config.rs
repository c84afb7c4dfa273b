//! Experiment configuration: a TOML document with the key paths
//!
//! ```text
//! grid.{nx, ny, lx, ly}
//! group.{k, weights, tau, degrees}
//! init.{kind, seed, amplitude, gauge_amplitude, path}
//! flow.{scheme, representation, dt0, dt_max, dt_min, growth, tmax, tol,
//!       ymh_tol, enforce_ymh, snapshot_every}
//! analysis.{rays, loj_fit, uniqueness_gauge_seed, uniqueness_gauge_amplitude}
//! output.{dir, snapshot_format, checkpoint_every}
//! ```
//!
//! Unknown keys are rejected. Any key can be overridden from the command
//! line as `--grid.nx=64` or `--grid.nx 64`; the value is read as a TOML
//! value and falls back to a bare string.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use vortexflow::flow::{FlowConfig, Representation, Scheme};
use vortexflow::{ActionSpec, ComplexGauge, Grid64, Model64, Pair64};

use crate::error::CliError;
use crate::snapshot;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub group: GroupSection,
    pub init: InitSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "one")]
    pub lx: f64,
    #[serde(default = "one")]
    pub ly: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub k: usize,
    /// `k` rows of `n` integer weights.
    pub weights: Vec<Vec<i64>>,
    pub tau: Vec<f64>,
    /// Degree per factor; zeros when omitted.
    #[serde(default)]
    pub degrees: Vec<i64>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Random,
    Constant,
    VortexAnsatz,
    File,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub kind: InitKind,
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Size of the random imaginary gauge applied by the random init.
    #[serde(default = "half")]
    pub gauge_amplitude: f64,
    /// Snapshot to start from when `kind = "file"`.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub scheme: String,
    pub representation: String,
    pub dt0: f64,
    pub dt_max: Option<f64>,
    pub dt_min: f64,
    pub growth: f64,
    pub tmax: f64,
    pub tol: f64,
    pub ymh_tol: f64,
    pub enforce_ymh: bool,
    pub snapshot_every: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::<f64>::default();
        Self {
            scheme: d.scheme.to_string(),
            representation: d.representation.to_string(),
            dt0: d.dt0,
            dt_max: d.dt_max,
            dt_min: d.dt_min,
            growth: d.growth,
            tmax: d.t_max,
            tol: d.tol,
            ymh_tol: d.ymh_tol,
            enforce_ymh: d.enforce_ymh,
            snapshot_every: d.snapshot_every,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Constant ray directions, one value per group factor.
    pub rays: Vec<Vec<f64>>,
    pub loj_fit: bool,
    pub uniqueness_gauge_seed: Option<u64>,
    pub uniqueness_gauge_amplitude: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { rays: Vec::new(), loj_fit: true, uniqueness_gauge_seed: None, uniqueness_gauge_amplitude: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    Binary,
    Csv,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Not echoed into reports, so runs into different directories stay
    /// byte-identical.
    #[serde(skip_serializing)]
    pub dir: PathBuf,
    pub snapshot_format: SnapshotFormat,
    /// Steps between checkpoint rewrites; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), snapshot_format: SnapshotFormat::Binary, checkpoint_every: 0 }
    }
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

/// Splits `--a.b=v` / `--a.b v` override flags out of an argument list.
/// Everything else is returned untouched for the regular parser.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(a);
            continue;
        }
        let value = inline.or_else(|| it.next()).unwrap_or_default();
        overrides.push((key, value));
    }
    (rest, overrides)
}

fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw));
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides and validates.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.grid()?;
        let gr = &self.group;
        if gr.weights.len() != gr.k {
            return bad(format!("group.weights has {} rows but group.k = {}", gr.weights.len(), gr.k));
        }
        let n = gr.weights.first().map(Vec::len).unwrap_or(0);
        if gr.weights.iter().any(|r| r.len() != n) {
            return bad("group.weights rows must all have the same length n".into());
        }
        if gr.tau.len() != gr.k {
            return bad(format!("group.tau has {} entries but group.k = {}", gr.tau.len(), gr.k));
        }
        if !gr.degrees.is_empty() && gr.degrees.len() != gr.k {
            return bad(format!("group.degrees has {} entries but group.k = {}", gr.degrees.len(), gr.k));
        }
        let init = &self.init;
        match init.kind {
            InitKind::Random if init.seed.is_none() => {
                return bad("init.seed is required when init.kind = \"random\"".into())
            }
            InitKind::File if init.path.is_none() => {
                return bad("init.path is required when init.kind = \"file\"".into())
            }
            _ => {}
        }
        if !init.amplitude.is_finite() || !init.gauge_amplitude.is_finite() {
            return bad("init.amplitude and init.gauge_amplitude must be finite".into());
        }
        for (i, r) in self.analysis.rays.iter().enumerate() {
            if r.len() != gr.k {
                return bad(format!("analysis.rays[{i}] has {} entries but group.k = {}", r.len(), gr.k));
            }
        }
        self.flow_config()?;
        self.model()?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.group.weights.first().map(Vec::len).unwrap_or(0)
    }

    pub fn spec(&self) -> Result<ActionSpec<f64>, CliError> {
        let gr = &self.group;
        let degrees = if gr.degrees.is_empty() { vec![0; gr.k] } else { gr.degrees.clone() };
        let weights = gr.weights.iter().flatten().copied().collect();
        ActionSpec::new(gr.k, self.n(), weights, gr.tau.clone(), degrees)
            .map_err(|e| CliError::Config(format!("group: {e}")))
    }

    pub fn grid(&self) -> Result<Grid64, CliError> {
        let g = &self.grid;
        Grid64::new(g.nx, g.ny, g.lx, g.ly).map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn model(&self) -> Result<Model64, CliError> {
        Model64::new(self.grid()?, self.spec()?).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn flow_config(&self) -> Result<FlowConfig<f64>, CliError> {
        let f = &self.flow;
        let scheme = Scheme::from_str(&f.scheme).map_err(|e| CliError::Config(format!("flow.scheme: {e}")))?;
        let representation = Representation::from_str(&f.representation)
            .map_err(|e| CliError::Config(format!("flow.representation: {e}")))?;
        let cfg = FlowConfig {
            scheme,
            representation,
            dt0: f.dt0,
            dt_max: f.dt_max,
            dt_min: f.dt_min,
            growth: f.growth,
            t_max: f.tmax,
            tol: f.tol,
            ymh_tol: f.ymh_tol,
            enforce_ymh: f.enforce_ymh,
            snapshot_every: f.snapshot_every,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("flow: {e}")))?;
        Ok(cfg)
    }

    /// Deterministic initial pair.
    pub fn initial_pair(&self, model: &Model64) -> Result<Pair64, CliError> {
        let init = &self.init;
        Ok(match init.kind {
            InitKind::Random => {
                let seed = init.seed.ok_or_else(|| CliError::Config("init.seed is required".into()))?;
                model.random_holomorphic_pair(seed, init.amplitude, init.gauge_amplitude)
            }
            InitKind::Constant => {
                let mut p = model.zero_pair();
                p.u.data.iter_mut().for_each(|z| *z = Complex::new(init.amplitude, 0.0));
                p
            }
            InitKind::VortexAnsatz => model.holomorphic_pair(init.amplitude),
            InitKind::File => {
                let path = init.path.as_ref().ok_or_else(|| CliError::Config("init.path is required".into()))?;
                let snap = snapshot::read_snapshot(path)?;
                if snap.grid != model.grid || snap.spec != model.spec {
                    return Err(CliError::Config(format!(
                        "init.path {}: snapshot grid or group differs from the configuration",
                        path.display()
                    )));
                }
                snap.pair
            }
        })
    }

    /// Seeded complex gauge for the uniqueness experiment.
    pub fn uniqueness_gauge(&self, grid: &Grid64, seed: u64) -> ComplexGauge<f64> {
        let k = self.group.k;
        let mut r = vortexflow::rng::stream(seed, 29);
        let s = vortexflow::rng::smooth_site_field(grid, k, 2, self.analysis.uniqueness_gauge_amplitude, &mut r);
        let theta = vortexflow::rng::smooth_site_field(grid, k, 2, 1.0, &mut r);
        ComplexGauge { s, theta }
    }
}
