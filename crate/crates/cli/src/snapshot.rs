//! Snapshot and checkpoint files.
//!
//! Binary snapshot, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "VFXSNAP\0"
//! version    u32      (SCHEMA_VERSION)
//! reserved   u32      0
//! grid       u64 nx, u64 ny, f64 lx, f64 ly
//! group      u64 k, u64 n, i64 weights[k*n] (row a = factor a),
//!            f64 tau[k], i64 degrees[k]
//! t          f64
//! u          n blocks of nx*ny (f64 re, f64 im), site index i + nx*j
//! a          k blocks of nx*ny f64 x-links, then k blocks of y-links
//! ```
//!
//! CSV snapshot: `#`-prefixed header lines (`vortexflow-snapshot`,
//! `version`, `grid`, `group`, `t`), a column header, then one row per site
//! `i,j,u0_re,u0_im,...,ax0,...,ay0,...`. Floats are written in shortest
//! round-trip form, so both formats reproduce the state bit for bit.
//!
//! A checkpoint holds everything needed to continue a run exactly: the
//! current and starting pairs (as embedded binary snapshots), the tracked
//! gauge, the trial step, counters, the series so far and the recorded
//! gauge path.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use vortexflow::flow::{FlowState, SeriesRow};
use vortexflow::{ActionSpec, ComplexGauge, Grid64, LinkField64, Model64, Pair64, SiteField64};

use crate::config::SnapshotFormat;
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
const SNAP_MAGIC: &[u8; 8] = b"VFXSNAP\0";
const CKPT_MAGIC: &[u8; 8] = b"VFXCKPT\0";
const CSV_TAG: &str = "# vortexflow-snapshot";

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub grid: Grid64,
    pub spec: ActionSpec<f64>,
    pub pair: Pair64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub current: Snapshot,
    pub origin: Pair64,
    pub gauge: ComplexGauge<f64>,
    pub dt: f64,
    pub steps: usize,
    pub rows: Vec<SeriesRow<f64>>,
    pub path: Vec<(f64, SiteField64)>,
}

impl Checkpoint {
    pub fn state(&self, model: &Model64) -> FlowState<f64> {
        FlowState::assemble(
            model,
            self.current.t,
            self.current.pair.clone(),
            self.origin.clone(),
            self.gauge.clone(),
            self.dt,
            self.steps,
        )
    }
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Dec<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Dec<'a> {
    fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::Format { path: self.path.to_path_buf(), msg: msg.into() }
    }
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CliError> {
        let end = self.pos + N;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| self.err(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s.try_into().expect("slice of length N"))
    }
    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn usize(&mut self) -> Result<usize, CliError> {
        let v = self.u64()?;
        // Every counted item takes at least one byte, which bounds
        // allocations driven by a corrupt count.
        if v > self.bytes.len() as u64 {
            return Err(self.err(format!("implausible count {v}")));
        }
        Ok(v as usize)
    }
    fn i64(&mut self) -> Result<i64, CliError> {
        Ok(i64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        if self.bytes.len().saturating_sub(self.pos) < n * 8 {
            return Err(self.err(format!("truncated: {n} floats expected at byte {}", self.pos)));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn encode_snapshot(e: &mut Enc, s: &Snapshot) {
    e.0.extend_from_slice(SNAP_MAGIC);
    e.u32(SCHEMA_VERSION);
    e.u32(0);
    e.usize(s.grid.nx);
    e.usize(s.grid.ny);
    e.f64(s.grid.lx);
    e.f64(s.grid.ly);
    e.usize(s.spec.k);
    e.usize(s.spec.n);
    s.spec.weights.iter().for_each(|&w| e.i64(w));
    e.f64s(&s.spec.tau);
    s.spec.degrees.iter().for_each(|&d| e.i64(d));
    e.f64(s.t);
    for z in &s.pair.u.data {
        e.f64(z.re);
        e.f64(z.im);
    }
    e.f64s(&s.pair.a.x);
    e.f64s(&s.pair.a.y);
}

fn decode_snapshot(d: &mut Dec) -> Result<Snapshot, CliError> {
    if &d.take::<8>()? != SNAP_MAGIC {
        return Err(d.err("not a vortexflow binary snapshot (bad magic)"));
    }
    let version = d.u32()?;
    if version != SCHEMA_VERSION {
        return Err(d.err(format!("snapshot schema version {version}, this build reads {SCHEMA_VERSION}")));
    }
    d.u32()?;
    let (nx, ny) = (d.usize()?, d.usize()?);
    let (lx, ly) = (d.f64()?, d.f64()?);
    let grid = Grid64::new(nx, ny, lx, ly).map_err(|e| d.err(format!("grid: {e}")))?;
    let (k, n) = (d.usize()?, d.usize()?);
    let weights = (0..k * n).map(|_| d.i64()).collect::<Result<Vec<_>, _>>()?;
    let tau = d.f64s(k)?;
    let degrees = (0..k).map(|_| d.i64()).collect::<Result<Vec<_>, _>>()?;
    let spec = ActionSpec::new(k, n, weights, tau, degrees).map_err(|e| d.err(format!("group: {e}")))?;
    let t = d.f64()?;
    let sites = grid.len();
    let raw = d.f64s(2 * n * sites)?;
    let mut pair = blank_pair(&grid, k, n);
    for (z, c) in pair.u.data.iter_mut().zip(raw.chunks_exact(2)) {
        *z = Complex::new(c[0], c[1]);
    }
    pair.a.x = d.f64s(k * sites)?;
    pair.a.y = d.f64s(k * sites)?;
    Ok(Snapshot { t, grid, spec, pair })
}

fn blank_pair(grid: &Grid64, k: usize, n: usize) -> Pair64 {
    Pair64 { a: LinkField64::zeros(grid, k), u: vortexflow::ComplexSiteField::zeros(grid, n) }
}

pub fn snapshot_to_bytes(s: &Snapshot) -> Vec<u8> {
    let mut e = Enc::default();
    encode_snapshot(&mut e, s);
    e.0
}

pub fn snapshot_from_bytes(bytes: &[u8], path: &Path) -> Result<Snapshot, CliError> {
    let mut d = Dec { bytes, pos: 0, path };
    let s = decode_snapshot(&mut d)?;
    if d.pos != bytes.len() {
        return Err(d.err(format!("{} trailing bytes", bytes.len() - d.pos)));
    }
    Ok(s)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn snapshot_to_csv(s: &Snapshot) -> String {
    let (g, sp) = (&s.grid, &s.spec);
    let rows: Vec<String> = (0..sp.k).map(|a| join(&sp.weights[a * sp.n..(a + 1) * sp.n])).collect();
    let mut out = String::new();
    out.push_str(&format!("{CSV_TAG}\n# version={SCHEMA_VERSION}\n"));
    out.push_str(&format!("# grid nx={} ny={} lx={:e} ly={:e}\n", g.nx, g.ny, g.lx, g.ly));
    out.push_str(&format!(
        "# group k={} n={} weights={} tau={} degrees={}\n",
        sp.k,
        sp.n,
        rows.join(";"),
        sp.tau.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","),
        join(&sp.degrees)
    ));
    out.push_str(&format!("# t={:e}\n", s.t));
    let mut cols = vec!["i".to_string(), "j".to_string()];
    for j in 0..sp.n {
        cols.push(format!("u{j}_re"));
        cols.push(format!("u{j}_im"));
    }
    (0..sp.k).for_each(|a| cols.push(format!("ax{a}")));
    (0..sp.k).for_each(|a| cols.push(format!("ay{a}")));
    out.push_str(&cols.join(","));
    out.push('\n');
    let sites = g.len();
    for jj in 0..g.ny {
        for ii in 0..g.nx {
            let s_ = g.idx(ii, jj);
            let mut f = vec![ii.to_string(), jj.to_string()];
            for j in 0..sp.n {
                let z = s.pair.u.data[j * sites + s_];
                f.push(format!("{:e}", z.re));
                f.push(format!("{:e}", z.im));
            }
            (0..sp.k).for_each(|a| f.push(format!("{:e}", s.pair.a.x[a * sites + s_])));
            (0..sp.k).for_each(|a| f.push(format!("{:e}", s.pair.a.y[a * sites + s_])));
            out.push_str(&f.join(","));
            out.push('\n');
        }
    }
    out
}

fn kv<'a>(line: &'a str, key: &str, path: &Path) -> Result<&'a str, CliError> {
    line.split_whitespace()
        .find_map(|w| w.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| CliError::Format { path: path.to_path_buf(), msg: format!("header lacks `{key}=`") })
}

fn num<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Format { path: path.to_path_buf(), msg: format!("cannot parse number `{s}`") })
}

fn list<T: std::str::FromStr>(s: &str, path: &Path) -> Result<Vec<T>, CliError> {
    s.split(',').filter(|p| !p.is_empty()).map(|p| num(p, path)).collect()
}

pub fn snapshot_from_csv(text: &str, path: &Path) -> Result<Snapshot, CliError> {
    let fmt_err = |msg: String| CliError::Format { path: path.to_path_buf(), msg };
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| fmt_err(format!("missing {what} line")));
    if next("tag")?.trim() != CSV_TAG {
        return Err(fmt_err("not a vortexflow CSV snapshot".into()));
    }
    let version: u32 = num(kv(next("version")?, "version", path)?, path)?;
    if version != SCHEMA_VERSION {
        return Err(fmt_err(format!("snapshot schema version {version}, this build reads {SCHEMA_VERSION}")));
    }
    let gl = next("grid")?;
    let grid = Grid64::new(
        num(kv(gl, "nx", path)?, path)?,
        num(kv(gl, "ny", path)?, path)?,
        num(kv(gl, "lx", path)?, path)?,
        num(kv(gl, "ly", path)?, path)?,
    )
    .map_err(|e| fmt_err(format!("grid: {e}")))?;
    let gr = next("group")?;
    let k: usize = num(kv(gr, "k", path)?, path)?;
    let n: usize = num(kv(gr, "n", path)?, path)?;
    let mut weights = Vec::new();
    for row in kv(gr, "weights", path)?.split(';') {
        weights.extend(list::<i64>(row, path)?);
    }
    let spec = ActionSpec::new(k, n, weights, list(kv(gr, "tau", path)?, path)?, list(kv(gr, "degrees", path)?, path)?)
        .map_err(|e| fmt_err(format!("group: {e}")))?;
    let t: f64 = num(kv(next("t")?, "t", path)?, path)?;
    next("column header")?;
    let sites = grid.len();
    let mut pair = blank_pair(&grid, k, n);
    let mut seen = vec![false; sites];
    for (r, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 2 + 2 * n + 2 * k {
            return Err(fmt_err(format!("data row {r} has {} fields, expected {}", f.len(), 2 + 2 * n + 2 * k)));
        }
        let (i, j): (usize, usize) = (num(f[0], path)?, num(f[1], path)?);
        if i >= grid.nx || j >= grid.ny {
            return Err(fmt_err(format!("data row {r}: site ({i},{j}) outside the grid")));
        }
        let s = grid.idx(i, j);
        seen[s] = true;
        for c in 0..n {
            pair.u.data[c * sites + s] = Complex::new(num(f[2 + 2 * c], path)?, num(f[3 + 2 * c], path)?);
        }
        for a in 0..k {
            pair.a.x[a * sites + s] = num(f[2 + 2 * n + a], path)?;
            pair.a.y[a * sites + s] = num(f[2 + 2 * n + k + a], path)?;
        }
    }
    if let Some(s) = seen.iter().position(|&b| !b) {
        return Err(fmt_err(format!("no data row for site index {s}")));
    }
    Ok(Snapshot { t, grid, spec, pair })
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(CliError::io(&tmp))?;
    f.write_all(bytes).map_err(CliError::io(&tmp))?;
    f.sync_all().map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn write_snapshot(path: &Path, s: &Snapshot, format: SnapshotFormat) -> Result<(), CliError> {
    match format {
        SnapshotFormat::Binary => write_atomic(path, &snapshot_to_bytes(s)),
        SnapshotFormat::Csv => write_atomic(path, snapshot_to_csv(s).as_bytes()),
    }
}

/// Reads either format, recognised by its leading bytes.
pub fn read_snapshot(path: &Path) -> Result<Snapshot, CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    if bytes.starts_with(SNAP_MAGIC) {
        snapshot_from_bytes(&bytes, path)
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| CliError::Format { path: path.to_path_buf(), msg: "neither binary nor UTF-8 CSV".into() })?;
        snapshot_from_csv(text, path)
    }
}

pub fn snapshot_extension(format: SnapshotFormat) -> &'static str {
    match format {
        SnapshotFormat::Binary => "bin",
        SnapshotFormat::Csv => "csv",
    }
}

fn row_fields(r: &SeriesRow<f64>) -> [f64; 8] {
    [r.t, r.ymh, r.f_moment, r.dbar_resid, r.phi_l2, r.sup_u2, r.kn_value, r.grad_norm]
}

pub fn checkpoint_to_bytes(c: &Checkpoint) -> Vec<u8> {
    let mut e = Enc::default();
    e.0.extend_from_slice(CKPT_MAGIC);
    e.u32(SCHEMA_VERSION);
    e.u32(0);
    encode_snapshot(&mut e, &c.current);
    let origin = Snapshot { pair: c.origin.clone(), ..c.current.clone() };
    encode_snapshot(&mut e, &origin);
    e.f64s(&c.gauge.s.data);
    e.f64s(&c.gauge.theta.data);
    e.f64(c.dt);
    e.usize(c.steps);
    e.usize(c.rows.len());
    c.rows.iter().for_each(|r| e.f64s(&row_fields(r)));
    e.usize(c.path.len());
    for (t, s) in &c.path {
        e.f64(*t);
        e.f64s(&s.data);
    }
    e.0
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint, CliError> {
    let mut d = Dec { bytes, pos: 0, path };
    if &d.take::<8>()? != CKPT_MAGIC {
        return Err(d.err("not a vortexflow checkpoint (bad magic)"));
    }
    let version = d.u32()?;
    if version != SCHEMA_VERSION {
        return Err(d.err(format!("checkpoint schema version {version}, this build reads {SCHEMA_VERSION}")));
    }
    d.u32()?;
    let current = decode_snapshot(&mut d)?;
    let origin = decode_snapshot(&mut d)?;
    if origin.grid != current.grid || origin.spec != current.spec {
        return Err(d.err("starting pair and current pair disagree on grid or group"));
    }
    let (g, k) = (&current.grid, current.spec.k);
    let field = |d: &mut Dec| -> Result<SiteField64, CliError> {
        Ok(SiteField64 { comps: k, data: d.f64s(k * g.len())? })
    };
    let gauge = ComplexGauge { s: field(&mut d)?, theta: field(&mut d)? };
    let dt = d.f64()?;
    let steps = d.usize()?;
    let nrows = d.usize()?;
    let mut rows = Vec::with_capacity(nrows.min(1 << 20));
    for _ in 0..nrows {
        let v = d.f64s(8)?;
        rows.push(SeriesRow {
            t: v[0],
            ymh: v[1],
            f_moment: v[2],
            dbar_resid: v[3],
            phi_l2: v[4],
            sup_u2: v[5],
            kn_value: v[6],
            grad_norm: v[7],
        });
    }
    let npath = d.usize()?;
    let mut samples = Vec::new();
    for _ in 0..npath {
        let t = d.f64()?;
        samples.push((t, field(&mut d)?));
    }
    if d.pos != bytes.len() {
        return Err(d.err(format!("{} trailing bytes", bytes.len() - d.pos)));
    }
    Ok(Checkpoint { current, origin: origin.pair, gauge, dt, steps, rows, path: samples })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<(), CliError> {
    write_atomic(path, &checkpoint_to_bytes(c))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    checkpoint_from_bytes(&bytes, path)
}

pub fn snapshot_path(dir: &Path, steps: usize, format: SnapshotFormat) -> PathBuf {
    dir.join("snapshots").join(format!("snap_{steps:08}.{}", snapshot_extension(format)))
}
