//! Negative gradient flow of the moment functional `1/2 |Phi|^2`.
//!
//! The velocity is the infinitesimal action of `-i Phi`, so the flow stays
//! on the complexified gauge orbit of its initial pair: with `s(t)` solving
//! `ds/dt = -Phi`, the state equals `apply(exp(s), x0)`. By default every
//! scheme steps this gauge equation and moves the fields by the exact action
//! of the increment, which keeps states on the orbit up to rounding; the
//! explicit schemes evaluate `Phi` at trial points, the semi-implicit one
//! treats the linear part of `Phi` spectrally. [`Representation::Direct`]
//! adds the same increments to the fields linearly instead. [`GaugeOde`]
//! integrates the gauge equation on its own with a fixed step, as a
//! cross-check of either.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fields::{ComplexGauge, Model, Pair};
use crate::functionals::{energy_identity_defect, grad_from_phi, EnergyBreakdown};
use crate::lattice::{average_symbol, laplacian_symbol, SiteField};
use crate::linalg::fit_line;
use crate::stability::kempf_ness_value;
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("sup|u|^2 = {sup:e} exceeds ten times the a priori bound {bound:e} at t = {t}")]
    BlowUp { t: f64, sup: f64, bound: f64 },
    #[error("step size fell below {dt_min:e} at t = {t} without an admissible step")]
    Stalled { t: f64, dt_min: f64 },
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error("xi(t)/t has not settled: estimates over the last decade differ by {spread:e}")]
    NotConverged { spread: f64 },
    #[error("series drops only by a factor {ratio:e}; at least 1e3 is needed for a fit")]
    InsufficientDecay { ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    ExplicitEuler,
    Rk4,
    /// Curvature part implicit through the FFT, moment part explicit.
    SemiImplicit,
}

impl FromStr for Scheme {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit-euler" => Ok(Self::ExplicitEuler),
            "rk4" => Ok(Self::Rk4),
            "semi-implicit" => Ok(Self::SemiImplicit),
            other => Err(FlowError::Config(format!(
                "unknown scheme {other:?}; expected explicit-euler, rk4 or semi-implicit"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ExplicitEuler => "explicit-euler",
            Self::Rk4 => "rk4",
            Self::SemiImplicit => "semi-implicit",
        })
    }
}

/// How a scheme's increment moves the fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Representation {
    /// The increment is a gauge `delta` applied through the exact action,
    /// so states never leave the complexified orbit.
    #[default]
    Gauge,
    /// The increment is added to the fields linearly, as a plain method of
    /// lines would; leaves the orbit at the truncation order of the scheme.
    Direct,
}

impl FromStr for Representation {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gauge" => Ok(Self::Gauge),
            "direct" => Ok(Self::Direct),
            other => Err(FlowError::Config(format!("unknown representation {other:?}; expected gauge or direct"))),
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gauge => "gauge",
            Self::Direct => "direct",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig<T> {
    pub scheme: Scheme,
    pub representation: Representation,
    pub dt0: T,
    /// Largest step; `None` uses the linear stability cap of the scheme.
    pub dt_max: Option<T>,
    pub dt_min: T,
    /// Step growth factor after an accepted step.
    pub growth: T,
    pub t_max: T,
    /// Stop once `|grad F|` drops to this value.
    pub tol: T,
    /// Largest admissible increase of `ymh` in one step.
    pub ymh_tol: T,
    /// Whether a step that raises `ymh` beyond `ymh_tol` is rejected.
    pub enforce_ymh: bool,
    pub snapshot_every: usize,
}

impl<T: Real> Default for FlowConfig<T> {
    fn default() -> Self {
        Self {
            scheme: Scheme::Rk4,
            representation: Representation::Gauge,
            dt0: T::c(1e-3),
            dt_max: None,
            dt_min: T::c(1e-9),
            growth: T::c(1.2),
            t_max: T::c(10.0),
            tol: T::c(1e-8),
            ymh_tol: T::c(1e-12),
            enforce_ymh: true,
            snapshot_every: 0,
        }
    }
}

impl<T: Real> FlowConfig<T> {
    pub fn validate(&self) -> Result<(), FlowError> {
        let pos = |v: T, what: &str| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(FlowError::Config(format!("{what} must be positive and finite, got {v}")))
            }
        };
        pos(self.dt0, "dt0")?;
        pos(self.dt_min, "dt_min")?;
        pos(self.t_max, "t_max")?;
        pos(self.tol, "tol")?;
        pos(self.ymh_tol, "ymh_tol")?;
        if let Some(m) = self.dt_max {
            pos(m, "dt_max")?;
        }
        if !(self.growth >= T::one()) {
            return Err(FlowError::Config("growth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Flow state with cached observables.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState<T> {
    pub t: T,
    pub pair: Pair<T>,
    /// Starting pair of the run.
    pub origin: Pair<T>,
    /// Complex gauge carrying `origin` to `pair`, up to integrator error.
    pub gauge: ComplexGauge<T>,
    /// Trial step for the next step.
    pub dt: T,
    pub steps: usize,
    pub phi: SiteField<T>,
    pub energies: EnergyBreakdown<T>,
    pub grad_norm: T,
    pub dbar_resid: T,
    pub sup_u2: T,
    pub kn_value: T,
}

impl<T: Real> FlowState<T> {
    pub fn new(model: &Model<T>, pair: Pair<T>, dt0: T) -> Self {
        let gauge = ComplexGauge::identity(&model.grid, model.k());
        Self::assemble(model, T::zero(), pair.clone(), pair, gauge, dt0, 0)
    }

    /// Rebuilds cached observables; used when restoring a saved state.
    pub fn assemble(
        model: &Model<T>,
        t: T,
        pair: Pair<T>,
        origin: Pair<T>,
        gauge: ComplexGauge<T>,
        dt: T,
        steps: usize,
    ) -> Self {
        let g = &model.grid;
        let phi = model.moment_residual(&pair);
        let energies = energy_identity_defect(model, &pair);
        let grad_norm = grad_from_phi(model, &pair, &phi).norm(g);
        let dbar_resid = model.dbar_residual(&pair).norm(g);
        let sup_u2 = pair.sup_u_sq();
        let kn_value = kempf_ness_value(model, &origin, &gauge.s);
        Self { t, pair, origin, gauge, dt, steps, phi, energies, grad_norm, dbar_resid, sup_u2, kn_value }
    }

    pub fn phi_norm(&self, model: &Model<T>) -> T {
        self.phi.norm(&model.grid)
    }

    pub fn row(&self, model: &Model<T>) -> SeriesRow<T> {
        SeriesRow {
            t: self.t,
            ymh: self.energies.ymh,
            f_moment: self.energies.f_moment,
            dbar_resid: self.dbar_resid,
            phi_l2: self.phi_norm(model),
            sup_u2: self.sup_u2,
            kn_value: self.kn_value,
            grad_norm: self.grad_norm,
        }
    }
}

/// One line of the time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesRow<T> {
    pub t: T,
    pub ymh: T,
    pub f_moment: T,
    pub dbar_resid: T,
    pub phi_l2: T,
    pub sup_u2: T,
    pub kn_value: T,
    pub grad_norm: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    Converged,
    MaxTimeReached,
    BlowUp,
    Stalled,
    /// Stopped by the caller before any other terminal condition.
    Halted,
}

impl Terminal {
    pub fn token(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxTimeReached => "max-time-reached",
            Self::BlowUp => "blow-up",
            Self::Stalled => "stalled",
            Self::Halted => "halted",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport<T> {
    pub rows: Vec<SeriesRow<T>>,
    pub terminal: Terminal,
    pub error: Option<FlowError>,
    pub final_state: FlowState<T>,
    /// Largest accepted one-step increase of `ymh` (negative if it always fell).
    pub max_ymh_increase: T,
    /// A priori bound on `sup |u|^2` computed from the initial pair.
    pub sup_bound: T,
    pub max_sup_u2: T,
    pub rejected_steps: usize,
    pub gamma: Option<LojasiewiczFit>,
    pub xi_inf: Option<SiteField<T>>,
}

/// Integrator for one model and configuration.
pub struct Flow<'m, T: Real> {
    model: &'m Model<T>,
    cfg: FlowConfig<T>,
    cap: T,
    bound: T,
}

impl<'m, T: Real> Flow<'m, T> {
    pub fn new(model: &'m Model<T>, cfg: FlowConfig<T>, origin: &Pair<T>) -> Result<Self, FlowError> {
        cfg.validate()?;
        let bound = model.spec.sup_bound(origin.sup_u_sq());
        let cap = cfg.dt_max.unwrap_or_else(|| stability_cap(model, cfg.scheme, bound));
        Ok(Self { model, cfg, cap, bound })
    }

    pub fn config(&self) -> &FlowConfig<T> {
        &self.cfg
    }

    pub fn dt_cap(&self) -> T {
        self.cap
    }

    pub fn sup_bound(&self) -> T {
        self.bound
    }

    /// Candidate state after a step of size `dt`, without acceptance tests.
    pub fn propose(&self, st: &FlowState<T>, dt: T) -> (Pair<T>, SiteField<T>) {
        match self.cfg.representation {
            Representation::Gauge => self.propose_gauge(st, dt),
            Representation::Direct => self.propose_direct(st, dt),
        }
    }

    fn propose_gauge(&self, st: &FlowState<T>, dt: T) -> (Pair<T>, SiteField<T>) {
        let m = self.model;
        let x = &st.pair;
        let delta = match self.cfg.scheme {
            Scheme::ExplicitEuler => st.phi.scale(-dt),
            Scheme::Rk4 => {
                let half = T::c(0.5);
                let stage = |k: &SiteField<T>, h: T| m.moment_residual(&m.apply_complex_gauge(&ComplexGauge::imaginary(k.scale(-h)), x));
                let k1 = &st.phi;
                let k2 = stage(k1, half * dt);
                let k3 = stage(&k2, half * dt);
                let k4 = stage(&k3, dt);
                let two = T::c(2.0);
                k1.axpy(two, &k2).axpy(two, &k3).axpy(T::one(), &k4).scale(-dt / T::c(6.0))
            }
            Scheme::SemiImplicit => semi_implicit_increment(m, &st.phi, dt),
        };
        (m.apply_complex_gauge(&ComplexGauge::imaginary(delta.clone()), x), st.gauge.s.add(&delta))
    }

    fn propose_direct(&self, st: &FlowState<T>, dt: T) -> (Pair<T>, SiteField<T>) {
        let m = self.model;
        let x = &st.pair;
        match self.cfg.scheme {
            Scheme::ExplicitEuler => {
                let v = grad_from_phi(m, x, &st.phi);
                (x.displaced(-dt, &v), st.gauge.s.axpy(-dt, &st.phi))
            }
            Scheme::Rk4 => {
                let half = T::c(0.5);
                let stage = |p: &Pair<T>| {
                    let phi = m.moment_residual(p);
                    (grad_from_phi(m, p, &phi), phi)
                };
                let k1 = grad_from_phi(m, x, &st.phi);
                let (k2, p2) = stage(&x.displaced(-half * dt, &k1));
                let (k3, p3) = stage(&x.displaced(-half * dt, &k2));
                let (k4, p4) = stage(&x.displaced(-dt, &k3));
                let sixth = dt / T::c(6.0);
                let two = T::c(2.0);
                let v = k1.axpy(two, &k2).axpy(two, &k3).axpy(T::one(), &k4);
                let w = st.phi.axpy(two, &p2).axpy(two, &p3).axpy(T::one(), &p4);
                (x.displaced(-sixth, &v), st.gauge.s.axpy(-sixth, &w))
            }
            Scheme::SemiImplicit => {
                let delta = semi_implicit_increment(m, &st.phi, dt);
                let v = m.complex_infinitesimal_action(x, &delta);
                (x.displaced(T::one(), &v), st.gauge.s.add(&delta))
            }
        }
    }

    /// One accepted step; the step size is halved until both `f_moment`
    /// and (if enforced) `ymh` do not increase.
    pub fn step(&self, st: &FlowState<T>) -> Result<(FlowState<T>, usize), FlowError> {
        let m = self.model;
        let mut dt = st.dt.min(self.cap);
        let remaining = self.cfg.t_max - st.t;
        if remaining > T::zero() && dt > remaining {
            dt = remaining;
        }
        let mut rejected = 0;
        loop {
            // A final step clipped to the horizon may be shorter than dt_min.
            let floor = if remaining > T::zero() { self.cfg.dt_min.min(remaining) } else { self.cfg.dt_min };
            if dt < floor {
                return Err(FlowError::Stalled { t: st.t.to_f64_lossy(), dt_min: self.cfg.dt_min.to_f64_lossy() });
            }
            let (pair, s) = self.propose(st, dt);
            if pair.is_finite() {
                let gauge = ComplexGauge { s, theta: st.gauge.theta.clone() };
                let next_dt = (dt * self.cfg.growth).min(self.cap);
                let cand = FlowState::assemble(m, st.t + dt, pair, st.origin.clone(), gauge, next_dt, st.steps + 1);
                let e0 = &st.energies;
                let e1 = &cand.energies;
                let f_ok = e1.f_moment <= e0.f_moment + T::c(1e-14) * e0.f_moment.max(T::one());
                let y_ok = !self.cfg.enforce_ymh || e1.ymh <= e0.ymh + self.cfg.ymh_tol;
                if f_ok && y_ok {
                    if cand.sup_u2 > T::c(10.0) * self.bound + T::c(1e-6) {
                        return Err(FlowError::BlowUp {
                            t: cand.t.to_f64_lossy(),
                            sup: cand.sup_u2.to_f64_lossy(),
                            bound: self.bound.to_f64_lossy(),
                        });
                    }
                    return Ok((cand, rejected));
                }
            }
            rejected += 1;
            dt = dt * T::c(0.5);
        }
    }

    /// Integrates until `|grad F| <= tol` or `t_max`. The hook sees every
    /// accepted state including the initial one.
    pub fn run(&self, initial: FlowState<T>, mut hook: impl FnMut(&FlowState<T>)) -> ConvergenceReport<T> {
        self.run_until(initial, |s| {
            hook(s);
            true
        })
    }

    /// As [`Flow::run`], but stops with [`Terminal::Halted`] as soon as the
    /// hook returns `false`.
    pub fn run_until(&self, initial: FlowState<T>, mut hook: impl FnMut(&FlowState<T>) -> bool) -> ConvergenceReport<T> {
        let m = self.model;
        let mut st = initial;
        let mut go = hook(&st);
        let mut rows = vec![st.row(m)];
        let mut max_inc = T::neg_infinity();
        let mut max_sup = st.sup_u2;
        let mut rejected_steps = 0;
        let eps = T::c(1e-12) * self.cfg.t_max;
        let (terminal, error) = loop {
            if !go {
                break (Terminal::Halted, None);
            }
            if st.grad_norm <= self.cfg.tol {
                break (Terminal::Converged, None);
            }
            if st.t >= self.cfg.t_max - eps {
                break (Terminal::MaxTimeReached, None);
            }
            match self.step(&st) {
                Ok((next, rej)) => {
                    rejected_steps += rej;
                    max_inc = max_inc.max(next.energies.ymh - st.energies.ymh);
                    max_sup = max_sup.max(next.sup_u2);
                    st = next;
                    go = hook(&st);
                    rows.push(st.row(m));
                }
                Err(e @ FlowError::BlowUp { .. }) => break (Terminal::BlowUp, Some(e)),
                Err(e) => break (Terminal::Stalled, Some(e)),
            }
        };
        ConvergenceReport {
            rows,
            terminal,
            error,
            final_state: st,
            max_ymh_increase: max_inc,
            sup_bound: self.bound,
            max_sup_u2: max_sup,
            rejected_steps,
            gamma: None,
            xi_inf: None,
        }
    }
}

/// Single step with a fresh integrator; convenient for tests and tools.
pub fn step<T: Real>(model: &Model<T>, st: &FlowState<T>, cfg: &FlowConfig<T>) -> Result<FlowState<T>, FlowError> {
    Flow::new(model, cfg.clone(), &st.origin)?.step(st).map(|(s, _)| s)
}

/// Runs the flow from `initial` and records the gauge at geometrically
/// spaced times, attaching the dominant weight estimate when it settles.
pub fn run_flow<T: Real>(model: &Model<T>, initial: &Pair<T>, cfg: &FlowConfig<T>) -> Result<(ConvergenceReport<T>, GaugePath<T>), FlowError> {
    let flow = Flow::new(model, cfg.clone(), initial)?;
    let mut path = GaugePath::new(T::c(1.02));
    let mut report = flow.run(FlowState::new(model, initial.clone(), cfg.dt0), |s| path.record(s));
    path.force_record(&report.final_state);
    report.xi_inf = dominant_weight_estimate(&model.grid, &path).ok();
    report.gamma = ymh_decay_fit(&report.rows).ok();
    Ok((report, path))
}

/// [`lojasiewicz_fit`] of `ymh(t) - ymh(t_end)` over a series, ignoring
/// values within round-off of the terminal one.
pub fn ymh_decay_fit<T: Real>(rows: &[SeriesRow<T>]) -> Result<LojasiewiczFit, FlowError> {
    let last = rows.last().ok_or(FlowError::InsufficientDecay { ratio: 1.0 })?.ymh.to_f64_lossy();
    let ts: Vec<f64> = rows.iter().map(|r| r.t.to_f64_lossy()).collect();
    let fs: Vec<f64> = rows.iter().map(|r| r.ymh.to_f64_lossy() - last).collect();
    lojasiewicz_fit(&ts, &fs, 1e-11 * last.abs().max(1.0))
}

/// Largest stable step of the scheme on the linearised flow, with margin.
pub fn stability_cap<T: Real>(model: &Model<T>, scheme: Scheme, sup_bound: T) -> T {
    let g = &model.grid;
    let mut lin = T::zero();
    for q in 0..g.ny {
        for p in 0..g.nx {
            let kx = T::TAU() * T::from_usize_lossy(p) / T::from_usize_lossy(g.nx);
            let ky = T::TAU() * T::from_usize_lossy(q) / T::from_usize_lossy(g.ny);
            lin = lin.max(laplacian_symbol(g, kx, ky) * average_symbol(kx, ky));
        }
    }
    let w2: T = (0..model.n())
        .map(|j| (0..model.k()).fold(T::zero(), |acc, a| acc + model.spec.weight_t(a, j).powi(2)))
        .fold(T::zero(), |m, v| m.max(v));
    let tau_max = model.spec.tau.iter().fold(T::zero(), |m, t| m.max(t.abs()));
    let mu_part = w2 * sup_bound + tau_max;
    match scheme {
        Scheme::ExplicitEuler => T::c(1.8) / (lin + mu_part).max(T::min_positive_value()),
        Scheme::Rk4 => T::c(2.5) / (lin + mu_part).max(T::min_positive_value()),
        Scheme::SemiImplicit => {
            if mu_part > T::zero() {
                T::c(1.8) / mu_part
            } else {
                T::infinity()
            }
        }
    }
}

/// Gauge increment `delta` of one semi-implicit step:
/// `(1 + dt S L S^T) delta = -dt Phi`, solved mode by mode.
pub fn semi_implicit_increment<T: Real>(model: &Model<T>, phi: &SiteField<T>, dt: T) -> SiteField<T> {
    let g = &model.grid;
    let mut out = SiteField::zeros(g, phi.comps);
    for c in 0..phi.comps {
        let v = model
            .spectral
            .apply(phi.comp(c), |kx, ky| -dt / (T::one() + dt * laplacian_symbol(g, kx, ky) * average_symbol(kx, ky)));
        out.comp_mut(c).copy_from_slice(&v);
    }
    out
}

/// Independent integrator of the gauge equation `ds/dt = -Phi(apply(s, x0))`
/// by classical RK4 with a fixed step.
pub struct GaugeOde<'m, T: Real> {
    model: &'m Model<T>,
    origin: Pair<T>,
    pub t: T,
    pub s: SiteField<T>,
}

impl<'m, T: Real> GaugeOde<'m, T> {
    pub fn new(model: &'m Model<T>, origin: Pair<T>) -> Self {
        Self { s: SiteField::zeros(&model.grid, model.k()), model, origin, t: T::zero() }
    }

    fn rhs(&self, s: &SiteField<T>) -> SiteField<T> {
        self.model.moment_residual(&self.pair_at(s)).scale(-T::one())
    }

    fn pair_at(&self, s: &SiteField<T>) -> Pair<T> {
        self.model.apply_complex_gauge(&ComplexGauge::imaginary(s.clone()), &self.origin)
    }

    pub fn pair(&self) -> Pair<T> {
        self.pair_at(&self.s)
    }

    pub fn gauge(&self) -> ComplexGauge<T> {
        ComplexGauge::imaginary(self.s.clone())
    }

    pub fn step(&mut self, dt: T) {
        let half = T::c(0.5);
        let k1 = self.rhs(&self.s);
        let k2 = self.rhs(&self.s.axpy(half * dt, &k1));
        let k3 = self.rhs(&self.s.axpy(half * dt, &k2));
        let k4 = self.rhs(&self.s.axpy(dt, &k3));
        let two = T::c(2.0);
        let incr = k1.axpy(two, &k2).axpy(two, &k3).add(&k4);
        self.s = self.s.axpy(dt / T::c(6.0), &incr);
        self.t = self.t + dt;
    }
}

/// Cartan factorisation of a complex gauge element; see
/// [`ComplexGauge::cartan_decompose`].
pub fn cartan_decompose<T: Real>(g: &ComplexGauge<T>) -> (SiteField<T>, SiteField<T>) {
    g.cartan_decompose()
}

/// Samples of the tracked gauge, recorded whenever time grows by a fixed
/// ratio so that long runs stay cheap.
#[derive(Clone, Debug, Default)]
pub struct GaugePath<T> {
    pub samples: Vec<(T, SiteField<T>)>,
    ratio: T,
}

impl<T: Real> GaugePath<T> {
    pub fn new(ratio: T) -> Self {
        Self { samples: Vec::new(), ratio }
    }

    pub fn record(&mut self, st: &FlowState<T>) {
        let due = match self.samples.last() {
            None => true,
            Some((t, _)) => *t <= T::zero() || st.t >= *t * self.ratio,
        };
        if due {
            self.samples.push((st.t, st.gauge.s.clone()));
        }
    }

    pub fn force_record(&mut self, st: &FlowState<T>) {
        if self.samples.last().map(|(t, _)| *t < st.t).unwrap_or(true) {
            self.samples.push((st.t, st.gauge.s.clone()));
        }
    }

    pub fn nearest(&self, t: T) -> Option<&(T, SiteField<T>)> {
        self.samples.iter().min_by(|a, b| {
            (a.0 - t).abs().partial_cmp(&(b.0 - t).abs()).unwrap_or(std::cmp::Ordering::Equal)
        })
    }
}

/// Linear growth moves `xi` by comparable amounts over `[t/10, t/2]` and
/// `[t/2, t]`; a ratio below this means it has stopped moving.
pub const SETTLED_RATIO: f64 = 1e-3;

/// Estimate of `lim xi(t)/t` from the recorded gauge: the difference
/// quotient between the last sample and the sample nearest half its time,
/// which removes the constant offset of `xi(t)` and most of the transient.
/// The quotient over the whole last decade must agree with it, unless the
/// gauge has settled: when `xi` moved less than [`SETTLED_RATIO`] times as
/// much over the last half as over the stretch before, `xi` is bounded,
/// the transient dominates both quotients and the near-zero estimate is
/// the answer.
pub fn dominant_weight_estimate<T: Real>(grid: &crate::TorusGrid<T>, path: &GaugePath<T>) -> Result<SiteField<T>, FlowError> {
    let (t2, s2) = path.samples.last().ok_or(FlowError::NotConverged { spread: f64::INFINITY })?;
    let quotient = |t1: T| -> Option<SiteField<T>> {
        let (ta, sa) = path.nearest(t1)?;
        if *t2 - *ta <= T::zero() {
            return None;
        }
        Some(s2.sub(sa).scale(T::one() / (*t2 - *ta)))
    };
    let est = quotient(*t2 * T::c(0.5)).ok_or(FlowError::NotConverged { spread: f64::INFINITY })?;
    let check = quotient(*t2 * T::c(0.1)).ok_or(FlowError::NotConverged { spread: f64::INFINITY })?;
    if let (Some((ta, sa)), Some((tb, sb))) = (path.nearest(*t2 * T::c(0.1)), path.nearest(*t2 * T::c(0.5))) {
        let late = s2.sub(sb).norm(grid);
        let early = sb.sub(sa).norm(grid);
        if *tb > *ta && late <= T::c(SETTLED_RATIO) * early {
            return Ok(est);
        }
    }
    let spread = est.sub(&check).norm(grid);
    if spread > T::c(1e-3) * est.norm(grid) + T::c(1e-6) {
        return Err(FlowError::NotConverged { spread: spread.to_f64_lossy() });
    }
    Ok(est)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayKind {
    Exponential,
    PowerLaw,
}

/// Decay classification of a series approaching its terminal value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LojasiewiczFit {
    pub gamma: f64,
    pub kind: DecayKind,
    /// Coefficient of determination of the selected regression.
    pub r2: f64,
    /// Decay rate (exponential) or power `p` in `t^-p` (power law).
    pub rate: f64,
    pub window: (f64, f64),
}

/// Fits the tail of `f(t) = series(t) - terminal` by an exponential and by
/// a power law and keeps the better regression. Exponential decay means
/// `gamma = 1/2`; decay like `t^-p` means `1/(1 - 2 gamma) = -p`.
///
/// Only samples with `f` above `floor` are used; the tail window is the
/// last part of that range spanning the lowest third of its decades, late
/// enough for the slowest mode to dominate.
pub fn lojasiewicz_fit(ts: &[f64], fs: &[f64], floor: f64) -> Result<LojasiewiczFit, FlowError> {
    let usable: Vec<(f64, f64)> = ts
        .iter()
        .zip(fs)
        .map(|(&t, &f)| (t, f))
        .filter(|&(t, f)| f.is_finite() && f > floor && t > 0.0)
        .collect();
    // Stop at the first sample that falls to the floor: later points are noise.
    let last = ts
        .iter()
        .zip(fs)
        .position(|(&t, &f)| t > 0.0 && !(f > floor))
        .map(|k| ts[k])
        .unwrap_or(f64::INFINITY);
    let usable: Vec<(f64, f64)> = usable.into_iter().filter(|&(t, _)| t < last).collect();
    if usable.len() < 8 {
        return Err(FlowError::InsufficientDecay { ratio: 1.0 });
    }
    let fmax = usable.iter().map(|p| p.1).fold(0.0, f64::max);
    let fmin = usable.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ratio = fmax / fmin;
    if ratio < 1e3 {
        return Err(FlowError::InsufficientDecay { ratio });
    }
    let cut = (fmax.ln() + 2.0 * fmin.ln()) / 3.0;
    let start = usable.iter().position(|p| p.1.ln() <= cut).unwrap_or(0);
    let tail = &usable[start..];
    if tail.len() < 4 {
        return Err(FlowError::InsufficientDecay { ratio });
    }
    let t: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let lt: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let lf: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
    let exp = fit_line(&t, &lf).ok_or(FlowError::InsufficientDecay { ratio })?;
    let pow = fit_line(&lt, &lf).ok_or(FlowError::InsufficientDecay { ratio })?;
    let window = (t[0], t[t.len() - 1]);
    if exp.r2 >= pow.r2 {
        Ok(LojasiewiczFit { gamma: 0.5, kind: DecayKind::Exponential, r2: exp.r2, rate: -exp.slope, window })
    } else {
        let p = -pow.slope;
        Ok(LojasiewiczFit { gamma: 0.5 + 0.5 / p, kind: DecayKind::PowerLaw, r2: pow.r2, rate: p, window })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_exponential() {
        let ts: Vec<f64> = (0..400).map(|k| k as f64 * 0.05).collect();
        let fs: Vec<f64> = ts.iter().map(|t| (-t).exp()).collect();
        let fit = lojasiewicz_fit(&ts, &fs, 1e-300).unwrap();
        assert_eq!(fit.kind, DecayKind::Exponential);
        assert!((fit.gamma - 0.5).abs() < 0.01 && fit.r2 > 0.999);
    }

    #[test]
    fn synthetic_power_law() {
        let ts: Vec<f64> = (1..4000).map(|k| k as f64 * 0.25).collect();
        let fs: Vec<f64> = ts.iter().map(|t| t.powi(-2)).collect();
        let fit = lojasiewicz_fit(&ts, &fs, 0.0).unwrap();
        assert_eq!(fit.kind, DecayKind::PowerLaw);
        assert!((fit.gamma - 0.75).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn mode_mixture_reads_as_exponential() {
        let ts: Vec<f64> = (0..800).map(|k| k as f64 * 0.05).collect();
        let fs: Vec<f64> = ts.iter().map(|t| (-t).exp() + 5.0 * (-4.0 * t).exp()).collect();
        let fit = lojasiewicz_fit(&ts, &fs, 1e-14).unwrap();
        assert_eq!(fit.kind, DecayKind::Exponential);
        assert!((fit.rate - 1.0).abs() < 1e-3, "{fit:?}");
    }

    #[test]
    fn insufficient_decay_is_reported() {
        let ts: Vec<f64> = (1..100).map(|k| k as f64).collect();
        let fs: Vec<f64> = ts.iter().map(|t| 1.0 + 1.0 / t).collect();
        assert!(matches!(lojasiewicz_fit(&ts, &fs, 0.0), Err(FlowError::InsufficientDecay { .. })));
    }

    #[test]
    fn scheme_tokens_roundtrip() {
        for s in [Scheme::ExplicitEuler, Scheme::Rk4, Scheme::SemiImplicit] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("leapfrog".parse::<Scheme>().is_err());
    }
}
