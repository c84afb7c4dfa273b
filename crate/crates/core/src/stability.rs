//! Weights along geodesic rays, the Kempf-Ness functional, the moment-weight
//! inequality, classification of flow limits and the uniqueness harness.
//!
//! The ray through `xi` is `t -> apply(exp(t xi), x)` with `s = t xi`; along
//! it `<Phi, xi>` is nondecreasing and its limit is the weight.

use thiserror::Error;

use crate::fields::{ComplexGauge, Model, Pair};
use crate::flow::{run_flow, ConvergenceReport, FlowConfig, FlowError, GaugePath};
use crate::lattice::{codiff, codiff2, d0, pairwise_sum_by, plaquette_to_site, site_to_plaquette, SiteField};
use crate::linalg::tridiagonal_min_eigenvalue;
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("ray direction has zero norm")]
    ZeroDirection,
    #[error("weight undecided by t = {t_max:e}: last value {last:e}, last increment {increment:e}")]
    Inconclusive { t_max: f64, last: f64, increment: f64 },
    #[error("moment-weight inequality violated: -w/|xi| = {lhs:e} > inf |Phi| = {rhs:e} + {tol:e}")]
    ViolationDetected { lhs: f64, rhs: f64, tol: f64 },
    #[error("limit is not critical: residual {residual:e} exceeds {limit:e}")]
    NotCritical { residual: f64, limit: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Weight value in `R ∪ {+inf}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightValue<T> {
    Finite(T),
    PlusInfinity,
}

impl<T: Real> WeightValue<T> {
    pub fn finite(&self) -> Option<T> {
        match self {
            Self::Finite(v) => Some(*v),
            Self::PlusInfinity => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundedness {
    Bounded,
    Unbounded,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightResult<T> {
    pub value: WeightValue<T>,
    /// `(t, <Phi(exp(i t xi) x), xi>)`.
    pub samples: Vec<(T, T)>,
    /// Connection and section parts `<S F, xi>` and `<mu, xi>` at the last sample.
    pub split: (T, T),
    pub error_estimate: T,
    pub mu_bounded: Boundedness,
    /// `|mu|` along the samples.
    pub mu_norms: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayOptions<T> {
    pub t_first: T,
    pub t_max: T,
    /// Convergence tolerance on the increment between samples, relative to
    /// `max(1, |value|)`.
    pub tol: T,
    /// Values beyond this (relative to `max(1, |v(0)|)`) with nondecreasing
    /// increments count as divergence.
    pub divergence: T,
}

impl<T: Real> Default for RayOptions<T> {
    fn default() -> Self {
        Self { t_first: T::c(1e-2), t_max: T::c(1e12), tol: T::c(1e-12), divergence: T::c(1e8) }
    }
}

struct RaySample<T> {
    v: T,
    v_a: T,
    v_u: T,
    mu_norm: T,
}

fn ray_sample<T: Real>(model: &Model<T>, x: &Pair<T>, xi: &SiteField<T>, t: T) -> RaySample<T> {
    let g = &model.grid;
    let p = model.apply_complex_gauge(&ComplexGauge::imaginary(xi.scale(t)), x);
    let sf = plaquette_to_site(g, &model.curvature(&p.a));
    let mu = model.moment(&p.u);
    let v_a = sf.inner(g, xi);
    let v_u = mu.inner(g, xi);
    RaySample { v: v_a + v_u, v_a, v_u, mu_norm: mu.norm(g) }
}

/// Limit of a nondecreasing function of `t >= 0`, sampled at `0` and
/// `t_first * 2^k`. Each sample carries a payload. Non-finite values and
/// values beyond the divergence threshold with growing increments read as
/// `+inf`; returns the value, the samples and an error estimate.
pub(crate) fn ray_limit<T: Real, S>(
    mut sample: impl FnMut(T) -> (T, S),
    opts: &RayOptions<T>,
) -> Result<(WeightValue<T>, Vec<(T, T, S)>, T), StabilityError> {
    let (v0, p0) = sample(T::zero());
    let mut samples = vec![(T::zero(), v0, p0)];
    let scale = v0.abs().max(T::one());
    let mut t = opts.t_first;
    while t <= opts.t_max {
        let (v, p) = sample(t);
        samples.push((t, v, p));
        if !v.is_finite() {
            return Ok((WeightValue::PlusInfinity, samples, T::infinity()));
        }
        let k = samples.len();
        if k >= 4 {
            let d1 = samples[k - 1].1 - samples[k - 2].1;
            let d0 = samples[k - 2].1 - samples[k - 3].1;
            let mag = v.abs().max(T::one());
            if d1.abs() <= opts.tol * mag && d0.abs() <= T::c(1e3) * opts.tol * mag {
                return Ok((WeightValue::Finite(v), samples, d1.abs()));
            }
            if v > opts.divergence * scale && d1 >= d0 && d0 > T::zero() {
                return Ok((WeightValue::PlusInfinity, samples, T::infinity()));
            }
        }
        t = t * T::c(2.0);
    }
    let k = samples.len();
    Err(StabilityError::Inconclusive {
        t_max: opts.t_max.to_f64_lossy(),
        last: samples[k - 1].1.to_f64_lossy(),
        increment: (samples[k - 1].1 - samples[k - 2].1).to_f64_lossy(),
    })
}

/// Weight of `x` along `xi`, sampled at `t = 0` and `t_first * 2^k`.
pub fn weight<T: Real>(model: &Model<T>, x: &Pair<T>, xi: &SiteField<T>, opts: &RayOptions<T>) -> Result<WeightResult<T>, StabilityError> {
    if !(xi.norm(&model.grid) > T::zero()) {
        return Err(StabilityError::ZeroDirection);
    }
    let (value, samples, error_estimate) = ray_limit(
        |t| {
            let s = ray_sample(model, x, xi, t);
            (s.v, (s.v_a, s.v_u, s.mu_norm))
        },
        opts,
    )?;
    let mu_norms: Vec<T> = samples.iter().map(|s| s.2 .2).collect();
    let mu_bounded = match value {
        WeightValue::PlusInfinity => Boundedness::Unbounded,
        WeightValue::Finite(_) => mu_trend(&mu_norms),
    };
    let last = samples.last().expect("at least one sample");
    Ok(WeightResult {
        value,
        split: (last.2 .0, last.2 .1),
        samples: samples.iter().map(|s| (s.0, s.1)).collect(),
        error_estimate,
        mu_bounded,
        mu_norms,
    })
}

fn mu_trend<T: Real>(norms: &[T]) -> Boundedness {
    let k = norms.len();
    if k < 3 {
        return Boundedness::Inconclusive;
    }
    let (a, b, c) = (norms[k - 3], norms[k - 2], norms[k - 1]);
    if !c.is_finite() {
        return Boundedness::Unbounded;
    }
    let scale = c.abs().max(T::one());
    if (c - b).abs() <= T::c(1e-8) * scale && (b - a).abs() <= T::c(1e-6) * scale {
        Boundedness::Bounded
    } else if c > T::c(1e6) * norms[0].max(T::one()) && c - b >= b - a {
        Boundedness::Unbounded
    } else {
        Boundedness::Inconclusive
    }
}

/// Monitors `|mu(exp(i t xi) u)|` along the ray.
pub fn hypothesis_h_probe<T: Real>(model: &Model<T>, x: &Pair<T>, xi: &SiteField<T>, opts: &RayOptions<T>) -> (Boundedness, Vec<(T, T)>) {
    let mut out = vec![];
    let mut t = T::zero();
    while t <= opts.t_max {
        let s = ray_sample(model, x, xi, t);
        out.push((t, s.mu_norm));
        if !s.mu_norm.is_finite() {
            break;
        }
        let k = out.len();
        if k >= 3 && mu_trend(&out.iter().map(|p| p.1).collect::<Vec<_>>()) != Boundedness::Inconclusive {
            break;
        }
        t = if t == T::zero() { opts.t_first } else { t * T::c(2.0) };
    }
    let norms: Vec<T> = out.iter().map(|p| p.1).collect();
    (mu_trend(&norms), out)
}

/// Kempf-Ness functional of `origin` at the imaginary gauge `s`, in closed
/// form: `<S F0 - tau, s> + 1/2 |codiff2(S^T s)|^2 + sum_j 1/4 |u0_j|^2 (exp(2 <W_j, s>) - 1)`.
/// Its gradient with respect to `s` is `Phi(apply(s, origin))`.
pub fn kempf_ness_value<T: Real>(model: &Model<T>, origin: &Pair<T>, s: &SiteField<T>) -> T {
    let g = &model.grid;
    let n = g.len();
    let sf = plaquette_to_site(g, &model.curvature(&origin.a));
    let lin = pairwise_sum_by(model.k() * n, |k| {
        let a = k / n;
        (sf.data[k] - model.spec.tau[a]) * s.data[k]
    }) * g.cell_area();
    let b = codiff2(g, &site_to_plaquette(g, s));
    let quad = T::c(0.5) * b.inner(g, &b);
    let quarter = T::c(0.25);
    let pot = pairwise_sum_by(model.n() * n, |k| {
        let (j, site) = (k / n, k % n);
        let w = model.wdot(s, j, site);
        quarter * origin.u.data[k].norm_sqr() * (T::c(2.0) * w).exp_m1()
    }) * g.cell_area();
    lin + quad + pot
}

/// Kempf-Ness functional along a path of gauges starting at the identity,
/// by trapezoidal integration of the one-form `<Phi(g x), d s>`. Only the
/// imaginary part of the path contributes.
pub fn kempf_ness<T: Real>(model: &Model<T>, origin: &Pair<T>, path: &[ComplexGauge<T>]) -> Vec<T> {
    let g = &model.grid;
    let mut out = Vec::with_capacity(path.len());
    let mut acc = T::zero();
    let mut prev: Option<(SiteField<T>, SiteField<T>)> = None;
    for gauge in path {
        let phi = model.moment_residual(&model.apply_complex_gauge(gauge, origin));
        if let Some((s0, phi0)) = &prev {
            let ds = gauge.s.sub(s0);
            acc = acc + T::c(0.5) * (phi0.inner(g, &ds) + phi.inner(g, &ds));
        }
        out.push(acc);
        prev = Some((gauge.s.clone(), phi));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentWeightReport<T> {
    /// `-w / |xi|`, `-inf` for an infinite weight.
    pub lhs: T,
    /// Infimum of `|Phi|` over the orbit, taken from the flow terminal value.
    pub rhs: T,
    pub slack: T,
    /// Whether equality was requested and holds.
    pub equality: Option<bool>,
}

/// Checks `-w / |xi| <= |Phi_inf| + tol`, and equality within `tol_eq` when given.
pub fn moment_weight_check<T: Real>(
    model: &Model<T>,
    xi: &SiteField<T>,
    w: &WeightResult<T>,
    terminal_phi: T,
    tol: T,
    tol_eq: Option<T>,
) -> Result<MomentWeightReport<T>, StabilityError> {
    let norm = xi.norm(&model.grid);
    if !(norm > T::zero()) {
        return Err(StabilityError::ZeroDirection);
    }
    let lhs = match w.value {
        WeightValue::Finite(v) => -v / norm,
        WeightValue::PlusInfinity => T::neg_infinity(),
    };
    if lhs > terminal_phi + tol {
        return Err(StabilityError::ViolationDetected {
            lhs: lhs.to_f64_lossy(),
            rhs: terminal_phi.to_f64_lossy(),
            tol: tol.to_f64_lossy(),
        });
    }
    let equality = tol_eq.map(|e| (lhs - terminal_phi).abs() <= e);
    Ok(MomentWeightReport { lhs, rhs: terminal_phi, slack: terminal_phi - lhs, equality })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityClass {
    Stable,
    Polystable,
    SemistableOnly,
    Unstable,
}

impl StabilityClass {
    pub fn token(&self) -> &'static str {
        match self {
            Self::Stable => "stable",
            Self::Polystable => "polystable",
            Self::SemistableOnly => "semistable-only",
            Self::Unstable => "unstable",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityVerdict<T> {
    pub class: StabilityClass,
    pub phi_norm: T,
    pub sigma_min: T,
    /// Residual of the critical point equations, `|L Phi|`.
    pub residual: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifyOptions<T> {
    /// Tolerance the limit was converged to; residuals above ten times this fail.
    pub tol: T,
    /// `|Phi|` at or below this counts as zero.
    pub phi_tol: T,
    /// `sigma_min` above this counts as injective.
    pub sigma_tol: T,
    pub lanczos_steps: usize,
}

impl<T: Real> Default for ClassifyOptions<T> {
    fn default() -> Self {
        Self { tol: T::c(1e-8), phi_tol: T::c(1e-5), sigma_tol: T::c(1e-6), lanczos_steps: 300 }
    }
}

/// `L* L xi = codiff(d0 xi) + sum_j W_j <W_j, xi> |u_j|^2`.
fn normal_operator<T: Real>(model: &Model<T>, p: &Pair<T>, xi: &SiteField<T>) -> SiteField<T> {
    let g = &model.grid;
    let n = g.len();
    let mut out = codiff(g, &d0(g, xi));
    for j in 0..model.n() {
        for s in 0..n {
            let u2 = p.u.data[j * n + s].norm_sqr();
            if u2 == T::zero() {
                continue;
            }
            let wx = model.wdot(xi, j, s) * u2;
            for a in 0..model.k() {
                out.data[a * n + s] = out.data[a * n + s] + model.spec.weight_t(a, j) * wx;
            }
        }
    }
    out
}

/// Smallest singular value of the infinitesimal action at `p`, from Lanczos
/// with full reorthogonalisation on `L* L`.
pub fn sigma_min<T: Real>(model: &Model<T>, p: &Pair<T>, steps: usize) -> T {
    let g = &model.grid;
    let dim = model.k() * g.len();
    let m = steps.min(dim).max(1);
    let mut rng = crate::rng::stream(0x1a2c, 3);
    let mut q = crate::rng::site_field(g, model.k(), &mut rng);
    q = q.scale(T::one() / q.norm(g));
    let mut basis: Vec<SiteField<T>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<T> = Vec::new();
    for k in 0..m {
        let mut w = normal_operator(model, p, &basis[k]);
        let a = w.inner(g, &basis[k]);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = w.inner(g, b);
                w = w.axpy(-c, b);
            }
        }
        let nb = w.norm(g);
        if k + 1 == m || nb <= T::c(1e-12) * a.abs().max(T::one()) {
            break;
        }
        beta.push(nb);
        basis.push(w.scale(T::one() / nb));
    }
    let lam = tridiagonal_min_eigenvalue(&alpha, &beta[..alpha.len() - 1]);
    lam.max(T::zero()).sqrt()
}

/// Classifies a converged flow limit from `|Phi|`, the injectivity of the
/// infinitesimal action and the residual of the critical point equations.
pub fn classify_limit<T: Real>(model: &Model<T>, p: &Pair<T>, opts: &ClassifyOptions<T>) -> Result<StabilityVerdict<T>, StabilityError> {
    let g = &model.grid;
    let phi = model.moment_residual(p);
    let residual = model.infinitesimal_action(p, &phi).norm(g);
    let limit = T::c(10.0) * opts.tol;
    if residual > limit {
        return Err(StabilityError::NotCritical { residual: residual.to_f64_lossy(), limit: limit.to_f64_lossy() });
    }
    let phi_norm = phi.norm(g);
    let sigma = sigma_min(model, p, opts.lanczos_steps);
    let class = if phi_norm > opts.phi_tol {
        StabilityClass::Unstable
    } else if sigma > opts.sigma_tol {
        StabilityClass::Stable
    } else {
        StabilityClass::Polystable
    };
    Ok(StabilityVerdict { class, phi_norm, sigma_min: sigma, residual })
}

/// Classification of the starting point of a flow run. A polystable limit
/// reached while the gauge keeps drifting (the orbit of the start is not
/// closed) marks the start as semistable only.
pub fn classify_run<T: Real>(
    model: &Model<T>,
    report: &ConvergenceReport<T>,
    path: &GaugePath<T>,
    opts: &ClassifyOptions<T>,
) -> Result<StabilityVerdict<T>, StabilityError> {
    let mut v = classify_limit(model, &report.final_state.pair, opts)?;
    if v.class != StabilityClass::Unstable {
        if let (Some((t2, s2)), true) = (path.samples.last(), path.samples.len() > 2) {
            let half = *t2 * T::c(0.5);
            let earlier = path
                .samples
                .iter()
                .rev()
                .find(|(t, _)| *t <= half)
                .map(|(_, s)| s.clone());
            if let Some(s1) = earlier {
                let drift = s2.sub(&s1).norm(&model.grid);
                if drift > T::c(1e-3) {
                    v.class = StabilityClass::SemistableOnly;
                }
            }
        }
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessReport<T> {
    /// Largest pointwise discrepancy of the aligned observables.
    pub discrepancy: T,
    /// Discrepancy per observable: `|u_j|^2`, curvature, `Phi`, energy density.
    pub per_observable: Vec<(String, T)>,
    pub shift: (usize, usize),
    pub phi_norms: (T, T),
    pub terminals: (crate::flow::Terminal, crate::flow::Terminal),
}

/// Gauge-invariant local observables of a pair, each as a flat site array.
pub fn observables<T: Real>(model: &Model<T>, p: &Pair<T>) -> Vec<(String, Vec<T>)> {
    let g = &model.grid;
    let n = g.len();
    let mut out = Vec::new();
    for j in 0..model.n() {
        out.push((format!("abs_u{j}_sq"), (0..n).map(|s| p.u.data[j * n + s].norm_sqr()).collect()));
    }
    let f = model.curvature(&p.a);
    for a in 0..model.k() {
        out.push((format!("curvature{a}"), f.comp(a).to_vec()));
    }
    let phi = model.moment_residual(p);
    for a in 0..model.k() {
        out.push((format!("phi{a}"), phi.comp(a).to_vec()));
    }
    let du = model.covariant_d(p);
    let mu = model.moment(&p.u);
    let half = T::c(0.5);
    let density = (0..n)
        .map(|s| {
            let mut e = T::zero();
            for a in 0..model.k() {
                e = e + f.at(a, s).powi(2) + mu.at(a, s).powi(2);
            }
            for j in 0..model.n() {
                e = e + du.x[j * n + s].norm_sqr() + du.y[j * n + s].norm_sqr();
            }
            half * e
        })
        .collect();
    out.push(("energy_density".into(), density));
    out
}

fn shifted_discrepancy<T: Real>(model: &Model<T>, a: &[T], b: &[T], di: usize, dj: usize) -> T {
    let g = &model.grid;
    let mut m = T::zero();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let s = g.idx((i + di) % g.nx, (j + dj) % g.ny);
            m = m.max((a[s] - b[g.idx(i, j)]).abs());
        }
    }
    m
}

/// Compares the limits of the flows from `x0` and from `gauge · x0` through
/// gauge-invariant observables, after the integer torus translation that
/// best aligns them.
pub fn ness_uniqueness_test<T: Real>(
    model: &Model<T>,
    x0: &Pair<T>,
    gauge: &ComplexGauge<T>,
    cfg: &FlowConfig<T>,
) -> Result<UniquenessReport<T>, StabilityError> {
    let x1 = model.apply_complex_gauge(gauge, x0);
    let (r0, r1) = rayon::join(|| run_flow(model, x0, cfg), || run_flow(model, &x1, cfg));
    let (r0, r1) = (r0?.0, r1?.0);
    let (p0, p1) = (&r0.final_state.pair, &r1.final_state.pair);
    let o0 = observables(model, p0);
    let o1 = observables(model, p1);
    let g = &model.grid;
    let mut best = (T::infinity(), (0, 0));
    for dj in 0..g.ny {
        for di in 0..g.nx {
            let d = o0
                .iter()
                .zip(&o1)
                .fold(T::zero(), |m, (a, b)| m.max(shifted_discrepancy(model, &a.1, &b.1, di, dj)));
            if d < best.0 {
                best = (d, (di, dj));
            }
        }
    }
    let (di, dj) = best.1;
    let per_observable = o0
        .iter()
        .zip(&o1)
        .map(|(a, b)| (a.0.clone(), shifted_discrepancy(model, &a.1, &b.1, di, dj)))
        .collect();
    Ok(UniquenessReport {
        discrepancy: best.0,
        per_observable,
        shift: best.1,
        phi_norms: (r0.final_state.phi_norm(model), r1.final_state.phi_norm(model)),
        terminals: (r0.terminal, r1.terminal),
    })
}
