//! The surface shrunk to a point: a torus acting linearly on `C^n` with
//! moment map `mu_a(x) = 1/2 sum_j W_aj |x_j|^2 - tau_a`.
//!
//! Everything here has a closed form or a cheap brute-force answer, which
//! makes the module an oracle for the lattice code: constant fields on the
//! lattice with trivial bundles follow exactly the ODE of this module.
//!
//! Real coordinates of `x` are `(re x_0, .., re x_{n-1}, im x_0, .., im x_{n-1})`.

use num_complex::Complex;
use thiserror::Error;

use crate::fields::ActionSpec;
use crate::linalg::{fit_line, solve, symmetric_eigen};
use crate::rng;
use crate::stability::{ray_limit, RayOptions, StabilityError, WeightValue};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiniteError {
    #[error("point has {got} coordinates, the action expects {expected}")]
    Length { got: usize, expected: usize },
    #[error("point has non-finite coordinates")]
    NonFinite,
    #[error("direction has zero norm or wrong length")]
    BadDirection,
    #[error("flow not converged by t = {t:e}: |grad F| = {grad:e}")]
    MaxTimeReached { t: f64, grad: f64 },
    #[error("step size underflow at t = {t:e}")]
    StepUnderflow { t: f64 },
    #[error("all finite weights are >= -{tol:e}: the point is not unstable")]
    NotUnstable { tol: f64 },
    #[error("point is not critical: |grad F| = {grad:e}")]
    NotCritical { grad: f64 },
    #[error("Newton iteration for the slice correction did not converge (residual {residual:e})")]
    NewtonDiverged { residual: f64 },
    #[error("Hessian eigenvalue {value:e} too close to the kernel threshold {threshold:e}")]
    RankAmbiguous { value: f64, threshold: f64 },
    #[error("F is constant on the shell of radius {radius:e}")]
    DegenerateSamples { radius: f64 },
    #[error("fitted exponent {gamma} is not below one")]
    GammaNotBelowOne { gamma: f64 },
    #[error(transparent)]
    Ray(#[from] StabilityError),
}

/// A point of `C^n` together with the action.
#[derive(Clone, Debug, PartialEq)]
pub struct FinitePoint<T> {
    pub x: Vec<Complex<T>>,
    pub spec: ActionSpec<T>,
}

impl<T: Real> FinitePoint<T> {
    pub fn new(spec: ActionSpec<T>, x: Vec<Complex<T>>) -> Result<Self, FiniteError> {
        if x.len() != spec.n {
            return Err(FiniteError::Length { got: x.len(), expected: spec.n });
        }
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FiniteError::NonFinite);
        }
        Ok(Self { x, spec })
    }

    pub fn from_real(spec: ActionSpec<T>, x: &[T]) -> Result<Self, FiniteError> {
        Self::new(spec, x.iter().map(|&r| Complex::new(r, T::zero())).collect())
    }

    pub fn moment(&self) -> Vec<T> {
        fd_moment(&self.spec, &self.x)
    }

    pub fn value(&self) -> T {
        fd_value(&self.spec, &self.x)
    }

    pub fn gradient(&self) -> Vec<Complex<T>> {
        fd_gradient(&self.spec, &self.x)
    }

    fn real_coords(&self) -> Vec<T> {
        to_real(&self.x)
    }
}

fn to_real<T: Real>(x: &[Complex<T>]) -> Vec<T> {
    x.iter().map(|z| z.re).chain(x.iter().map(|z| z.im)).collect()
}

fn to_complex<T: Real>(y: &[T], n: usize) -> Vec<Complex<T>> {
    (0..n).map(|j| Complex::new(y[j], y[n + j])).collect()
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn fd_moment<T: Real>(spec: &ActionSpec<T>, x: &[Complex<T>]) -> Vec<T> {
    spec.moment_at(x)
}

/// `F(x) = 1/2 |mu(x)|^2`.
pub fn fd_value<T: Real>(spec: &ActionSpec<T>, x: &[Complex<T>]) -> T {
    T::c(0.5) * fd_moment(spec, x).iter().fold(T::zero(), |a, &m| a + m * m)
}

/// `grad F = (sum_a W_aj mu_a) x_j`, the infinitesimal action of `-i mu`
/// turned by `i`.
pub fn fd_gradient<T: Real>(spec: &ActionSpec<T>, x: &[Complex<T>]) -> Vec<Complex<T>> {
    let mu = fd_moment(spec, x);
    (0..spec.n).map(|j| x[j] * wdot(spec, &mu, j)).collect()
}

fn wdot<T: Real>(spec: &ActionSpec<T>, xi: &[T], j: usize) -> T {
    (0..spec.k).fold(T::zero(), |a, c| a + spec.weight_t(c, j) * xi[c])
}

fn real_gradient<T: Real>(spec: &ActionSpec<T>, y: &[T]) -> Vec<T> {
    to_real(&fd_gradient(spec, &to_complex(y, spec.n)))
}

/// Hessian of `F` in real coordinates, row-major `2n x 2n`.
fn real_hessian<T: Real>(spec: &ActionSpec<T>, y: &[T]) -> Vec<T> {
    let n = spec.n;
    let d = 2 * n;
    let mu = fd_moment(spec, &to_complex(y, n));
    let comp = |p: usize| p % n;
    let mut h = vec![T::zero(); d * d];
    for p in 0..d {
        for q in 0..d {
            let mut acc = T::zero();
            for a in 0..spec.k {
                acc = acc + spec.weight_t(a, comp(p)) * y[p] * spec.weight_t(a, comp(q)) * y[q];
            }
            if p == q {
                acc = acc + wdot(spec, &mu, comp(p));
            }
            h[p * d + q] = acc;
        }
    }
    h
}

/// `x` scaled by the imaginary gauge `s`: `x_j exp(<W_j, s>)`.
pub fn fd_apply<T: Real>(spec: &ActionSpec<T>, x: &[Complex<T>], s: &[T]) -> Vec<Complex<T>> {
    (0..spec.n).map(|j| x[j] * wdot(spec, s, j).exp()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdFlowConfig<T> {
    pub t_max: T,
    /// Stop once `|grad F| <= tol`; zero integrates the whole horizon.
    pub tol: T,
    pub rtol: T,
    pub atol: T,
    pub h0: T,
}

impl<T: Real> Default for FdFlowConfig<T> {
    fn default() -> Self {
        Self { t_max: T::c(1e4), tol: T::c(1e-10), rtol: T::c(1e-11), atol: T::c(1e-13), h0: T::c(1e-3) }
    }
}

/// Accepted states of an adaptive flow run, with the gauge `s(t)` solving
/// `ds/dt = -mu`, so that `x(t) = apply(s(t), x0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FdTrajectory<T> {
    pub ts: Vec<T>,
    pub xs: Vec<Vec<Complex<T>>>,
    pub gauge: Vec<Vec<T>>,
    pub mu_norms: Vec<T>,
    pub converged: bool,
}

impl<T: Real> FdTrajectory<T> {
    pub fn limit(&self) -> &[Complex<T>] {
        self.xs.last().expect("trajectory has the initial state")
    }

    pub fn final_time(&self) -> T {
        *self.ts.last().expect("trajectory has the initial state")
    }

    /// `lim s(t)/t`, as the difference quotient over the second half of the run.
    pub fn dominant_weight(&self) -> Vec<T> {
        let t2 = self.final_time();
        let i1 = self
            .ts
            .iter()
            .enumerate()
            .min_by(|a, b| (*a.1 - t2 * T::c(0.5)).abs().partial_cmp(&(*b.1 - t2 * T::c(0.5)).abs()).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (t1, s1) = (self.ts[i1], &self.gauge[i1]);
        let s2 = self.gauge.last().expect("nonempty");
        let dt = t2 - t1;
        s2.iter().zip(s1).map(|(&b, &a)| if dt > T::zero() { (b - a) / dt } else { T::zero() }).collect()
    }
}

fn flow_rhs<T: Real>(spec: &ActionSpec<T>, y: &[T]) -> Vec<T> {
    let n = spec.n;
    let x = to_complex(&y[..2 * n], n);
    let mu = fd_moment(spec, &x);
    let g = fd_gradient(spec, &x);
    to_real(&g).into_iter().map(|v| -v).chain(mu.into_iter().map(|m| -m)).collect()
}

const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus the embedded fourth-order ones.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand-Prince 5(4) step; returns the new state and the scaled error norm.
fn dopri_step<T: Real>(spec: &ActionSpec<T>, y: &[T], h: T, rtol: T, atol: T) -> (Vec<T>, T) {
    let d = y.len();
    let mut k: Vec<Vec<T>> = Vec::with_capacity(7);
    for stage in 0..7 {
        let yi: Vec<T> = (0..d)
            .map(|i| y[i] + h * (0..stage).fold(T::zero(), |acc, r| acc + T::c(DP_A[stage][r]) * k[r][i]))
            .collect();
        if stage == 6 {
            // First-same-as-last: the last stage point is the new state.
            let f = flow_rhs(spec, &yi);
            k.push(f);
            let err = (0..d)
                .map(|i| {
                    let e = h * (0..7).fold(T::zero(), |acc, r| acc + T::c(DP_E[r]) * k[r][i]);
                    let sc = atol + rtol * y[i].abs().max(yi[i].abs());
                    (e / sc).powi(2)
                })
                .fold(T::zero(), |a, v| a + v);
            return (yi, (err / T::from_usize_lossy(d)).sqrt());
        }
        k.push(flow_rhs(spec, &yi));
    }
    unreachable!("seven stages")
}

/// Integrates `F`-gradient flow with adaptive Dormand-Prince steps.
pub fn fd_flow<T: Real>(p: &FinitePoint<T>, cfg: &FdFlowConfig<T>) -> Result<FdTrajectory<T>, FiniteError> {
    let spec = &p.spec;
    let n = spec.n;
    let mut y: Vec<T> = p.real_coords().into_iter().chain(std::iter::repeat(T::zero()).take(spec.k)).collect();
    let mut t = T::zero();
    let mut h = cfg.h0;
    let norm_mu = |y: &[T]| norm(&fd_moment(spec, &to_complex(&y[..2 * n], n)));
    let grad = |y: &[T]| norm(&real_gradient(spec, &y[..2 * n]));
    let mut traj = FdTrajectory {
        ts: vec![t],
        xs: vec![p.x.clone()],
        gauge: vec![y[2 * n..].to_vec()],
        mu_norms: vec![norm_mu(&y)],
        converged: false,
    };
    loop {
        if cfg.tol > T::zero() && grad(&y) <= cfg.tol {
            traj.converged = true;
            return Ok(traj);
        }
        if t >= cfg.t_max {
            if cfg.tol > T::zero() {
                return Err(FiniteError::MaxTimeReached { t: t.to_f64_lossy(), grad: grad(&y).to_f64_lossy() });
            }
            return Ok(traj);
        }
        h = h.min(cfg.t_max - t);
        let (next, err) = dopri_step(spec, &y, h, cfg.rtol, cfg.atol);
        if err <= T::one() && next.iter().all(|v| v.is_finite()) {
            t = t + h;
            y = next;
            traj.ts.push(t);
            traj.xs.push(to_complex(&y[..2 * n], n));
            traj.gauge.push(y[2 * n..].to_vec());
            traj.mu_norms.push(norm_mu(&y));
        }
        let factor = if err > T::zero() && err.is_finite() {
            (T::c(0.9) * err.powf(T::c(-0.2))).max(T::c(0.2)).min(T::c(5.0))
        } else if err.is_finite() {
            T::c(5.0)
        } else {
            T::c(0.2)
        };
        h = h * factor;
        if h < T::epsilon() * t.max(T::one()) {
            return Err(FiniteError::StepUnderflow { t: t.to_f64_lossy() });
        }
    }
}

fn check_direction<T: Real>(spec: &ActionSpec<T>, xi: &[T]) -> Result<T, FiniteError> {
    let nx = norm(xi);
    if xi.len() != spec.k || !(nx > T::zero()) {
        return Err(FiniteError::BadDirection);
    }
    Ok(nx)
}

/// Closed-form weight: `+inf` if a supported coordinate expands along `xi`,
/// otherwise `<mu(x+), xi>` where `x+` keeps the coordinates fixed by `xi`.
pub fn fd_weight<T: Real>(p: &FinitePoint<T>, xi: &[T]) -> Result<WeightValue<T>, FiniteError> {
    let spec = &p.spec;
    let nx = check_direction(spec, xi)?;
    let mut plus = vec![Complex::new(T::zero(), T::zero()); spec.n];
    for j in 0..spec.n {
        if p.x[j].norm_sqr() == T::zero() {
            continue;
        }
        let wn = (0..spec.k).fold(T::zero(), |a, c| a + spec.weight_t(c, j).powi(2)).sqrt();
        let rate = wdot(spec, xi, j);
        let zero_tol = T::c(1e-12) * wn * nx;
        if rate > zero_tol {
            return Ok(WeightValue::PlusInfinity);
        }
        if rate.abs() <= zero_tol {
            plus[j] = p.x[j];
        }
    }
    Ok(WeightValue::Finite(dot(&fd_moment(spec, &plus), xi)))
}

/// Weight as the numeric limit of `<mu(exp(t xi) x), xi>`.
pub fn fd_ray_weight<T: Real>(p: &FinitePoint<T>, xi: &[T], opts: &RayOptions<T>) -> Result<WeightValue<T>, FiniteError> {
    check_direction(&p.spec, xi)?;
    let (value, _, _) = ray_limit(
        |t| {
            let s: Vec<T> = xi.iter().map(|&v| v * t).collect();
            (dot(&fd_moment(&p.spec, &fd_apply(&p.spec, &p.x, &s)), xi), ())
        },
        opts,
    )?;
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BruteForceOptions<T> {
    /// Grid points per axis on each face of the cube around the unit sphere.
    pub per_axis: usize,
    /// Number of best grid points refined by pattern search.
    pub refine: usize,
    /// Values at or below this mean no destabilising direction.
    pub tol: T,
}

impl<T: Real> Default for BruteForceOptions<T> {
    fn default() -> Self {
        Self { per_axis: 41, refine: 8, tol: T::c(1e-10) }
    }
}

fn destabilizing_value<T: Real>(p: &FinitePoint<T>, xi: &[T]) -> T {
    match fd_weight(p, xi) {
        Ok(WeightValue::Finite(w)) => -w / norm(xi),
        _ => T::neg_infinity(),
    }
}

fn normalized<T: Real>(v: &[T]) -> Vec<T> {
    let n = norm(v);
    v.iter().map(|&x| x / n).collect()
}

/// Maximises `-w(x, xi)/|xi|` over the unit sphere of `R^k`: exhaustive
/// search on a grid of the cube surface projected to the sphere, followed by
/// compass search from the best grid points.
pub fn fd_dominant_weight_bruteforce<T: Real>(p: &FinitePoint<T>, opts: &BruteForceOptions<T>) -> Result<(Vec<T>, T), FiniteError> {
    let k = p.spec.k;
    let m = opts.per_axis.max(2);
    let mut candidates: Vec<(T, Vec<T>)> = Vec::new();
    for axis in 0..k {
        for sign in [-1.0, 1.0] {
            let faces = m.pow((k - 1) as u32);
            for idx in 0..faces {
                let mut v = vec![T::zero(); k];
                let mut rest = idx;
                for (c, slot) in v.iter_mut().enumerate() {
                    if c == axis {
                        *slot = T::c(sign);
                    } else {
                        let q = rest % m;
                        rest /= m;
                        *slot = T::c(-1.0 + 2.0 * q as f64 / (m - 1) as f64);
                    }
                }
                let v = normalized(&v);
                candidates.push((destabilizing_value(p, &v), v));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut best = candidates[0].clone();
    for (v0, start) in candidates.into_iter().take(opts.refine) {
        if !v0.is_finite() {
            continue;
        }
        let (mut val, mut cur) = (v0, start);
        let mut step = T::c(0.1);
        while step > T::c(1e-13) {
            let mut improved = false;
            for c in 0..k {
                for sgn in [-1.0, 1.0] {
                    let mut trial = cur.clone();
                    trial[c] = trial[c] + T::c(sgn) * step;
                    if !(norm(&trial) > T::zero()) {
                        continue;
                    }
                    let trial = normalized(&trial);
                    let tv = destabilizing_value(p, &trial);
                    if tv > val {
                        val = tv;
                        cur = trial;
                        improved = true;
                    }
                }
            }
            if !improved {
                step = step * T::c(0.5);
            }
        }
        if val > best.0 {
            best = (val, cur);
        }
    }
    if !(best.0 > opts.tol) {
        return Err(FiniteError::NotUnstable { tol: opts.tol.to_f64_lossy() });
    }
    Ok((best.1, best.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSample<T> {
    /// Coordinates in the kernel basis.
    pub coords: Vec<T>,
    pub f: T,
    /// `M(x0 + phi(x0))` restricted to the kernel.
    pub df: Vec<T>,
    /// Remaining component of `M` off the kernel after Newton.
    pub slice_residual: T,
    /// Relative mismatch between a finite-difference derivative of `f` and `df`.
    pub identity_defect: T,
}

/// Lyapunov-Schmidt reduction of `F` at a critical point.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedPotential<T> {
    pub center: Vec<T>,
    pub eigenvalues: Vec<T>,
    /// Orthonormal basis of the Hessian kernel in real coordinates.
    pub kernel: Vec<Vec<T>>,
    complement: Vec<Vec<T>>,
    pub samples: Vec<ReducedSample<T>>,
    /// Slope of `log |df|` against `log |f - f(0)|` over the samples, with R^2.
    pub gamma: Option<(f64, f64)>,
    spec: ActionSpec<T>,
    newton_tol: T,
    max_newton: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedOptions<T> {
    pub radii: Vec<T>,
    pub directions: usize,
    pub seed: u64,
    pub rank_tol: T,
    pub newton_tol: T,
    pub max_newton: usize,
}

impl<T: Real> Default for ReducedOptions<T> {
    fn default() -> Self {
        Self {
            radii: vec![T::c(1e-1), T::c(3e-2), T::c(1e-2)],
            directions: 4,
            seed: 0,
            rank_tol: T::c(1e-8),
            newton_tol: T::c(1e-13),
            max_newton: 60,
        }
    }
}

impl<T: Real> ReducedPotential<T> {
    /// `(f, phi)` at kernel coordinates `c`, with the Newton residual.
    pub fn eval(&self, coords: &[T]) -> Result<(T, Vec<T>, T), FiniteError> {
        let d = self.center.len();
        let x0: Vec<T> = (0..d)
            .map(|i| self.center[i] + self.kernel.iter().zip(coords).fold(T::zero(), |a, (b, &c)| a + b[i] * c))
            .collect();
        let m = self.complement.len();
        let mut w = vec![T::zero(); m];
        let point = |w: &[T]| -> Vec<T> {
            (0..d).map(|i| x0[i] + self.complement.iter().zip(w).fold(T::zero(), |a, (q, &c)| a + q[i] * c)).collect()
        };
        let mut residual = T::zero();
        for _ in 0..=self.max_newton {
            let y = point(&w);
            let g = real_gradient(&self.spec, &y);
            let r: Vec<T> = self.complement.iter().map(|q| dot(q, &g)).collect();
            residual = norm(&r);
            if residual <= self.newton_tol * norm(&g).max(T::one()) || m == 0 {
                let f = fd_value(&self.spec, &to_complex(&y, self.spec.n));
                let phi = (0..d).map(|i| y[i] - x0[i]).collect();
                return Ok((f, phi, residual));
            }
            let h = real_hessian(&self.spec, &y);
            let mut j = vec![T::zero(); m * m];
            for a in 0..m {
                let hq: Vec<T> = (0..d).map(|r| dot(&h[r * d..(r + 1) * d], &self.complement[a])).collect();
                for b in 0..m {
                    j[b * m + a] = dot(&self.complement[b], &hq);
                }
            }
            let delta = solve(&j, &r, m).ok_or(FiniteError::NewtonDiverged { residual: residual.to_f64_lossy() })?;
            for a in 0..m {
                w[a] = w[a] - delta[a];
            }
        }
        Err(FiniteError::NewtonDiverged { residual: residual.to_f64_lossy() })
    }

    /// `M(x0 + phi(x0))` in kernel coordinates.
    pub fn derivative(&self, coords: &[T]) -> Result<Vec<T>, FiniteError> {
        let (_, phi, _) = self.eval(coords)?;
        let d = self.center.len();
        let y: Vec<T> = (0..d)
            .map(|i| self.center[i] + phi[i] + self.kernel.iter().zip(coords).fold(T::zero(), |a, (b, &c)| a + b[i] * c))
            .collect();
        let g = real_gradient(&self.spec, &y);
        Ok(self.kernel.iter().map(|b| dot(b, &g)).collect())
    }
}

/// Reduces `F` to the Hessian kernel at the critical point `p` and samples
/// the reduced potential on spheres of the given radii.
pub fn fd_reduced_potential<T: Real>(p: &FinitePoint<T>, opts: &ReducedOptions<T>) -> Result<ReducedPotential<T>, FiniteError> {
    let spec = &p.spec;
    let center = p.real_coords();
    let g0 = norm(&real_gradient(spec, &center));
    if g0 > T::c(1e-10) {
        return Err(FiniteError::NotCritical { grad: g0.to_f64_lossy() });
    }
    let d = center.len();
    let (vals, vecs) = symmetric_eigen(&real_hessian(spec, &center), d);
    let scale = vals.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let threshold = opts.rank_tol * scale;
    let mut kernel = Vec::new();
    let mut complement = Vec::new();
    for (c, &v) in vals.iter().enumerate() {
        if v.abs() > threshold && v.abs() <= T::c(100.0) * threshold {
            return Err(FiniteError::RankAmbiguous { value: v.to_f64_lossy(), threshold: threshold.to_f64_lossy() });
        }
        let col: Vec<T> = (0..d).map(|r| vecs[r * d + c]).collect();
        if v.abs() <= threshold {
            kernel.push(col);
        } else {
            complement.push(col);
        }
    }
    let mut rp = ReducedPotential {
        center,
        eigenvalues: vals,
        kernel,
        complement,
        samples: Vec::new(),
        gamma: None,
        spec: spec.clone(),
        newton_tol: opts.newton_tol,
        max_newton: opts.max_newton,
    };
    let kd = rp.kernel.len();
    let (f_center, _, _) = rp.eval(&vec![T::zero(); kd])?;
    let mut rng = rng::stream(opts.seed, 11);
    let mut coords_list = vec![vec![T::zero(); kd]];
    if kd > 0 {
        for &r in &opts.radii {
            for _ in 0..opts.directions {
                let dir: Vec<T> = (0..kd).map(|_| rng::normal::<T>(&mut rng)).collect();
                let dir = normalized(&dir);
                coords_list.push(dir.iter().map(|&v| v * r).collect());
            }
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for coords in coords_list {
        let (f, _, slice_residual) = rp.eval(&coords)?;
        let df = rp.derivative(&coords)?;
        let eps = T::c(1e-3) * norm(&coords).max(T::c(1e-2));
        let mut defect = T::zero();
        for (c, &dfc) in df.iter().enumerate() {
            let at = |h: T| -> Result<T, FiniteError> {
                let mut q = coords.clone();
                q[c] = q[c] + h;
                Ok(rp.eval(&q)?.0)
            };
            let fd = (T::c(8.0) * (at(eps)? - at(-eps)?) - (at(T::c(2.0) * eps)? - at(T::c(-2.0) * eps)?)) / (T::c(12.0) * eps);
            defect = defect.max((fd - dfc).abs() / norm(&df).max(T::epsilon().sqrt()));
        }
        let drop = (f - f_center).abs();
        let dn = norm(&df);
        if drop > T::zero() && dn > T::zero() {
            xs.push(drop.to_f64_lossy().ln());
            ys.push(dn.to_f64_lossy().ln());
        }
        rp.samples.push(ReducedSample { coords, f, df, slice_residual, identity_defect: defect });
    }
    rp.gamma = fit_line(&xs, &ys).map(|l| (l.slope, l.r2));
    Ok(rp)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LojasiewiczProbe {
    pub gamma: f64,
    pub c: f64,
    pub r2: f64,
    /// `(|F - F(x_c)|, |grad F|)` pairs used in the fit.
    pub samples: Vec<(f64, f64)>,
    /// Fresh samples checked against `|grad F| >= C |F - F(x_c)|^gamma`, and failures.
    pub revalidated: usize,
    pub violations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LojasiewiczProbeOptions {
    pub per_shell: usize,
    pub fresh: usize,
    pub seed: u64,
}

impl Default for LojasiewiczProbeOptions {
    fn default() -> Self {
        Self { per_shell: 64, fresh: 1000, seed: 0 }
    }
}

/// Samples shells of the given radii around the critical point, fits
/// `log |grad F| = log C + gamma log |F - F(x_c)|` and takes the largest
/// `C` valid on the shells and on a calibration draw from the annulus
/// between them; the pair is then rechecked on fresh samples.
pub fn fd_lojasiewicz_probe<T: Real>(p: &FinitePoint<T>, radii: &[T], opts: &LojasiewiczProbeOptions) -> Result<LojasiewiczProbe, FiniteError> {
    let spec = &p.spec;
    let center = p.real_coords();
    let d = center.len();
    let g0 = norm(&real_gradient(spec, &center));
    if g0 > T::c(1e-10) {
        return Err(FiniteError::NotCritical { grad: g0.to_f64_lossy() });
    }
    let f0 = p.value();
    let mut rng = rng::stream(opts.seed, 12);
    let probe = |r: T, rng: &mut rand_chacha::ChaCha8Rng| -> (f64, f64) {
        let dir: Vec<T> = (0..d).map(|_| rng::normal::<T>(rng)).collect();
        let dir = normalized(&dir);
        let y: Vec<T> = (0..d).map(|i| center[i] + r * dir[i]).collect();
        let f = (fd_value(spec, &to_complex(&y, spec.n)) - f0).abs();
        let g = norm(&real_gradient(spec, &y));
        (f.to_f64_lossy(), g.to_f64_lossy())
    };
    let mut samples = Vec::new();
    for &r in radii {
        let shell: Vec<(f64, f64)> = (0..opts.per_shell).map(|_| probe(r, &mut rng)).collect();
        if shell.iter().all(|s| !(s.0 > 0.0)) {
            return Err(FiniteError::DegenerateSamples { radius: r.to_f64_lossy() });
        }
        samples.extend(shell.into_iter().filter(|s| s.0 > 0.0 && s.1 > 0.0));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let fit = fit_line(&xs, &ys).ok_or(FiniteError::DegenerateSamples { radius: radii.first().map_or(0.0, |r| r.to_f64_lossy()) })?;
    let gamma = fit.slope;
    if !(gamma < 1.0) {
        return Err(FiniteError::GammaNotBelowOne { gamma });
    }
    let (rmin, rmax) = radii.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.to_f64_lossy()), hi.max(r.to_f64_lossy())));
    let in_annulus = |rng: &mut rand_chacha::ChaCha8Rng| {
        let u: f64 = rng::uniform::<f64>(rng, 0.0, 1.0);
        probe(T::c(rmin + (rmax - rmin) * u), rng)
    };
    // With a fitted rather than exact exponent the ratio can dip between
    // shells, so C is calibrated on the whole annulus, then revalidated on
    // independent samples.
    let calibration: Vec<(f64, f64)> = (0..opts.fresh).map(|_| in_annulus(&mut rng)).collect();
    let c = samples
        .iter()
        .chain(&calibration)
        .filter(|s| s.0 > 0.0)
        .map(|s| s.1 / s.0.powf(gamma))
        .fold(f64::INFINITY, f64::min)
        * (1.0 - 1e-6);
    let mut violations = 0;
    for _ in 0..opts.fresh {
        let (f, g) = in_annulus(&mut rng);
        if f > 0.0 && g < c * f.powf(gamma) {
            violations += 1;
        }
    }
    Ok(LojasiewiczProbe { gamma, c, r2: fit.r2, samples, revalidated: opts.fresh, violations })
}
