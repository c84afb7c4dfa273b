//! Connections, sections and the (complexified) gauge action for a torus
//! group `T^k` acting on `C^n` with integer weights.
//!
//! Conventions, used consistently everywhere:
//!
//! * covariant derivative `D = d - i <W_j, A>` on component `j`;
//! * unitary gauge `theta`: `u_j -> exp(-i <W_j, theta>) u_j`, `a -> a - d0 theta`;
//! * moment map `mu_a = 1/2 sum_j W_aj |u_j|^2 - tau_a`;
//! * imaginary gauge `s`: `u_j -> exp(<W_j, s>) u_j`, `a -> a + codiff2(site_to_plaquette(s))`.
//!
//! With these choices `t -> <Phi(exp(i t xi) x), xi>` is nondecreasing,
//! positive degree means positive flux, and the moment residual
//! `Phi = *F + mu` is evaluated at the sites, the plaquette curvature being
//! averaged onto them.
//!
//! A nonzero degree is realised by a constant-curvature background
//! (`A_x = 0`, `A_y = B x` with `B = 2 pi d / volume`) plus a periodic
//! fluctuation `a`. Sections are periodic in y and pick up the transition
//! phase `exp(i <W_j, B> lx y)` across the x-seam.

use num_complex::Complex;
use thiserror::Error;

use crate::lattice::{
    codiff, codiff2, d0, d1, hodge, pairwise_sum_by, plaquette_to_site, site_to_plaquette,
    ComplexLinkField, ComplexSiteField, LatticeError, LinkField, PlaquetteField, SiteField,
    Spectral, TorusGrid,
};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("weight matrix has {got} entries, expected k*n = {expected}")]
    WeightShape { got: usize, expected: usize },
    #[error("{what} has length {got}, expected {expected}")]
    Length { what: &'static str, got: usize, expected: usize },
    #[error("group rank k and target dimension n must be positive")]
    EmptyAction,
    #[error("tau must be finite")]
    NonFiniteTau,
    #[error("seam cocycle inconsistent at plaquette ({i}, {j}) of component {comp}: holonomy defect {defect:e}")]
    Cocycle { comp: usize, i: usize, j: usize, defect: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Linear torus action: `k x n` integer weights `W`, central shift `tau`
/// and bundle degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpec<T> {
    pub k: usize,
    pub n: usize,
    /// Row-major `k x n`: `weights[a * n + j] = W_aj`.
    pub weights: Vec<i64>,
    pub tau: Vec<T>,
    pub degrees: Vec<i64>,
    proper: bool,
}

impl<T: Real> ActionSpec<T> {
    pub fn new(k: usize, n: usize, weights: Vec<i64>, tau: Vec<T>, degrees: Vec<i64>) -> Result<Self, FieldError> {
        if k == 0 || n == 0 {
            return Err(FieldError::EmptyAction);
        }
        if weights.len() != k * n {
            return Err(FieldError::WeightShape { got: weights.len(), expected: k * n });
        }
        if tau.len() != k {
            return Err(FieldError::Length { what: "tau", got: tau.len(), expected: k });
        }
        if degrees.len() != k {
            return Err(FieldError::Length { what: "degrees", got: degrees.len(), expected: k });
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(FieldError::NonFiniteTau);
        }
        let mut spec = Self { k, n, weights, tau, degrees, proper: false };
        spec.proper = spec.probe_properness();
        Ok(spec)
    }

    /// Circle acting on `C` with weight one.
    pub fn circle(tau: T, degree: i64) -> Self {
        Self::new(1, 1, vec![1], vec![tau], vec![degree]).expect("valid circle action")
    }

    #[inline]
    pub fn weight(&self, a: usize, j: usize) -> i64 {
        self.weights[a * self.n + j]
    }

    #[inline]
    pub fn weight_t(&self, a: usize, j: usize) -> T {
        T::c(self.weight(a, j) as f64)
    }

    /// Degree of the line bundle carrying component `j`: `sum_a W_aj d_a`.
    pub fn component_degree(&self, j: usize) -> i64 {
        (0..self.k).map(|a| self.weight(a, j) * self.degrees[a]).sum()
    }

    /// Whether `mu` is proper, probed on the unit simplex of `|u_j|^2`
    /// values: `mu` is proper exactly when `W v` stays away from zero there.
    pub fn is_proper(&self) -> bool {
        self.proper
    }

    /// Minimises the convex function `|W v|^2` over the simplex by projected
    /// gradient descent.
    fn probe_properness(&self) -> bool {
        let (k, n) = (self.k, self.n);
        let w = |a: usize, j: usize| self.weight(a, j) as f64;
        let lip: f64 = 2.0 * self.weights.iter().map(|&x| (x * x) as f64).sum::<f64>().max(1.0);
        let mut v = vec![1.0 / n as f64; n];
        let mut best = f64::INFINITY;
        for _ in 0..20_000 {
            let wv: Vec<f64> = (0..k).map(|a| (0..n).map(|j| w(a, j) * v[j]).sum()).collect();
            best = best.min(wv.iter().map(|x| x * x).sum::<f64>().sqrt());
            let grad: Vec<f64> = (0..n).map(|j| 2.0 * (0..k).map(|a| w(a, j) * wv[a]).sum::<f64>()).collect();
            let y: Vec<f64> = v.iter().zip(&grad).map(|(x, g)| x - g / lip).collect();
            v = project_simplex(&y);
        }
        best > 1e-6
    }

    /// Smallest positive weight entry, if any.
    pub fn min_positive_weight(&self) -> Option<i64> {
        self.weights.iter().copied().filter(|&w| w > 0).min()
    }

    /// Bound on `sup |u|^2` that the flow can never exceed, given the
    /// initial supremum: `max(sup|u0|^2, 2 max tau / min positive weight)`.
    pub fn sup_bound(&self, sup_u0_sq: T) -> T {
        let tmax = self.tau.iter().fold(T::neg_infinity(), |m, &t| m.max(t));
        match self.min_positive_weight() {
            Some(w) => sup_u0_sq.max(T::c(2.0) * tmax / T::c(w as f64)),
            None => sup_u0_sq,
        }
    }

    /// Moment map at a single point of `C^n`.
    pub fn moment_at(&self, u: &[Complex<T>]) -> Vec<T> {
        (0..self.k)
            .map(|a| {
                let s = (0..self.n).fold(T::zero(), |acc, j| acc + self.weight_t(a, j) * u[j].norm_sqr());
                T::c(0.5) * s - self.tau[a]
            })
            .collect()
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    y.iter().map(|x| (x - shift).max(0.0)).collect()
}

/// Element of the complexified abelian gauge group: `exp(s - i theta)`
/// pointwise, `s` and `theta` both `R^k`-valued site fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGauge<T> {
    pub s: SiteField<T>,
    pub theta: SiteField<T>,
}

/// Lie algebra valued site field.
pub type LieAlgebraField<T> = SiteField<T>;

impl<T: Real> ComplexGauge<T> {
    pub fn identity(grid: &TorusGrid<T>, k: usize) -> Self {
        Self { s: SiteField::zeros(grid, k), theta: SiteField::zeros(grid, k) }
    }

    pub fn unitary(theta: SiteField<T>) -> Self {
        Self { s: SiteField { comps: theta.comps, data: vec![T::zero(); theta.data.len()] }, theta }
    }

    pub fn imaginary(s: SiteField<T>) -> Self {
        Self { theta: SiteField { comps: s.comps, data: vec![T::zero(); s.data.len()] }, s }
    }

    /// Group product; the action satisfies `apply(a.compose(b)) = apply(a) ∘ apply(b)`.
    pub fn compose(&self, other: &Self) -> Self {
        Self { s: self.s.add(&other.s), theta: self.theta.add(&other.theta) }
    }

    pub fn inverse(&self) -> Self {
        Self { s: self.s.scale(-T::one()), theta: self.theta.scale(-T::one()) }
    }

    /// Cartan factorisation `g = exp(i xi) k`: returns `(xi, theta)` where the
    /// non-compact part `xi` equals `s` and `k = exp(-i theta)`.
    pub fn cartan_decompose(&self) -> (LieAlgebraField<T>, SiteField<T>) {
        (self.s.clone(), self.theta.clone())
    }
}

/// A connection fluctuation and a section. The background connection lives
/// in [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct Pair<T> {
    /// `R^k`-valued periodic link field added to the background.
    pub a: LinkField<T>,
    /// `C^n`-valued section on the fundamental domain.
    pub u: ComplexSiteField<T>,
}

/// Tangent vector to the space of pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Tangent<T> {
    pub a: LinkField<T>,
    pub u: ComplexSiteField<T>,
}

impl<T: Real> Tangent<T> {
    pub fn zeros(grid: &TorusGrid<T>, k: usize, n: usize) -> Self {
        Self { a: LinkField::zeros(grid, k), u: ComplexSiteField::zeros(grid, n) }
    }

    pub fn inner(&self, grid: &TorusGrid<T>, other: &Self) -> T {
        self.a.inner(grid, &other.a) + self.u.inner(grid, &other.u)
    }

    pub fn norm(&self, grid: &TorusGrid<T>) -> T {
        self.inner(grid, self).sqrt()
    }

    pub fn scale(&self, k: T) -> Self {
        Self { a: self.a.scale(k), u: self.u.scale(k) }
    }

    pub fn axpy(&self, k: T, other: &Self) -> Self {
        Self { a: self.a.axpy(k, &other.a), u: self.u.axpy(k, &other.u) }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-T::one(), other)
    }

    pub fn max_abs(&self) -> T {
        self.a.max_abs().max(self.u.max_abs())
    }
}

impl<T: Real> Pair<T> {
    /// Moves the pair along a tangent vector: `self + k * t`.
    pub fn displaced(&self, k: T, t: &Tangent<T>) -> Self {
        Self { a: self.a.axpy(k, &t.a), u: self.u.axpy(k, &t.u) }
    }

    /// Difference as a tangent vector.
    pub fn diff(&self, other: &Self) -> Tangent<T> {
        Tangent { a: self.a.sub(&other.a), u: self.u.sub(&other.u) }
    }

    pub fn sup_u_sq(&self) -> T {
        let n = self.u.sites();
        let mut best = T::zero();
        for s in 0..n {
            let v = (0..self.u.comps).fold(T::zero(), |acc, j| acc + self.u.data[j * n + s].norm_sqr());
            best = best.max(v);
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.a.x.iter().chain(&self.a.y).all(|v| v.is_finite())
            && self.u.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Grid, action and degree sector together with precomputed transport
/// phases and FFT plans. Every field operation goes through a model.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub grid: TorusGrid<T>,
    pub spec: ActionSpec<T>,
    pub spectral: Spectral<T>,
    /// Background flux density `B_a = 2 pi d_a / volume` per group factor.
    pub flux: Vec<T>,
    /// `<W_j, B>` per component.
    comp_flux: Vec<T>,
    bg_curvature: PlaquetteField<T>,
}

impl<T: Real> Model<T> {
    pub fn new(grid: TorusGrid<T>, spec: ActionSpec<T>) -> Result<Self, FieldError> {
        let vol = grid.volume();
        let flux: Vec<T> = spec.degrees.iter().map(|&d| T::TAU() * T::c(d as f64) / vol).collect();
        let comp_flux = (0..spec.n)
            .map(|j| (0..spec.k).fold(T::zero(), |acc, a| acc + spec.weight_t(a, j) * flux[a]))
            .collect();
        let mut model = Self {
            spectral: Spectral::new(&grid),
            grid,
            spec,
            flux,
            comp_flux,
            bg_curvature: PlaquetteField::zeros(&grid, 0),
        };
        model.bg_curvature = model.twisted_curl(&model.background_links());
        model.check_cocycle()?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Background link field `A_x = 0`, `A_y(i, j) = B x_i`.
    pub fn background_links(&self) -> LinkField<T> {
        let g = &self.grid;
        let mut bg = LinkField::zeros(g, self.k());
        for a in 0..self.k() {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    bg.y[a * g.len() + g.idx(i, j)] = self.flux[a] * g.x(i);
                }
            }
        }
        bg
    }

    /// Curl of a background-type link field, adding the gauge jump
    /// `B lx` of `A_y` across the x-seam.
    fn twisted_curl(&self, bg: &LinkField<T>) -> PlaquetteField<T> {
        let g = &self.grid;
        let mut c = d1(g, bg);
        for a in 0..self.k() {
            for j in 0..g.ny {
                c.data[a * g.len() + g.idx(g.nx - 1, j)] =
                    c.data[a * g.len() + g.idx(g.nx - 1, j)] + self.flux[a] * g.lx / g.hx();
            }
        }
        c
    }

    pub fn background_curvature(&self) -> &PlaquetteField<T> {
        &self.bg_curvature
    }

    /// Verifies that every plaquette holonomy of the bare background,
    /// seam phases included, equals `exp(-i hx hy <W_j, B>)`.
    fn check_cocycle(&self) -> Result<(), FieldError> {
        let g = &self.grid;
        let zero = LinkField::zeros(g, self.k());
        let (ux, uy) = self.transports(&zero);
        let n = g.len();
        for c in 0..self.n() {
            let expected = Complex::from_polar(T::one(), -g.cell_area() * self.comp_flux[c]);
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let hol = ux[c * n + g.idx(i, j)]
                        * uy[c * n + g.idx(g.ip(i), j)]
                        * ux[c * n + g.idx(i, g.jp(j))].conj()
                        * uy[c * n + g.idx(i, j)].conj();
                    let defect = (hol - expected).norm();
                    if defect > T::c(1e-9) {
                        return Err(FieldError::Cocycle { comp: c, i, j, defect: defect.to_f64_lossy() });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn zero_pair(&self) -> Pair<T> {
        Pair { a: LinkField::zeros(&self.grid, self.k()), u: ComplexSiteField::zeros(&self.grid, self.n()) }
    }

    /// `<W_j, xi>` at flat site `s`.
    #[inline]
    pub fn wdot(&self, xi: &SiteField<T>, j: usize, s: usize) -> T {
        (0..self.k()).fold(T::zero(), |acc, a| acc + self.spec.weight_t(a, j) * xi.at(a, s))
    }

    /// Parallel transport phases for every component on x- and y-links,
    /// seam phases included. Entry `c * N + s` transports the value at the
    /// forward neighbour of site `s` back to `s`.
    pub fn transports(&self, a: &LinkField<T>) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
        let g = &self.grid;
        let n = g.len();
        let (hx, hy) = (g.hx(), g.hy());
        let mut ux = Vec::with_capacity(self.n() * n);
        let mut uy = Vec::with_capacity(self.n() * n);
        for c in 0..self.n() {
            let w: Vec<T> = (0..self.k()).map(|b| self.spec.weight_t(b, c)).collect();
            let wa = |field: &[T], s: usize| w.iter().enumerate().fold(T::zero(), |acc, (b, &wb)| acc + wb * field[b * n + s]);
            for j in 0..g.ny {
                let seam = self.comp_flux[c] * g.lx * g.y(j);
                for i in 0..g.nx {
                    let s = g.idx(i, j);
                    let mut phx = -hx * wa(&a.x, s);
                    if i + 1 == g.nx {
                        phx = phx + seam;
                    }
                    ux.push(Complex::from_polar(T::one(), phx));
                }
            }
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let s = g.idx(i, j);
                    let ph = -hy * (self.comp_flux[c] * g.x(i) + wa(&a.y, s));
                    uy.push(Complex::from_polar(T::one(), ph));
                }
            }
        }
        (ux, uy)
    }

    /// Plaquette curvature density of background plus fluctuation.
    pub fn curvature(&self, a: &LinkField<T>) -> PlaquetteField<T> {
        self.bg_curvature.add(&d1(&self.grid, a))
    }

    /// Total flux per group factor, `sum hx hy F`; equals `2 pi d` to round-off.
    pub fn flux_integral(&self, a: &LinkField<T>) -> Vec<T> {
        let f = self.curvature(a);
        (0..self.k()).map(|c| f.integral(&self.grid, c)).collect()
    }

    /// Forward covariant differences `(U u(s+e) - u(s)) / h` on every link.
    pub fn covariant_d(&self, p: &Pair<T>) -> ComplexLinkField<T> {
        let (ux, uy) = self.transports(&p.a);
        self.covariant_d_with(p, &ux, &uy)
    }

    pub(crate) fn covariant_d_with(&self, p: &Pair<T>, ux: &[Complex<T>], uy: &[Complex<T>]) -> ComplexLinkField<T> {
        let g = &self.grid;
        let n = g.len();
        let (hx, hy) = (g.hx(), g.hy());
        let mut out = ComplexLinkField::zeros(g, self.n());
        for c in 0..self.n() {
            let u = p.u.comp(c);
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let s = g.idx(i, j);
                    let k = c * n + s;
                    out.x[k] = (ux[k] * u[g.idx(g.ip(i), j)] - u[s]) / hx;
                    out.y[k] = (uy[k] * u[g.idx(i, g.jp(j))] - u[s]) / hy;
                }
            }
        }
        out
    }

    /// Centered covariant differences at the sites.
    pub fn covariant_centered(&self, p: &Pair<T>) -> (ComplexSiteField<T>, ComplexSiteField<T>) {
        let (ux, uy) = self.transports(&p.a);
        self.covariant_centered_with(p, &ux, &uy)
    }

    pub(crate) fn covariant_centered_with(
        &self,
        p: &Pair<T>,
        ux: &[Complex<T>],
        uy: &[Complex<T>],
    ) -> (ComplexSiteField<T>, ComplexSiteField<T>) {
        let g = &self.grid;
        let n = g.len();
        let two = T::c(2.0);
        let (hx, hy) = (g.hx(), g.hy());
        let mut dx = ComplexSiteField::zeros(g, self.n());
        let mut dy = ComplexSiteField::zeros(g, self.n());
        for c in 0..self.n() {
            let u = p.u.comp(c);
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let s = g.idx(i, j);
                    let (sxm, sym) = (g.idx(g.im(i), j), g.idx(i, g.jm(j)));
                    let fwd_x = ux[c * n + s] * u[g.idx(g.ip(i), j)];
                    let bwd_x = ux[c * n + sxm].conj() * u[sxm];
                    let fwd_y = uy[c * n + s] * u[g.idx(i, g.jp(j))];
                    let bwd_y = uy[c * n + sym].conj() * u[sym];
                    dx.data[c * n + s] = (fwd_x - bwd_x) / (two * hx);
                    dy.data[c * n + s] = (fwd_y - bwd_y) / (two * hy);
                }
            }
        }
        (dx, dy)
    }

    /// Discrete `(0,1)` part `1/2 (D_x u + i D_y u)` with centered differences.
    pub fn dbar_residual(&self, p: &Pair<T>) -> ComplexSiteField<T> {
        let (dx, dy) = self.covariant_centered(p);
        let half = T::c(0.5);
        let i = Complex::new(T::zero(), T::one());
        ComplexSiteField {
            comps: dx.comps,
            data: dx.data.iter().zip(&dy.data).map(|(&x, &y)| (x + i * y) * half).collect(),
        }
    }

    /// Moment map `mu_a = 1/2 sum_j W_aj |u_j|^2 - tau_a` at every site.
    pub fn moment(&self, u: &ComplexSiteField<T>) -> SiteField<T> {
        let g = &self.grid;
        let n = g.len();
        let half = T::c(0.5);
        let mut out = SiteField::zeros(g, self.k());
        for a in 0..self.k() {
            for s in 0..n {
                let mut v = T::zero();
                for j in 0..self.n() {
                    let w = self.spec.weight(a, j);
                    if w != 0 {
                        v = v + T::c(w as f64) * u.data[j * n + s].norm_sqr();
                    }
                }
                out.data[a * n + s] = half * v - self.spec.tau[a];
            }
        }
        out
    }

    /// Moment residual `Phi = *F + mu` at the sites.
    pub fn moment_residual(&self, p: &Pair<T>) -> SiteField<T> {
        plaquette_to_site(&self.grid, &self.curvature(&p.a)).add(&self.moment(&p.u))
    }

    /// Infinitesimal unitary action `(-d0 xi, -i <W, xi> u)`.
    pub fn infinitesimal_action(&self, p: &Pair<T>, xi: &SiteField<T>) -> Tangent<T> {
        let g = &self.grid;
        let n = g.len();
        let mut u = ComplexSiteField::zeros(g, self.n());
        for j in 0..self.n() {
            for s in 0..n {
                let w = self.wdot(xi, j, s);
                u.data[j * n + s] = p.u.data[j * n + s] * Complex::new(T::zero(), -w);
            }
        }
        Tangent { a: d0(g, xi).scale(-T::one()), u }
    }

    /// Adjoint of [`Self::infinitesimal_action`] for the weighted inner products.
    pub fn infinitesimal_action_adjoint(&self, p: &Pair<T>, t: &Tangent<T>) -> SiteField<T> {
        let g = &self.grid;
        let n = g.len();
        let mut out = codiff(g, &t.a).scale(-T::one());
        for a in 0..self.k() {
            for s in 0..n {
                let mut v = T::zero();
                for j in 0..self.n() {
                    let w = self.spec.weight(a, j);
                    if w != 0 {
                        v = v + T::c(w as f64) * (p.u.data[j * n + s].conj() * t.u.data[j * n + s]).im;
                    }
                }
                out.data[a * n + s] = out.data[a * n + s] - v;
            }
        }
        out
    }

    /// Infinitesimal action of the imaginary direction `i xi`:
    /// `(codiff2(site_to_plaquette(xi)), <W, xi> u)`. It equals the discrete
    /// Hodge star applied to [`Self::infinitesimal_action`].
    pub fn complex_infinitesimal_action(&self, p: &Pair<T>, xi: &SiteField<T>) -> Tangent<T> {
        let g = &self.grid;
        let n = g.len();
        let mut u = ComplexSiteField::zeros(g, self.n());
        for j in 0..self.n() {
            for s in 0..n {
                u.data[j * n + s] = p.u.data[j * n + s] * self.wdot(xi, j, s);
            }
        }
        Tangent { a: codiff2(g, &site_to_plaquette(g, xi)), u }
    }

    /// Lattice symplectic form: `<hodge b1, b2> + hx hy sum Im(conj(u1) u2)`.
    pub fn symplectic_form(&self, t1: &Tangent<T>, t2: &Tangent<T>) -> T {
        let g = &self.grid;
        let a = hodge(g, &t1.a).inner(g, &t2.a);
        let u = g.cell_area()
            * pairwise_sum_by(t1.u.data.len(), |k| (t1.u.data[k].conj() * t2.u.data[k]).im);
        a + u
    }

    /// Action of the complexified gauge group.
    pub fn apply_complex_gauge(&self, gauge: &ComplexGauge<T>, p: &Pair<T>) -> Pair<T> {
        let g = &self.grid;
        let n = g.len();
        let a = p
            .a
            .sub(&d0(g, &gauge.theta))
            .add(&codiff2(g, &site_to_plaquette(g, &gauge.s)));
        let mut u = p.u.clone();
        for j in 0..self.n() {
            for s in 0..n {
                let re = self.wdot(&gauge.s, j, s);
                let im = self.wdot(&gauge.theta, j, s);
                u.data[j * n + s] = u.data[j * n + s] * Complex::from_polar(re.exp(), -im);
            }
        }
        Pair { a, u }
    }

    /// Multiplies each component of a site-valued complex field by the
    /// unitary gauge phase `exp(-i <W_j, theta>)`; how covariant quantities
    /// transform.
    pub fn gauge_phase(&self, theta: &SiteField<T>, f: &ComplexSiteField<T>) -> ComplexSiteField<T> {
        let n = self.grid.len();
        let mut out = f.clone();
        for j in 0..f.comps {
            for s in 0..n {
                out.data[j * n + s] = out.data[j * n + s] * Complex::from_polar(T::one(), -self.wdot(theta, j, s));
            }
        }
        out
    }

    /// Holomorphic section for component `j` of the bundle of degree
    /// `d_j = sum_a W_aj d_a` with respect to the background connection:
    /// a theta function with `d_j` free coefficients `coeffs[m mod d_j]`.
    /// Degree zero gives the constant `coeffs[0]`, negative degree gives zero.
    pub fn theta_section(&self, j: usize, coeffs: &[Complex<T>]) -> Vec<Complex<T>> {
        let g = &self.grid;
        let d = self.spec.component_degree(j);
        let zero = Complex::new(T::zero(), T::zero());
        if d < 0 {
            return vec![zero; g.len()];
        }
        if d == 0 {
            return vec![coeffs.first().copied().unwrap_or(zero); g.len()];
        }
        let beta = self.comp_flux[j].to_f64_lossy();
        let (lx, ly) = (g.lx.to_f64_lossy(), g.ly.to_f64_lossy());
        let reach = (80.0 / beta).sqrt();
        let m_lo = (-(reach * d as f64 / lx).ceil()) as i64 - 1;
        let m_hi = d + ((reach * d as f64 / lx).ceil()) as i64 + 1;
        let mut out = vec![zero; g.len()];
        for jj in 0..g.ny {
            let y = g.y(jj).to_f64_lossy();
            for i in 0..g.nx {
                let x = g.x(i).to_f64_lossy();
                let mut acc = Complex::new(0.0, 0.0);
                for m in m_lo..=m_hi {
                    let c = coeffs[m.rem_euclid(d) as usize % coeffs.len().max(1)];
                    let c = Complex::new(c.re.to_f64_lossy(), c.im.to_f64_lossy());
                    let dx = x - m as f64 * lx / d as f64;
                    let phase = std::f64::consts::TAU * m as f64 * y / ly;
                    acc += c * Complex::from_polar((-0.5 * beta * dx * dx).exp(), phase);
                }
                out[g.idx(i, jj)] = Complex::new(T::c(acc.re), T::c(acc.im));
            }
        }
        out
    }

    /// Holomorphic pair with zero fluctuation and theta-function section,
    /// every coefficient equal to `amplitude`.
    pub fn holomorphic_pair(&self, amplitude: T) -> Pair<T> {
        let mut p = self.zero_pair();
        let n = self.grid.len();
        for j in 0..self.n() {
            let d = self.spec.component_degree(j).max(1) as usize;
            let coeffs = vec![Complex::new(amplitude, T::zero()); d];
            p.u.data[j * n..(j + 1) * n].copy_from_slice(&self.theta_section(j, &coeffs));
        }
        p
    }

    /// Random point of the complexified orbit of a holomorphic pair: theta
    /// sections with seeded coefficients of modulus near `amplitude`, moved
    /// by a smooth random imaginary gauge (lowest Fourier modes, size
    /// `gauge_amplitude`) and a random unitary gauge. The same seed gives
    /// the same continuum pair at every resolution.
    pub fn random_holomorphic_pair(&self, seed: u64, amplitude: T, gauge_amplitude: T) -> Pair<T> {
        let mut r = crate::rng::stream(seed, 11);
        let n = self.grid.len();
        let mut p = self.zero_pair();
        for j in 0..self.n() {
            let d = self.spec.component_degree(j).max(1) as usize;
            let coeffs: Vec<Complex<T>> = (0..d)
                .map(|_| {
                    let modulus = amplitude * crate::rng::uniform::<T>(&mut r, 0.75, 1.25);
                    Complex::from_polar(modulus, crate::rng::uniform::<T>(&mut r, 0.0, std::f64::consts::TAU))
                })
                .collect();
            p.u.data[j * n..(j + 1) * n].copy_from_slice(&self.theta_section(j, &coeffs));
        }
        let ga = gauge_amplitude.to_f64_lossy();
        let s = crate::rng::smooth_site_field(&self.grid, self.k(), 1, ga, &mut r);
        let theta = crate::rng::smooth_site_field(&self.grid, self.k(), 1, 1.0, &mut r);
        self.apply_complex_gauge(&ComplexGauge { s, theta }, &p)
    }
}
