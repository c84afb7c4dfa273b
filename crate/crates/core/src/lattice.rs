//! Discrete exterior calculus on a periodic rectangular grid.
//!
//! Sites are indexed `(i, j)` with `i` along x and stored row-major with x
//! fastest. The x-link `(i, j)` joins site `(i, j)` to `(i+1, j)`, the y-link
//! joins `(i, j)` to `(i, j+1)`, and plaquette `(i, j)` has `(i, j)` as its
//! lower-left corner. Multi-component fields store each component as a
//! contiguous block of `nx * ny` values.
//!
//! All inner products carry the cell area `hx * hy`, so norms approximate
//! L² norms on the torus and `codiff`, `codiff2` are exact adjoints of `d0`,
//! `d1`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("grid needs at least 4 sites per direction, got {nx}x{ny}")]
    TooSmall { nx: usize, ny: usize },
    #[error("side lengths must be positive and finite, got lx={lx}, ly={ly}")]
    BadLength { lx: f64, ly: f64 },
    #[error("Poisson right-hand side has mean {mean:e} in component {comp}; only mean-zero data is invertible")]
    NonZeroMean { comp: usize, mean: f64 },
}

/// Periodic rectangular grid modelling the flat torus `[0, lx) x [0, ly)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusGrid<T> {
    pub nx: usize,
    pub ny: usize,
    pub lx: T,
    pub ly: T,
}

impl<T: Real> TorusGrid<T> {
    pub fn new(nx: usize, ny: usize, lx: T, ly: T) -> Result<Self, LatticeError> {
        if nx < 4 || ny < 4 {
            return Err(LatticeError::TooSmall { nx, ny });
        }
        let ok = |l: T| l.is_finite() && l > T::zero();
        if !ok(lx) || !ok(ly) {
            return Err(LatticeError::BadLength { lx: lx.to_f64_lossy(), ly: ly.to_f64_lossy() });
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// Square `n x n` grid on the unit torus.
    pub fn unit(n: usize) -> Result<Self, LatticeError> {
        Self::new(n, n, T::one(), T::one())
    }

    pub fn hx(&self) -> T {
        self.lx / T::from_usize_lossy(self.nx)
    }

    pub fn hy(&self) -> T {
        self.ly / T::from_usize_lossy(self.ny)
    }

    /// Area of one cell; the quadrature weight of every site, link and plaquette.
    pub fn cell_area(&self) -> T {
        self.hx() * self.hy()
    }

    pub fn volume(&self) -> T {
        self.lx * self.ly
    }

    /// Number of sites (equally: plaquettes, links per orientation).
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ip(&self, i: usize) -> usize {
        if i + 1 == self.nx {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn im(&self, i: usize) -> usize {
        if i == 0 {
            self.nx - 1
        } else {
            i - 1
        }
    }

    #[inline]
    pub fn jp(&self, j: usize) -> usize {
        if j + 1 == self.ny {
            0
        } else {
            j + 1
        }
    }

    #[inline]
    pub fn jm(&self, j: usize) -> usize {
        if j == 0 {
            self.ny - 1
        } else {
            j - 1
        }
    }

    pub fn x(&self, i: usize) -> T {
        T::from_usize_lossy(i) * self.hx()
    }

    pub fn y(&self, j: usize) -> T {
        T::from_usize_lossy(j) * self.hy()
    }
}

/// Pairwise (tree) summation. The order is fixed by the slice length alone,
/// which keeps reductions reproducible.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    if xs.len() <= 16 {
        xs.iter().fold(T::zero(), |acc, &v| acc + v)
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise sum of `f(k)` for `k in 0..n`.
pub fn pairwise_sum_by<T: Real>(n: usize, f: impl Fn(usize) -> T) -> T {
    fn rec<T: Real>(lo: usize, hi: usize, f: &impl Fn(usize) -> T) -> T {
        if hi - lo <= 16 {
            (lo..hi).fold(T::zero(), |acc, k| acc + f(k))
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, &f)
}

macro_rules! real_cell_field {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            pub comps: usize,
            pub data: Vec<T>,
        }

        impl<T: Real> $name<T> {
            pub fn zeros(grid: &TorusGrid<T>, comps: usize) -> Self {
                Self { comps, data: vec![T::zero(); comps * grid.len()] }
            }

            /// Field equal to `values[c]` everywhere in component `c`.
            pub fn constant(grid: &TorusGrid<T>, values: &[T]) -> Self {
                let n = grid.len();
                let mut data = Vec::with_capacity(values.len() * n);
                for &v in values {
                    data.extend(std::iter::repeat(v).take(n));
                }
                Self { comps: values.len(), data }
            }

            pub fn from_fn(grid: &TorusGrid<T>, comps: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
                let mut out = Self::zeros(grid, comps);
                for c in 0..comps {
                    for j in 0..grid.ny {
                        for i in 0..grid.nx {
                            out.data[c * grid.len() + grid.idx(i, j)] = f(c, i, j);
                        }
                    }
                }
                out
            }

            pub fn sites(&self) -> usize {
                self.data.len() / self.comps.max(1)
            }

            pub fn comp(&self, c: usize) -> &[T] {
                let n = self.sites();
                &self.data[c * n..(c + 1) * n]
            }

            pub fn comp_mut(&mut self, c: usize) -> &mut [T] {
                let n = self.sites();
                &mut self.data[c * n..(c + 1) * n]
            }

            /// Value of component `c` at flat site index `s`.
            #[inline]
            pub fn at(&self, c: usize, s: usize) -> T {
                self.data[c * self.sites() + s]
            }

            pub fn scale(&self, k: T) -> Self {
                Self { comps: self.comps, data: self.data.iter().map(|&v| v * k).collect() }
            }

            /// `self + k * other`.
            pub fn axpy(&self, k: T, other: &Self) -> Self {
                Self {
                    comps: self.comps,
                    data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + k * b).collect(),
                }
            }

            pub fn add(&self, other: &Self) -> Self {
                self.axpy(T::one(), other)
            }

            pub fn sub(&self, other: &Self) -> Self {
                self.axpy(-T::one(), other)
            }

            pub fn max_abs(&self) -> T {
                self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
            }

            pub fn inner(&self, grid: &TorusGrid<T>, other: &Self) -> T {
                grid.cell_area() * pairwise_sum_by(self.data.len(), |k| self.data[k] * other.data[k])
            }

            pub fn norm(&self, grid: &TorusGrid<T>) -> T {
                self.inner(grid, self).sqrt()
            }

            /// Integral of component `c`.
            pub fn integral(&self, grid: &TorusGrid<T>, c: usize) -> T {
                grid.cell_area() * pairwise_sum(self.comp(c))
            }

            /// Plain sum of component `c` without the area weight.
            pub fn sum(&self, c: usize) -> T {
                pairwise_sum(self.comp(c))
            }

            pub fn mean(&self, c: usize) -> T {
                self.sum(c) / T::from_usize_lossy(self.sites())
            }
        }
    };
}

real_cell_field!(
    /// Real multi-component field on sites (0-forms).
    SiteField
);
real_cell_field!(
    /// Real multi-component field on plaquettes (2-forms, stored as densities).
    PlaquetteField
);

/// Real multi-component field on links (1-forms), one array per orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkField<T> {
    pub comps: usize,
    pub x: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Real> LinkField<T> {
    pub fn zeros(grid: &TorusGrid<T>, comps: usize) -> Self {
        let n = comps * grid.len();
        Self { comps, x: vec![T::zero(); n], y: vec![T::zero(); n] }
    }

    /// Link field equal to `(cx[c], cy[c])` on every link of component `c`.
    pub fn constant(grid: &TorusGrid<T>, cx: &[T], cy: &[T]) -> Self {
        let n = grid.len();
        let expand = |vals: &[T]| vals.iter().flat_map(|&v| std::iter::repeat(v).take(n)).collect();
        Self { comps: cx.len(), x: expand(cx), y: expand(cy) }
    }

    pub fn sites(&self) -> usize {
        self.x.len() / self.comps.max(1)
    }

    pub fn scale(&self, k: T) -> Self {
        Self {
            comps: self.comps,
            x: self.x.iter().map(|&v| v * k).collect(),
            y: self.y.iter().map(|&v| v * k).collect(),
        }
    }

    pub fn axpy(&self, k: T, other: &Self) -> Self {
        let f = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&p, &q)| p + k * q).collect();
        Self { comps: self.comps, x: f(&self.x, &other.x), y: f(&self.y, &other.y) }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(T::one(), other)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-T::one(), other)
    }

    pub fn max_abs(&self) -> T {
        self.x.iter().chain(&self.y).fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn inner(&self, grid: &TorusGrid<T>, other: &Self) -> T {
        let n = self.x.len();
        grid.cell_area()
            * pairwise_sum_by(2 * n, |k| {
                if k < n {
                    self.x[k] * other.x[k]
                } else {
                    self.y[k - n] * other.y[k - n]
                }
            })
    }

    pub fn norm(&self, grid: &TorusGrid<T>) -> T {
        self.inner(grid, self).sqrt()
    }
}

/// Complex multi-component field on sites; the payload of sections.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSiteField<T> {
    pub comps: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> ComplexSiteField<T> {
    pub fn zeros(grid: &TorusGrid<T>, comps: usize) -> Self {
        Self { comps, data: vec![Complex::new(T::zero(), T::zero()); comps * grid.len()] }
    }

    pub fn constant(grid: &TorusGrid<T>, values: &[Complex<T>]) -> Self {
        let n = grid.len();
        let data = values.iter().flat_map(|&v| std::iter::repeat(v).take(n)).collect();
        Self { comps: values.len(), data }
    }

    pub fn sites(&self) -> usize {
        self.data.len() / self.comps.max(1)
    }

    pub fn comp(&self, c: usize) -> &[Complex<T>] {
        let n = self.sites();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn scale(&self, k: T) -> Self {
        Self { comps: self.comps, data: self.data.iter().map(|&v| v * k).collect() }
    }

    pub fn axpy(&self, k: T, other: &Self) -> Self {
        Self {
            comps: self.comps,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b * k).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-T::one(), other)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }

    /// Real inner product `hx hy * sum Re(conj(a) b)`.
    pub fn inner(&self, grid: &TorusGrid<T>, other: &Self) -> T {
        grid.cell_area()
            * pairwise_sum_by(self.data.len(), |k| (self.data[k].conj() * other.data[k]).re)
    }

    pub fn norm(&self, grid: &TorusGrid<T>) -> T {
        self.inner(grid, self).sqrt()
    }
}

/// Complex multi-component field on links; covariant derivatives live here.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexLinkField<T> {
    pub comps: usize,
    pub x: Vec<Complex<T>>,
    pub y: Vec<Complex<T>>,
}

impl<T: Real> ComplexLinkField<T> {
    pub fn zeros(grid: &TorusGrid<T>, comps: usize) -> Self {
        let z = Complex::new(T::zero(), T::zero());
        Self { comps, x: vec![z; comps * grid.len()], y: vec![z; comps * grid.len()] }
    }

    pub fn max_abs(&self) -> T {
        self.x.iter().chain(&self.y).fold(T::zero(), |m, v| m.max(v.norm()))
    }

    pub fn norm_sqr(&self, grid: &TorusGrid<T>) -> T {
        let n = self.x.len();
        grid.cell_area()
            * pairwise_sum_by(2 * n, |k| if k < n { self.x[k].norm_sqr() } else { self.y[k - n].norm_sqr() })
    }
}

/// Forward-difference exterior derivative on 0-forms.
pub fn d0<T: Real>(grid: &TorusGrid<T>, f: &SiteField<T>) -> LinkField<T> {
    let (hx, hy, n) = (grid.hx(), grid.hy(), grid.len());
    let mut out = LinkField::zeros(grid, f.comps);
    for c in 0..f.comps {
        let fc = f.comp(c);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let s = grid.idx(i, j);
                out.x[c * n + s] = (fc[grid.idx(grid.ip(i), j)] - fc[s]) / hx;
                out.y[c * n + s] = (fc[grid.idx(i, grid.jp(j))] - fc[s]) / hy;
            }
        }
    }
    out
}

/// Discrete curl on 1-forms, returning the plaquette density.
pub fn d1<T: Real>(grid: &TorusGrid<T>, a: &LinkField<T>) -> PlaquetteField<T> {
    let (hx, hy, n) = (grid.hx(), grid.hy(), grid.len());
    let mut out = PlaquetteField::zeros(grid, a.comps);
    for c in 0..a.comps {
        let (ax, ay) = (&a.x[c * n..(c + 1) * n], &a.y[c * n..(c + 1) * n]);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let s = grid.idx(i, j);
                out.data[c * n + s] = (ay[grid.idx(grid.ip(i), j)] - ay[s]) / hx
                    - (ax[grid.idx(i, grid.jp(j))] - ax[s]) / hy;
            }
        }
    }
    out
}

/// Adjoint of [`d0`]: the negative discrete divergence.
pub fn codiff<T: Real>(grid: &TorusGrid<T>, a: &LinkField<T>) -> SiteField<T> {
    let (hx, hy, n) = (grid.hx(), grid.hy(), grid.len());
    let mut out = SiteField::zeros(grid, a.comps);
    for c in 0..a.comps {
        let (ax, ay) = (&a.x[c * n..(c + 1) * n], &a.y[c * n..(c + 1) * n]);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let s = grid.idx(i, j);
                out.data[c * n + s] = -((ax[s] - ax[grid.idx(grid.im(i), j)]) / hx
                    + (ay[s] - ay[grid.idx(i, grid.jm(j))]) / hy);
            }
        }
    }
    out
}

/// Adjoint of [`d1`]; in the continuum this is `-*d` on 2-form densities.
pub fn codiff2<T: Real>(grid: &TorusGrid<T>, p: &PlaquetteField<T>) -> LinkField<T> {
    let (hx, hy, n) = (grid.hx(), grid.hy(), grid.len());
    let mut out = LinkField::zeros(grid, p.comps);
    for c in 0..p.comps {
        let pc = p.comp(c);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let s = grid.idx(i, j);
                out.x[c * n + s] = (pc[s] - pc[grid.idx(i, grid.jm(j))]) / hy;
                out.y[c * n + s] = -(pc[s] - pc[grid.idx(grid.im(i), j)]) / hx;
            }
        }
    }
    out
}

/// Positive semidefinite site Laplacian `codiff(d0 f)`.
pub fn laplacian<T: Real>(grid: &TorusGrid<T>, f: &SiteField<T>) -> SiteField<T> {
    codiff(grid, &d0(grid, f))
}

/// Average of the four plaquettes touching each site.
pub fn plaquette_to_site<T: Real>(grid: &TorusGrid<T>, p: &PlaquetteField<T>) -> SiteField<T> {
    let n = grid.len();
    let q = T::c(0.25);
    let mut out = SiteField::zeros(grid, p.comps);
    for c in 0..p.comps {
        let pc = p.comp(c);
        for j in 0..grid.ny {
            let jm = grid.jm(j);
            for i in 0..grid.nx {
                let im = grid.im(i);
                out.data[c * n + grid.idx(i, j)] = q
                    * (pc[grid.idx(i, j)] + pc[grid.idx(im, j)] + pc[grid.idx(i, jm)] + pc[grid.idx(im, jm)]);
            }
        }
    }
    out
}

/// Average of the four corner sites of each plaquette; adjoint of
/// [`plaquette_to_site`].
pub fn site_to_plaquette<T: Real>(grid: &TorusGrid<T>, f: &SiteField<T>) -> PlaquetteField<T> {
    let n = grid.len();
    let q = T::c(0.25);
    let mut out = PlaquetteField::zeros(grid, f.comps);
    for c in 0..f.comps {
        let fc = f.comp(c);
        for j in 0..grid.ny {
            let jp = grid.jp(j);
            for i in 0..grid.nx {
                let ip = grid.ip(i);
                out.data[c * n + grid.idx(i, j)] = q
                    * (fc[grid.idx(i, j)] + fc[grid.idx(ip, j)] + fc[grid.idx(i, jp)] + fc[grid.idx(ip, jp)]);
            }
        }
    }
    out
}

/// Discrete Hodge star on 1-forms. Each x-link receives minus the average
/// of the four y-links around its midpoint and each y-link the average of
/// the four surrounding x-links. It is antisymmetric for the link inner
/// product and satisfies `hodge(-d0 f) = codiff2(site_to_plaquette(f))`.
pub fn hodge<T: Real>(grid: &TorusGrid<T>, b: &LinkField<T>) -> LinkField<T> {
    let n = grid.len();
    let q = T::c(0.25);
    let mut out = LinkField::zeros(grid, b.comps);
    for c in 0..b.comps {
        let (bx, by) = (&b.x[c * n..(c + 1) * n], &b.y[c * n..(c + 1) * n]);
        for j in 0..grid.ny {
            let (jm, jp) = (grid.jm(j), grid.jp(j));
            for i in 0..grid.nx {
                let (im, ip) = (grid.im(i), grid.ip(i));
                let s = grid.idx(i, j);
                out.x[c * n + s] = -q
                    * (by[grid.idx(i, j)] + by[grid.idx(i, jm)] + by[grid.idx(ip, j)] + by[grid.idx(ip, jm)]);
                out.y[c * n + s] = q
                    * (bx[grid.idx(i, j)] + bx[grid.idx(im, j)] + bx[grid.idx(i, jp)] + bx[grid.idx(im, jp)]);
            }
        }
    }
    out
}

/// Planned 2-D FFTs for applying translation-invariant operators.
#[derive(Clone)]
pub struct Spectral<T: Real> {
    nx: usize,
    ny: usize,
    fx: Arc<dyn Fft<T>>,
    ix: Arc<dyn Fft<T>>,
    fy: Arc<dyn Fft<T>>,
    iy: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Spectral<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Spectral({}x{})", self.nx, self.ny)
    }
}

impl<T: Real> Spectral<T> {
    pub fn new(grid: &TorusGrid<T>) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx: grid.nx,
            ny: grid.ny,
            fx: planner.plan_fft_forward(grid.nx),
            ix: planner.plan_fft_inverse(grid.nx),
            fy: planner.plan_fft_forward(grid.ny),
            iy: planner.plan_fft_inverse(grid.ny),
        }
    }

    fn transform(&self, buf: &mut [Complex<T>], fx: &Arc<dyn Fft<T>>, fy: &Arc<dyn Fft<T>>) {
        for row in buf.chunks_exact_mut(self.nx) {
            fx.process(row);
        }
        let mut col = vec![Complex::new(T::zero(), T::zero()); self.ny];
        for i in 0..self.nx {
            for j in 0..self.ny {
                col[j] = buf[j * self.nx + i];
            }
            fy.process(&mut col);
            for j in 0..self.ny {
                buf[j * self.nx + i] = col[j];
            }
        }
    }

    /// Applies the real Fourier multiplier `m(kx, ky)` to a real scalar
    /// array, where `kx = 2 pi p / nx` and `ky = 2 pi q / ny` are the lattice
    /// wave angles of mode `(p, q)`.
    pub fn apply(&self, f: &[T], m: impl Fn(T, T) -> T) -> Vec<T> {
        let mut buf: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&mut buf, &self.fx, &self.fy);
        let (tx, ty) = (T::TAU() / T::from_usize_lossy(self.nx), T::TAU() / T::from_usize_lossy(self.ny));
        for q in 0..self.ny {
            for p in 0..self.nx {
                let k = m(tx * T::from_usize_lossy(p), ty * T::from_usize_lossy(q));
                buf[q * self.nx + p] = buf[q * self.nx + p] * k;
            }
        }
        self.transform(&mut buf, &self.ix, &self.iy);
        let norm = T::from_usize_lossy(self.nx * self.ny);
        buf.iter().map(|v| v.re / norm).collect()
    }
}

/// Fourier symbol of [`laplacian`] at wave angles `(kx, ky)`.
pub fn laplacian_symbol<T: Real>(grid: &TorusGrid<T>, kx: T, ky: T) -> T {
    let two = T::c(2.0);
    let (hx, hy) = (grid.hx(), grid.hy());
    two / (hx * hx) * (T::one() - kx.cos()) + two / (hy * hy) * (T::one() - ky.cos())
}

/// Fourier symbol of `plaquette_to_site ∘ site_to_plaquette`.
pub fn average_symbol<T: Real>(kx: T, ky: T) -> T {
    let half = T::c(0.5);
    let (cx, cy) = ((half * kx).cos(), (half * ky).cos());
    cx * cx * cy * cy
}

/// Inverts the site Laplacian on mean-zero data; the result has zero mean.
pub fn solve_poisson<T: Real>(
    grid: &TorusGrid<T>,
    spectral: &Spectral<T>,
    rho: &SiteField<T>,
) -> Result<SiteField<T>, LatticeError> {
    let mut out = SiteField::zeros(grid, rho.comps);
    for c in 0..rho.comps {
        let rc = rho.comp(c);
        let mean = rho.mean(c);
        let rms = (pairwise_sum_by(rc.len(), |k| rc[k] * rc[k]) / T::from_usize_lossy(rc.len())).sqrt();
        if mean.abs() > T::c(1e-10) * rms {
            return Err(LatticeError::NonZeroMean { comp: c, mean: mean.to_f64_lossy() });
        }
        let sol = spectral.apply(rc, |kx, ky| {
            let l = laplacian_symbol(grid, kx, ky);
            if l > T::zero() {
                T::one() / l
            } else {
                T::zero()
            }
        });
        out.comp_mut(c).copy_from_slice(&sol);
    }
    Ok(out)
}
