//! Seeded random generation. Every random quantity in the crate comes from a
//! ChaCha stream keyed by `(seed, stream)`, so results never depend on call
//! order elsewhere in a run.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::lattice::{ComplexSiteField, LinkField, SiteField, TorusGrid};
use crate::Real;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal<T: Real>(rng: &mut ChaCha8Rng) -> T {
    T::c(rng.sample::<f64, _>(StandardNormal))
}

pub fn uniform<T: Real>(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> T {
    T::c(rng.gen_range(lo..hi))
}

/// Site field with independent standard normal entries.
pub fn site_field<T: Real>(grid: &TorusGrid<T>, comps: usize, rng: &mut ChaCha8Rng) -> SiteField<T> {
    let mut f = SiteField::zeros(grid, comps);
    f.data.iter_mut().for_each(|v| *v = normal(rng));
    f
}

pub fn link_field<T: Real>(grid: &TorusGrid<T>, comps: usize, rng: &mut ChaCha8Rng) -> LinkField<T> {
    let mut f = LinkField::zeros(grid, comps);
    f.x.iter_mut().chain(f.y.iter_mut()).for_each(|v| *v = normal(rng));
    f
}

pub fn complex_site_field<T: Real>(
    grid: &TorusGrid<T>,
    comps: usize,
    rng: &mut ChaCha8Rng,
) -> ComplexSiteField<T> {
    let mut f = ComplexSiteField::zeros(grid, comps);
    f.data
        .iter_mut()
        .for_each(|v| *v = Complex::new(normal(rng), normal(rng)));
    f
}

/// Smooth random field: a handful of low Fourier modes with normal
/// coefficients, sampled at the sites. `max_mode` bounds |p| and |q|.
/// The same seed yields the same continuum function at every resolution.
pub fn smooth_site_field<T: Real>(
    grid: &TorusGrid<T>,
    comps: usize,
    max_mode: i32,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> SiteField<T> {
    let mut f = SiteField::zeros(grid, comps);
    let two_pi = std::f64::consts::TAU;
    let (lx, ly) = (grid.lx.to_f64_lossy(), grid.ly.to_f64_lossy());
    for c in 0..comps {
        let mut modes = Vec::new();
        for p in -max_mode..=max_mode {
            for q in -max_mode..=max_mode {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let decay = 1.0 / (1.0 + (p * p + q * q) as f64);
                modes.push((p as f64, q as f64, a * decay, b * decay));
            }
        }
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = (grid.x(i).to_f64_lossy(), grid.y(j).to_f64_lossy());
                let v: f64 = modes
                    .iter()
                    .map(|&(p, q, a, b)| {
                        let ph = two_pi * (p * x / lx + q * y / ly);
                        a * ph.cos() + b * ph.sin()
                    })
                    .sum();
                f.data[c * grid.len() + grid.idx(i, j)] = T::c(amplitude * v);
            }
        }
    }
    f
}
