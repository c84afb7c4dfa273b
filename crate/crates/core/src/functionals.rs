//! Energies on the lattice and their exact gradients.
//!
//! The Yang-Mills-Higgs energy uses forward covariant differences on the
//! links and the plaquette curvature; the moment functional uses the site
//! residual `Phi`. The holomorphic energy and the topological pairing use
//! centered differences at the sites. With these choices
//!
//! `ymh = f_moment + dbar_energy + pairing + defect`,
//!
//! where `defect = 1/2 (|D u|^2_links - |D u|^2_centered) + 1/2 (|F|^2 - |S F|^2)`
//! is nonnegative and of second order in the mesh width for smooth pairs.

use num_complex::Complex;

use crate::fields::{Model, Pair, Tangent};
use crate::lattice::{codiff2, pairwise_sum_by, plaquette_to_site, site_to_plaquette, ComplexSiteField, LinkField};
use crate::Real;

/// All terms of the energy identity at one pair.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EnergyBreakdown<T> {
    pub ymh: T,
    pub f_moment: T,
    pub dbar_energy: T,
    pub pairing: T,
    /// `ymh - f_moment - dbar_energy - pairing`.
    pub identity_defect: T,
}

/// `1/2 (|F|^2 + |D u|^2 + |mu|^2)` with lattice quadrature.
pub fn ymh<T: Real>(m: &Model<T>, p: &Pair<T>) -> T {
    let g = &m.grid;
    let f = m.curvature(&p.a);
    let du = m.covariant_d(p);
    let mu = m.moment(&p.u);
    T::c(0.5) * (f.inner(g, &f) + du.norm_sqr(g) + mu.inner(g, &mu))
}

/// `1/2 |Phi|^2`.
pub fn f_moment<T: Real>(m: &Model<T>, p: &Pair<T>) -> T {
    let phi = m.moment_residual(p);
    T::c(0.5) * phi.inner(&m.grid, &phi)
}

/// `1/2 sum |D_x u + i D_y u|^2` with centered differences.
pub fn dbar_energy<T: Real>(m: &Model<T>, p: &Pair<T>) -> T {
    let (dx, dy) = m.covariant_centered(p);
    dbar_from(m, &dx, &dy)
}

fn dbar_from<T: Real>(m: &Model<T>, dx: &ComplexSiteField<T>, dy: &ComplexSiteField<T>) -> T {
    let i = Complex::new(T::zero(), T::one());
    T::c(0.5) * m.grid.cell_area() * pairwise_sum_by(dx.data.len(), |k| (dx.data[k] + i * dy.data[k]).norm_sqr())
}

fn pairing_from<T: Real>(m: &Model<T>, p: &Pair<T>, dx: &ComplexSiteField<T>, dy: &ComplexSiteField<T>) -> T {
    let g = &m.grid;
    let pull = g.cell_area() * pairwise_sum_by(dx.data.len(), |k| (dx.data[k].conj() * dy.data[k]).im);
    let sf = plaquette_to_site(g, &m.curvature(&p.a));
    let mu = m.moment(&p.u);
    pull - sf.inner(g, &mu)
}

/// Lattice version of `int u*omega - d<mu, A>`; in the continuum it equals
/// `2 pi <tau, d>` for every pair, here only up to discretization error.
pub fn pairing<T: Real>(m: &Model<T>, p: &Pair<T>) -> T {
    let (dx, dy) = m.covariant_centered(p);
    pairing_from(m, p, &dx, &dy)
}

pub fn energy_identity_defect<T: Real>(m: &Model<T>, p: &Pair<T>) -> EnergyBreakdown<T> {
    let (ux, uy) = m.transports(&p.a);
    let g = &m.grid;
    let half = T::c(0.5);
    let f = m.curvature(&p.a);
    let du = m.covariant_d_with(p, &ux, &uy);
    let mu = m.moment(&p.u);
    let ymh = half * (f.inner(g, &f) + du.norm_sqr(g) + mu.inner(g, &mu));
    let phi = plaquette_to_site(g, &f).add(&mu);
    let f_moment = half * phi.inner(g, &phi);
    let (dx, dy) = m.covariant_centered_with(p, &ux, &uy);
    let dbar_energy = dbar_from(m, &dx, &dy);
    let pairing = pairing_from(m, p, &dx, &dy);
    EnergyBreakdown {
        ymh,
        f_moment,
        dbar_energy,
        pairing,
        identity_defect: ymh - f_moment - dbar_energy - pairing,
    }
}

/// Exact gradient of [`f_moment`]: `(codiff2(S^T Phi), <W, Phi> u)`, which is
/// the infinitesimal action of `i Phi`.
pub fn grad_f<T: Real>(m: &Model<T>, p: &Pair<T>) -> Tangent<T> {
    let phi = m.moment_residual(p);
    m.complex_infinitesimal_action(p, &phi)
}

/// Exact gradient of [`ymh`].
pub fn grad_ymh<T: Real>(m: &Model<T>, p: &Pair<T>) -> Tangent<T> {
    let g = &m.grid;
    let n = g.len();
    let (hx, hy) = (g.hx(), g.hy());
    let (ux, uy) = m.transports(&p.a);
    let du = m.covariant_d_with(p, &ux, &uy);
    let f = m.curvature(&p.a);
    let mu = m.moment(&p.u);

    // Connection part: curl-adjoint of the curvature plus the supercurrent.
    let mut ga: LinkField<T> = codiff2(g, &f);
    for b in 0..m.k() {
        for j in 0..m.n() {
            let w = m.spec.weight(b, j);
            if w == 0 {
                continue;
            }
            let w = T::c(w as f64);
            let u = p.u.comp(j);
            for jj in 0..g.ny {
                for i in 0..g.nx {
                    let s = g.idx(i, jj);
                    let kx = j * n + s;
                    let cx = (du.x[kx].conj() * ux[kx] * u[g.idx(g.ip(i), jj)]).im;
                    let cy = (du.y[kx].conj() * uy[kx] * u[g.idx(i, g.jp(jj))]).im;
                    ga.x[b * n + s] = ga.x[b * n + s] + w * cx;
                    ga.y[b * n + s] = ga.y[b * n + s] + w * cy;
                }
            }
        }
    }

    // Section part: covariant Laplacian plus the moment map term.
    let mut gu = ComplexSiteField::zeros(g, m.n());
    for j in 0..m.n() {
        for jj in 0..g.ny {
            for i in 0..g.nx {
                let s = g.idx(i, jj);
                let (sxm, sym) = (g.idx(g.im(i), jj), g.idx(i, g.jm(jj)));
                let k = j * n + s;
                let lap = (ux[j * n + sxm].conj() * du.x[j * n + sxm] - du.x[k]) / hx
                    + (uy[j * n + sym].conj() * du.y[j * n + sym] - du.y[k]) / hy;
                gu.data[k] = lap + p.u.data[k] * m.wdot(&mu, j, s);
            }
        }
    }
    Tangent { a: ga, u: gu }
}

/// Gradient of [`f_moment`] composed directly from the residual; exposed
/// for the semi-implicit stepper which already holds `Phi`.
pub(crate) fn grad_from_phi<T: Real>(m: &Model<T>, p: &Pair<T>, phi: &crate::SiteField<T>) -> Tangent<T> {
    let g = &m.grid;
    let n = g.len();
    let mut u = p.u.clone();
    for j in 0..m.n() {
        for s in 0..n {
            u.data[j * n + s] = u.data[j * n + s] * m.wdot(phi, j, s);
        }
    }
    Tangent { a: codiff2(g, &site_to_plaquette(g, phi)), u }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ActionSpec;
    use crate::lattice::TorusGrid;
    use std::f64::consts::PI;

    fn model(tau: f64, d: i64) -> Model<f64> {
        Model::new(TorusGrid::unit(16).unwrap(), ActionSpec::circle(tau, d)).unwrap()
    }

    #[test]
    fn hand_values_at_trivial_pairs() {
        let m = model(1.5, 0);
        let p = m.zero_pair();
        assert!((ymh(&m, &p) - 0.5 * 1.5 * 1.5).abs() < 1e-12);
        assert!((f_moment(&m, &p) - 0.5 * 1.5 * 1.5).abs() < 1e-12);
        let m = model(PI, 1);
        let p = m.zero_pair();
        assert!((ymh(&m, &p) - 0.5 * (4.0 * PI * PI + PI * PI)).abs() < 1e-9);
        assert!((f_moment(&m, &p) - 0.5 * PI * PI).abs() < 1e-9);
    }

    #[test]
    fn gradients_vanish_at_zero_pair() {
        let m = model(0.7, 0);
        let p = m.zero_pair();
        assert_eq!(grad_f(&m, &p).max_abs(), 0.0);
        assert_eq!(grad_ymh(&m, &p).max_abs(), 0.0);
    }

    #[test]
    fn constant_section_has_no_defect() {
        let m = model(2.0, 0);
        let mut p = m.zero_pair();
        p.u.data.iter_mut().for_each(|v| *v = Complex::new(0.8, -0.3));
        let e = energy_identity_defect(&m, &p);
        assert_eq!(e.identity_defect, 0.0);
        assert_eq!(e.dbar_energy, 0.0);
        assert_eq!(e.pairing, 0.0);
    }
}
