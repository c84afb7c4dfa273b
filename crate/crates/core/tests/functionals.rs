use std::f64::consts::{PI, TAU};

use num_complex::Complex;
use proptest::prelude::*;
use vortexflow::functionals::{energy_identity_defect, f_moment, grad_f, grad_ymh, pairing, ymh};
use vortexflow::lattice::{ComplexSiteField, LinkField};
use vortexflow::{rng, ActionSpec, ComplexGauge, Grid64, Model64, Pair64, Tangent};

fn circle(n: usize, l: f64, tau: f64, d: i64) -> Model64 {
    Model64::new(Grid64::new(n, n, l, l).unwrap(), ActionSpec::circle(tau, d)).unwrap()
}

fn mixed(n: usize) -> Model64 {
    let spec = ActionSpec::new(2, 2, vec![1, 1, 0, 2], vec![2.0, 1.0], vec![1, 0]).unwrap();
    Model64::new(Grid64::new(n, n, 1.0, 1.2).unwrap(), spec).unwrap()
}

/// Smooth random fields built from the lowest Fourier modes.
fn smooth_pair(m: &Model64, seed: u64) -> Pair64 {
    let mut r = rng::stream(seed, 21);
    let g = &m.grid;
    let ax = rng::smooth_site_field(g, m.k(), 2, 0.5, &mut r);
    let ay = rng::smooth_site_field(g, m.k(), 2, 0.5, &mut r);
    let re = rng::smooth_site_field(g, m.n(), 2, 0.7, &mut r);
    let im = rng::smooth_site_field(g, m.n(), 2, 0.7, &mut r);
    Pair64 {
        a: LinkField { comps: m.k(), x: ax.data, y: ay.data },
        u: ComplexSiteField { comps: m.n(), data: re.data.iter().zip(&im.data).map(|(&a, &b)| Complex::new(a, b)).collect() },
    }
}

fn smooth_tangent(m: &Model64, seed: u64) -> Tangent<f64> {
    let p = smooth_pair(m, seed ^ 0x5eed);
    Tangent { a: p.a, u: p.u }
}

/// Fourth-order central difference of `f` along `t`.
fn directional(f: impl Fn(&Pair64) -> f64, p: &Pair64, t: &Tangent<f64>, h: f64) -> f64 {
    let v = |e: f64| f(&p.displaced(e, t));
    (8.0 * (v(h) - v(-h)) - (v(2.0 * h) - v(-2.0 * h))) / (12.0 * h)
}

#[test]
fn ymh_examples() {
    let tau = 1.7;
    let m = circle(8, 1.5, tau, 0);
    let v = ymh(&m, &m.zero_pair());
    assert!((v - 0.5 * tau * tau * 2.25).abs() < 1e-12);

    let m = circle(16, 1.0, tau, 1);
    assert!((ymh(&m, &m.zero_pair()) - 0.5 * (TAU * TAU + tau * tau)).abs() < 1e-9);

    // Pointwise integrand held fixed: constant section, flat connection.
    let spec = ActionSpec::new(2, 2, vec![1, 1, 0, 2], vec![2.0, 1.0], vec![0, 0]).unwrap();
    let m1 = Model64::new(Grid64::new(8, 8, 1.0, 1.2).unwrap(), spec.clone()).unwrap();
    let m2 = Model64::new(Grid64::new(8, 8, 2.0, 2.4).unwrap(), spec).unwrap();
    let u = [Complex::new(0.3, 1.0), Complex::new(-1.2, 0.5)];
    let p1 = Pair64 { a: LinkField::zeros(&m1.grid, 2), u: ComplexSiteField::constant(&m1.grid, &u) };
    let p2 = Pair64 { a: LinkField::zeros(&m2.grid, 2), u: ComplexSiteField::constant(&m2.grid, &u) };
    let (v1, v2) = (ymh(&m1, &p1), ymh(&m2, &p2));
    assert!(v1 > 0.0 && (v2 - 4.0 * v1).abs() < 1e-12 * v2);
}

#[test]
fn f_moment_examples() {
    let tau = 0.9;
    let m = circle(8, 1.3, tau, 0);
    assert!((f_moment(&m, &m.zero_pair()) - 0.5 * tau * tau * 1.69).abs() < 1e-12);
    let m = circle(16, 1.0, PI, 1);
    assert!((f_moment(&m, &m.zero_pair()) - 0.5 * PI * PI).abs() < 1e-9);
}

#[test]
fn pairing_and_identity_vanish_for_constant_sections() {
    let m = circle(8, 1.0, 1.3, 0);
    let mut p = m.zero_pair();
    p.u = ComplexSiteField::constant(&m.grid, &[Complex::new(0.4, 1.1)]);
    let b = energy_identity_defect(&m, &p);
    assert_eq!(b.dbar_energy, 0.0);
    // Without derivatives, ymh and f_moment both reduce to 1/2 |mu|^2 and the
    // pairing to -<0, mu>.
    assert!(pairing(&m, &p).abs() < 1e-15);
    assert!(b.identity_defect.abs() < 1e-14);
}

#[test]
fn energy_identity_defect_is_second_order_on_holomorphic_pairs() {
    let defects: Vec<f64> = [16usize, 32]
        .iter()
        .map(|&n| {
            let m = circle(n, 1.0, 4.0 * PI, 1);
            energy_identity_defect(&m, &m.random_holomorphic_pair(5, 1.0, 0.5)).identity_defect.abs()
        })
        .collect();
    let ratio = defects[0] / defects[1];
    assert!((3.5..=4.5).contains(&ratio), "{defects:?}");
}

#[test]
fn pairing_is_nearly_invariant_along_complex_gauge_paths() {
    let gaps: Vec<f64> = [16usize, 32, 64]
        .iter()
        .map(|&n| {
            let m = circle(n, 1.0, 2.0, 1);
            let p = m.holomorphic_pair(1.0);
            let mut r = rng::stream(9, 1);
            let s = rng::smooth_site_field(&m.grid, 1, 1, 0.5, &mut r);
            let q = m.apply_complex_gauge(&ComplexGauge::imaginary(s), &p);
            (pairing(&m, &q) - pairing(&m, &p)).abs()
        })
        .collect();
    assert!(gaps[1] < gaps[0] / 3.0 && gaps[2] < gaps[1] / 3.0, "{gaps:?}");
}

#[test]
fn gradients_vanish_at_the_bare_critical_point() {
    let m = circle(8, 1.0, 1.0, 0);
    let p = m.zero_pair();
    assert_eq!(grad_f(&m, &p).max_abs(), 0.0);
    assert!(grad_ymh(&m, &p).max_abs() < 1e-15);
}

#[test]
fn grad_f_is_the_complex_action_of_phi() {
    let m = mixed(12);
    let p = smooth_pair(&m, 8);
    let phi = m.moment_residual(&p);
    let direct = m.complex_infinitesimal_action(&p, &phi);
    assert!(grad_f(&m, &p).sub(&direct).max_abs() <= 1e-12 * direct.max_abs());
}

#[test]
fn gradients_agree_on_holomorphic_pairs_to_second_order() {
    let gaps: Vec<f64> = [16usize, 32, 64]
        .iter()
        .map(|&n| {
            let m = circle(n, 1.0, 4.0 * PI, 1);
            let p = m.random_holomorphic_pair(2, 1.0, 0.4);
            grad_ymh(&m, &p).sub(&grad_f(&m, &p)).norm(&m.grid)
        })
        .collect();
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio > 3.0, "{gaps:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        let m = mixed(16);
        let p = smooth_pair(&m, seed);
        let t = smooth_tangent(&m, seed);
        for (name, f, g) in [
            ("f_moment", f_moment as fn(&Model64, &Pair64) -> f64, grad_f(&m, &p)),
            ("ymh", ymh as fn(&Model64, &Pair64) -> f64, grad_ymh(&m, &p)),
        ] {
            let fd = directional(|q| f(&m, q), &p, &t, 1e-3);
            let exact = g.inner(&m.grid, &t);
            let scale = g.norm(&m.grid) * t.norm(&m.grid);
            prop_assert!((fd - exact).abs() <= 1e-8 * scale, "{}: fd {} exact {}", name, fd, exact);
        }
    }

    #[test]
    fn functionals_are_unitary_invariant(seed in any::<u64>()) {
        let m = mixed(8);
        let p = smooth_pair(&m, seed);
        let theta = rng::site_field(&m.grid, m.k(), &mut rng::stream(seed, 4));
        let q = m.apply_complex_gauge(&ComplexGauge::unitary(theta), &p);
        let (b0, b1) = (energy_identity_defect(&m, &p), energy_identity_defect(&m, &q));
        for (x, y) in [(b0.ymh, b1.ymh), (b0.f_moment, b1.f_moment), (b0.dbar_energy, b1.dbar_energy), (b0.pairing, b1.pairing)] {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
