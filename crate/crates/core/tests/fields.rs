use std::f64::consts::{PI, TAU};

use num_complex::Complex;
use proptest::prelude::*;
use vortexflow::lattice::{d0, ComplexSiteField, LinkField, SiteField};
use vortexflow::{rng, ActionSpec, ComplexGauge, Grid64, Model64, Pair64, Tangent};

fn circle(n: usize, tau: f64, d: i64) -> Model64 {
    Model64::new(Grid64::unit(n).unwrap(), ActionSpec::circle(tau, d)).unwrap()
}

fn mixed() -> Model64 {
    let spec = ActionSpec::new(2, 3, vec![1, 0, 2, 0, 1, -1], vec![1.0, 0.5], vec![1, 1]).unwrap();
    Model64::new(Grid64::new(8, 6, 1.3, 0.9).unwrap(), spec).unwrap()
}

fn random_pair(m: &Model64, seed: u64, scale: f64) -> Pair64 {
    let mut r = rng::stream(seed, 5);
    Pair64 {
        a: rng::link_field(&m.grid, m.k(), &mut r).scale(scale),
        u: rng::complex_site_field(&m.grid, m.n(), &mut r).scale(scale),
    }
}

fn random_tangent(m: &Model64, seed: u64) -> Tangent<f64> {
    let mut r = rng::stream(seed, 6);
    Tangent { a: rng::link_field(&m.grid, m.k(), &mut r), u: rng::complex_site_field(&m.grid, m.n(), &mut r) }
}

fn random_xi(m: &Model64, seed: u64) -> SiteField<f64> {
    rng::site_field(&m.grid, m.k(), &mut rng::stream(seed, 7))
}

fn max_diff(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn curvature_examples() {
    let m = circle(12, 1.0, 1);
    let f = m.curvature(&LinkField::zeros(&m.grid, 1));
    assert!(f.data.iter().all(|v| (v - TAU).abs() < 1e-10));

    let a = random_pair(&m, 1, 0.3).a;
    let theta = random_xi(&m, 2);
    let shifted = a.add(&d0(&m.grid, &theta));
    let (f1, f2) = (m.curvature(&a), m.curvature(&shifted));
    assert!(f1.sub(&f2).max_abs() < 1e-12);

    let flat = circle(8, 1.0, 0);
    assert_eq!(flat.curvature(&LinkField::zeros(&flat.grid, 1)).max_abs(), 0.0);
}

#[test]
fn covariant_derivative_examples() {
    let m = circle(8, 1.0, 0);
    let mut p = m.zero_pair();
    p.u = ComplexSiteField::constant(&m.grid, &[Complex::new(0.7, -0.2)]);
    assert!(m.covariant_d(&p).max_abs() < 1e-15);

    // Single Fourier mode and constant link value c: the forward difference
    // of exp(i k x) transported by exp(-i h c) is u (exp(i (k - c) h) - 1) / h.
    let m = circle(16, 1.0, 0);
    let g = m.grid;
    let c = 0.8;
    let k = TAU * 2.0;
    let mut p = m.zero_pair();
    p.a = LinkField::constant(&g, &[c], &[0.0]);
    p.u = ComplexSiteField { comps: 1, data: (0..g.len()).map(|s| Complex::from_polar(1.0, k * g.x(s % g.nx))).collect() };
    let du = m.covariant_d(&p);
    let h = g.hx();
    for s in 0..g.len() {
        let expect = p.u.data[s] * (Complex::from_polar(1.0, (k - c) * h) - 1.0) / h;
        assert!((du.x[s] - expect).norm() < 1e-12);
        assert!(du.y[s].norm() < 1e-12);
    }
}

#[test]
fn dbar_residual_examples() {
    let m = circle(8, 1.0, 0);
    let mut p = m.zero_pair();
    p.u = ComplexSiteField::constant(&m.grid, &[Complex::new(1.0, 1.0)]);
    assert!(m.dbar_residual(&p).max_abs() < 1e-15);

    // exp(-i k x) is antiholomorphic; centered differences give
    // D_x u = -i sin(k h) / h u and D_y u = 0.
    let m = circle(16, 1.0, 0);
    let g = m.grid;
    let k = TAU;
    p = m.zero_pair();
    p.u = ComplexSiteField { comps: 1, data: (0..g.len()).map(|s| Complex::from_polar(1.0, -k * g.x(s % g.nx))).collect() };
    let res = m.dbar_residual(&p);
    let h = g.hx();
    for s in 0..g.len() {
        let expect = p.u.data[s] * Complex::new(0.0, -(k * h).sin() / (2.0 * h));
        assert!((res.data[s] - expect).norm() < 1e-12);
    }
    assert!(res.max_abs() > 1.0);
}

#[test]
fn dbar_residual_of_gauged_holomorphic_pair_is_second_order() {
    let norms: Vec<f64> = [16usize, 32, 64]
        .iter()
        .map(|&n| {
            let m = circle(n, 4.0 * PI, 1);
            let p = m.random_holomorphic_pair(3, 1.0, 0.5);
            m.dbar_residual(&p).norm(&m.grid)
        })
        .collect();
    for w in norms.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "refinement ratio {ratio} from {norms:?}");
    }
}

#[test]
fn moment_examples() {
    let m = circle(8, 1.5, 0);
    assert!(m.moment(&m.zero_pair().u).data.iter().all(|&v| v == -1.5));
    let u = ComplexSiteField::constant(&m.grid, &[Complex::from_polar(3.0f64.sqrt(), 0.4)]);
    assert!(m.moment(&u).max_abs() < 1e-15);

    let spec = ActionSpec::new(1, 2, vec![1, 2], vec![0.0], vec![0]).unwrap();
    let m2 = Model64::new(Grid64::unit(4).unwrap(), spec).unwrap();
    let one = Complex::new(1.0, 0.0);
    let mu = m2.moment(&ComplexSiteField::constant(&m2.grid, &[one, one]));
    assert!(mu.data.iter().all(|v| (v - 1.5).abs() < 1e-15));
}

#[test]
fn moment_residual_examples() {
    let tau = 2.2;
    let m = circle(10, tau, 1);
    let phi = m.moment_residual(&m.zero_pair());
    assert!(phi.data.iter().all(|v| (v - (TAU - tau)).abs() < 1e-10));
    let flat = circle(10, tau, 0);
    assert!(flat.moment_residual(&flat.zero_pair()).data.iter().all(|&v| v == -tau));
}

#[test]
fn constant_xi_acts_only_on_sections() {
    let m = mixed();
    let p = random_pair(&m, 4, 1.0);
    let xi = SiteField::constant(&m.grid, &[0.3, -1.1]);
    let t = m.infinitesimal_action(&p, &xi);
    assert!(t.a.max_abs() < 1e-12);
    let n = m.grid.len();
    for j in 0..m.n() {
        let w = (0..m.k()).map(|a| m.spec.weight_t(a, j) * xi.data[a * n]).sum::<f64>();
        for s in 0..n {
            let expect = Complex::new(0.0, -w) * p.u.data[j * n + s];
            assert!((t.u.data[j * n + s] - expect).norm() < 1e-14);
        }
    }
}

#[test]
fn constant_negative_imaginary_gauge_shrinks_sections() {
    let m = circle(8, 1.0, 1);
    let p = random_pair(&m, 5, 1.0);
    let g = ComplexGauge::imaginary(SiteField::constant(&m.grid, &[-1.0]));
    let q = m.apply_complex_gauge(&g, &p);
    assert!(q.a.sub(&p.a).max_abs() < 1e-12);
    for (a, b) in q.u.data.iter().zip(&p.u.data) {
        assert!((a - b * (-1.0f64).exp()).norm() < 1e-14);
    }
}

#[test]
fn complex_gauge_group_action_composes() {
    let m = mixed();
    let p = random_pair(&m, 6, 0.5);
    let g1 = ComplexGauge { s: random_xi(&m, 7).scale(0.3), theta: random_xi(&m, 8) };
    let g2 = ComplexGauge { s: random_xi(&m, 9).scale(0.3), theta: random_xi(&m, 10) };
    let seq = m.apply_complex_gauge(&g2, &m.apply_complex_gauge(&g1, &p));
    let once = m.apply_complex_gauge(&g1.compose(&g2), &p);
    assert!(seq.a.sub(&once.a).max_abs() < 1e-12);
    assert!(max_diff(&seq.u.data, &once.u.data) < 1e-12);
    let back = m.apply_complex_gauge(&g1.inverse(), &m.apply_complex_gauge(&g1, &p));
    assert!(back.diff(&p).max_abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn unitary_gauge_equivariance(seed in any::<u64>()) {
        let m = mixed();
        let p = random_pair(&m, seed, 0.7);
        let theta = random_xi(&m, seed ^ 1).scale(2.0);
        let q = m.apply_complex_gauge(&ComplexGauge::unitary(theta.clone()), &p);
        prop_assert!(m.curvature(&q.a).sub(&m.curvature(&p.a)).max_abs() < 1e-12);
        prop_assert!(m.moment_residual(&q).sub(&m.moment_residual(&p)).max_abs() < 1e-12);
        let (dp, dq) = (m.covariant_d(&p), m.covariant_d(&q));
        let px = m.gauge_phase(&theta, &ComplexSiteField { comps: m.n(), data: dp.x.clone() });
        let py = m.gauge_phase(&theta, &ComplexSiteField { comps: m.n(), data: dp.y.clone() });
        prop_assert!(max_diff(&dq.x, &px.data) < 1e-12);
        prop_assert!(max_diff(&dq.y, &py.data) < 1e-12);
        let rq = m.dbar_residual(&q);
        let rp = m.gauge_phase(&theta, &m.dbar_residual(&p));
        prop_assert!(max_diff(&rq.data, &rp.data) < 1e-12);
        let (n0, n1) = (m.moment_residual(&p).norm(&m.grid), m.moment_residual(&q).norm(&m.grid));
        prop_assert!((n0 - n1).abs() < 1e-12 * n0.max(1.0));
    }

    #[test]
    fn flux_is_preserved_by_complex_gauge(seed in any::<u64>()) {
        let m = mixed();
        let p = random_pair(&m, seed, 0.7);
        let g = ComplexGauge { s: random_xi(&m, seed ^ 2), theta: random_xi(&m, seed ^ 3) };
        for (f, d) in m.flux_integral(&m.apply_complex_gauge(&g, &p).a).iter().zip(&m.spec.degrees) {
            prop_assert!((f - TAU * *d as f64).abs() < 1e-11);
        }
    }

    #[test]
    fn infinitesimal_action_adjoint_identity(seed in any::<u64>()) {
        let m = mixed();
        let p = random_pair(&m, seed, 1.0);
        let xi = random_xi(&m, seed ^ 4);
        let t = random_tangent(&m, seed ^ 5);
        let lhs = m.infinitesimal_action(&p, &xi).inner(&m.grid, &t);
        let rhs = xi.inner(&m.grid, &m.infinitesimal_action_adjoint(&p, &t));
        let scale = m.infinitesimal_action(&p, &xi).norm(&m.grid) * t.norm(&m.grid);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    #[test]
    fn moment_map_identity(seed in any::<u64>()) {
        // d/de <Phi(x + e t), xi> = omega(L xi, t)
        let m = mixed();
        let p = random_pair(&m, seed, 1.0);
        let xi = random_xi(&m, seed ^ 6);
        let t = random_tangent(&m, seed ^ 7);
        let eps = 1e-4;
        let pair_at = |e: f64| m.moment_residual(&p.displaced(e, &t)).inner(&m.grid, &xi);
        let fd = (pair_at(eps) - pair_at(-eps)) / (2.0 * eps);
        let omega = m.symplectic_form(&m.infinitesimal_action(&p, &xi), &t);
        prop_assert!((fd - omega).abs() <= 1e-6 * omega.abs().max(1.0), "fd {} omega {}", fd, omega);
    }

    #[test]
    fn monotonicity_calibration(seed in any::<u64>()) {
        let m = mixed();
        let p = random_pair(&m, seed, 1.0);
        let xi = random_xi(&m, seed ^ 8);
        let vals: Vec<f64> = (0..=10)
            .map(|k| {
                let g = ComplexGauge::imaginary(xi.scale(k as f64 / 10.0));
                m.moment_residual(&m.apply_complex_gauge(&g, &p)).inner(&m.grid, &xi)
            })
            .collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", vals);
        }
    }
}
