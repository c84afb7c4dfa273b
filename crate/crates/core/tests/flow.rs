use std::f64::consts::{PI, TAU};

use num_complex::Complex;
use proptest::prelude::*;
use vortexflow::flow::{
    cartan_decompose, dominant_weight_estimate, lojasiewicz_fit, run_flow, DecayKind, Flow, FlowConfig, FlowError,
    FlowState, GaugeOde, GaugePath, Representation, Scheme, Terminal,
};
use vortexflow::functionals::{f_moment, ymh};
use vortexflow::lattice::{ComplexSiteField, LinkField, SiteField};
use vortexflow::stability::kempf_ness_value;
use vortexflow::{rng, ActionSpec, ComplexGauge, Grid64, Model64, Pair64};

fn circle(n: usize, tau: f64, d: i64) -> Model64 {
    Model64::new(Grid64::unit(n).unwrap(), ActionSpec::circle(tau, d)).unwrap()
}

fn smooth_pair(m: &Model64, seed: u64, amp: f64) -> Pair64 {
    let mut r = rng::stream(seed, 31);
    let g = &m.grid;
    let ax = rng::smooth_site_field(g, m.k(), 2, amp, &mut r);
    let ay = rng::smooth_site_field(g, m.k(), 2, amp, &mut r);
    let re = rng::smooth_site_field(g, m.n(), 2, amp, &mut r);
    let im = rng::smooth_site_field(g, m.n(), 2, amp, &mut r);
    Pair64 {
        a: LinkField { comps: m.k(), x: ax.data, y: ay.data },
        u: ComplexSiteField { comps: m.n(), data: re.data.iter().zip(&im.data).map(|(&a, &b)| Complex::new(a, b)).collect() },
    }
}

fn fixed_step(scheme: Scheme, representation: Representation, dt: f64) -> FlowConfig<f64> {
    FlowConfig { scheme, representation, dt0: dt, dt_max: Some(dt), growth: 1.0, ..FlowConfig::default() }
}

fn cosine(a: &SiteField<f64>, b: &SiteField<f64>, m: &Model64) -> f64 {
    a.inner(&m.grid, b) / (a.norm(&m.grid) * b.norm(&m.grid))
}

#[test]
fn critical_point_is_a_fixed_point() {
    let m = circle(8, 1.3, 0);
    let p = m.zero_pair();
    for scheme in [Scheme::ExplicitEuler, Scheme::Rk4, Scheme::SemiImplicit] {
        for rep in [Representation::Gauge, Representation::Direct] {
            let cfg = fixed_step(scheme, rep, 1e-2);
            let flow = Flow::new(&m, cfg, &p).unwrap();
            let (next, _) = flow.step(&FlowState::new(&m, p.clone(), 1e-2)).unwrap();
            assert!(next.pair.diff(&p).max_abs() < 1e-15, "{scheme} {rep}");
        }
    }
}

/// Around `(A, u) = (0, 0)` with `tau < 0` the Hessian of the discrete
/// functional is diagonal in Fourier modes: `sin^2(k h) / h^2` for a
/// y-link mode varying in x, and `-tau` for every section mode.
#[test]
fn linearised_decay_matches_hessian_eigenvalues() {
    let n = 16;
    let tau = -2.0;
    let m = circle(n, tau, 0);
    let g = m.grid;
    let h = g.hx();
    let k = TAU * 3.0 / n as f64;
    let eps = 1e-6;

    let mut pa = m.zero_pair();
    pa.a.y = (0..g.len()).map(|s| eps * (k * (s % n) as f64).cos()).collect();
    let mut pu = m.zero_pair();
    pu.u.data = (0..g.len()).map(|s| Complex::from_polar(eps, k * (s % n) as f64)).collect();
    let lam_a = (k.sin() / h).powi(2);
    let lam_u = -tau;

    // The same eigenvalues as Rayleigh quotients of second differences; the
    // probe is larger than eps so the quotient is not lost to rounding.
    let f0 = f_moment(&m, &m.zero_pair());
    for (p, lam) in [(&pa, lam_a), (&pu, lam_u)] {
        let v = p.diff(&m.zero_pair()).scale(1e3);
        let p = &m.zero_pair().displaced(1.0, &v);
        let q = (f_moment(&m, p) + f_moment(&m, &m.zero_pair().displaced(-1.0, &v)) - 2.0 * f0) / v.inner(&g, &v);
        assert!((q - lam).abs() < 1e-6 * lam, "quotient {q} vs {lam}");
    }

    let dt = 1e-3;
    for rep in [Representation::Direct, Representation::Gauge] {
        let flow = Flow::new(&m, fixed_step(Scheme::ExplicitEuler, rep, dt), &pa).unwrap();
        let (next, _) = flow.step(&FlowState::new(&m, pa.clone(), dt)).unwrap();
        for s in 0..g.len() {
            assert!((next.pair.a.y[s] - (1.0 - dt * lam_a) * pa.a.y[s]).abs() < 1e-10 * eps, "{rep} {} vs {}", next.pair.a.y[s], (1.0 - dt * lam_a) * pa.a.y[s]);
            assert!(next.pair.a.x[s].abs() < 1e-12 * eps);
        }
    }
    let expected = [(Representation::Direct, 1.0 - dt * lam_u), (Representation::Gauge, (-dt * lam_u).exp())];
    for (rep, factor) in expected {
        let flow = Flow::new(&m, fixed_step(Scheme::ExplicitEuler, rep, dt), &pu).unwrap();
        let (next, _) = flow.step(&FlowState::new(&m, pu.clone(), dt)).unwrap();
        for s in 0..g.len() {
            assert!((next.pair.u.data[s] - pu.u.data[s] * factor).norm() < 1e-9 * eps, "{rep}");
        }
    }
}

#[test]
fn proposals_below_the_cap_decrease_ymh() {
    let spec = ActionSpec::new(2, 2, vec![1, 1, 0, 2], vec![2.0, 1.0], vec![1, 0]).unwrap();
    let m = Model64::new(Grid64::unit(16).unwrap(), spec).unwrap();
    let p = smooth_pair(&m, 3, 0.6);
    for scheme in [Scheme::ExplicitEuler, Scheme::Rk4] {
        for rep in [Representation::Gauge, Representation::Direct] {
            let flow = Flow::new(&m, FlowConfig { scheme, representation: rep, ..FlowConfig::default() }, &p).unwrap();
            let st = FlowState::new(&m, p.clone(), 1.0);
            let dt = 0.5 * flow.dt_cap();
            let (next, _) = flow.propose(&st, dt);
            assert!(ymh(&m, &next) < ymh(&m, &p), "{scheme} {rep}");
        }
    }
}

/// With `u = 0` the curvature obeys a linear heat equation whose Fourier
/// modes decay at the symbol of `d1 codiff2 S^T S`; solve it spectrally.
#[test]
fn zero_section_reduces_to_abelian_yang_mills() {
    let m = circle(16, 1.0, 1);
    let g = m.grid;
    let mut p = smooth_pair(&m, 5, 0.5);
    p.u = ComplexSiteField::zeros(&g, 1);
    let f0 = m.curvature(&p.a);
    let t_end = 0.05;
    let cfg = FlowConfig { t_max: t_end, tol: 1e-300, ..fixed_step(Scheme::Rk4, Representation::Gauge, 1e-4) };
    let (rep, _) = run_flow(&m, &p, &cfg).unwrap();
    assert_eq!(rep.terminal, Terminal::MaxTimeReached);
    assert!((rep.final_state.t - t_end).abs() < 1e-12);

    let fluct: Vec<f64> = f0.data.iter().map(|v| v - TAU).collect();
    let exact = m.spectral.apply(&fluct, |kx, ky| {
        let sym = vortexflow::lattice::laplacian_symbol(&g, kx, ky) * vortexflow::lattice::average_symbol(kx, ky);
        (-t_end * sym).exp()
    });
    let f = m.curvature(&rep.final_state.pair.a);
    for s in 0..g.len() {
        assert!((f.data[s] - TAU - exact[s]).abs() < 1e-6, "site {s}: {} vs {}", f.data[s] - TAU, exact[s]);
    }

    let cfg = FlowConfig { t_max: 50.0, tol: 1e-9, ..FlowConfig::default() };
    let (rep, _) = run_flow(&m, &p, &cfg).unwrap();
    assert_eq!(rep.terminal, Terminal::Converged);
    let f = m.curvature(&rep.final_state.pair.a);
    assert!(f.data.iter().all(|v| (v - TAU).abs() < 1e-6));
    assert!(rep.final_state.pair.u.max_abs() == 0.0);
}

#[test]
fn stable_run_converges_to_a_vortex() {
    let mut dbar = vec![];
    for n in [16usize, 32] {
        let m = circle(n, 4.0 * PI, 1);
        let p = m.random_holomorphic_pair(7, 1.0, 0.5);
        let (rep, path) = run_flow(&m, &p, &FlowConfig::default()).unwrap();
        assert_eq!(rep.terminal, Terminal::Converged);
        assert!(rep.final_state.phi_norm(&m) <= 1e-5);
        assert!(rep.max_ymh_increase <= 1e-12);
        assert!(rep.max_sup_u2 <= rep.sup_bound + 1e-6);
        let xi = rep.xi_inf.as_ref().unwrap_or_else(|| panic!("{:?}", vortexflow::flow::dominant_weight_estimate(&m.grid, &path)));
        assert!(xi.norm(&m.grid) <= 1e-4, "|xi_inf| = {}", xi.norm(&m.grid));
        let fit = rep.gamma.expect("decay fit");
        assert_eq!(fit.kind, DecayKind::Exponential);
        assert!((0.45..=0.55).contains(&fit.gamma) && fit.r2 >= 0.99);
        dbar.push(rep.final_state.dbar_resid);
    }
    assert!(dbar[0] / dbar[1] > 3.0, "{dbar:?}");
}

#[test]
fn unstable_run_tends_to_constant_curvature() {
    let m = circle(16, PI, 1);
    let p = m.holomorphic_pair(1.0);
    let cfg = FlowConfig { scheme: Scheme::SemiImplicit, t_max: 200.0, tol: 1e-10, ..FlowConfig::default() };
    let (rep, _) = run_flow(&m, &p, &cfg).unwrap();
    assert!((rep.final_state.phi_norm(&m) - PI).abs() <= 1e-3);
    let xi = rep.xi_inf.expect("dominant weight");
    let minus_one = SiteField::constant(&m.grid, &[-1.0]);
    assert!(cosine(&xi, &minus_one, &m) >= 0.999);
}

#[test]
fn gauge_ode_examples() {
    let m = circle(16, PI, 1);
    let ode = GaugeOde::new(&m, m.zero_pair());
    assert_eq!(ode.gauge(), ComplexGauge::identity(&m.grid, 1));

    // Critical start: Phi = pi everywhere, so s(t) = -pi t and the fields stay put.
    let mut ode = GaugeOde::new(&m, m.zero_pair());
    for _ in 0..10 {
        ode.step(0.1);
    }
    let worst = ode.s.data.iter().map(|v| (v + PI * ode.t).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst} t {}", ode.t);
    assert!(ode.pair().diff(&m.zero_pair()).max_abs() < 1e-12);
}

#[test]
fn gauge_ode_reproduces_the_direct_flow() {
    let m = circle(16, 4.0 * PI, 1);
    let p = m.random_holomorphic_pair(4, 1.0, 0.5);
    let dt = 1e-3;
    let cfg = FlowConfig { t_max: 2.0, tol: 1e-300, ..fixed_step(Scheme::Rk4, Representation::Direct, dt) };
    let (rep, _) = run_flow(&m, &p, &cfg).unwrap();
    let mut ode = GaugeOde::new(&m, p.clone());
    while ode.t < 2.0 - 1e-9 {
        ode.step(dt);
    }
    let q = ode.pair();
    assert!(q.diff(&rep.final_state.pair).max_abs() <= 1e-4);
    // apply(g(t)^-1, x(t)) returns to the start.
    let back = m.apply_complex_gauge(&ode.gauge().inverse(), &q);
    assert!(back.diff(&p).max_abs() < 1e-10);
}

#[test]
fn kempf_ness_derivative_along_the_flow() {
    let m = circle(16, 4.0 * PI, 1);
    let p = m.random_holomorphic_pair(9, 1.0, 0.5);
    let cfg = FlowConfig { t_max: 1.0, ..FlowConfig::default() };
    let flow = Flow::new(&m, cfg, &p).unwrap();
    let mut checked = 0;
    flow.run(FlowState::new(&m, p.clone(), 1e-3), |st| {
        if st.steps % 20 != 0 {
            return;
        }
        let g = &m.grid;
        let phi = &st.phi;
        let eps = 1e-4;
        let psi = |e: f64| kempf_ness_value(&m, &p, &st.gauge.s.axpy(-e, phi));
        let slope = (psi(eps) - psi(-eps)) / (2.0 * eps);
        let target = -phi.inner(g, phi);
        assert!((slope - target).abs() <= 1e-6 * target.abs().max(1.0), "t {}: {slope} vs {target}", st.t);
        checked += 1;
    });
    assert!(checked > 3);
}

#[test]
fn cartan_examples() {
    let g = Grid64::unit(8).unwrap();
    let theta = rng::site_field(&g, 2, &mut rng::stream(1, 1));
    let s = rng::site_field(&g, 2, &mut rng::stream(2, 1));
    let (xi, k) = cartan_decompose(&ComplexGauge::unitary(theta.clone()));
    assert_eq!(xi.max_abs(), 0.0);
    assert_eq!(k, theta);
    let (xi, _) = cartan_decompose(&ComplexGauge::imaginary(s.clone()));
    assert_eq!(xi, s);
    // The noncompact part, hence its norm, ignores the compact factor.
    let (xi2, _) = cartan_decompose(&ComplexGauge { s: s.clone(), theta });
    assert_eq!(xi2.norm(&g), s.norm(&g));
}

#[test]
fn dominant_weight_of_synthetic_paths() {
    let g = Grid64::unit(8).unwrap();
    let dir = rng::site_field(&g, 1, &mut rng::stream(3, 1));
    let offset = rng::site_field(&g, 1, &mut rng::stream(4, 1));
    let mut path = GaugePath::new(1.02);
    let mut t = 0.01;
    while t < 100.0 {
        path.samples.push((t, offset.axpy(t, &dir)));
        t *= 1.02;
    }
    let est = dominant_weight_estimate(&g, &path).unwrap();
    assert!(est.sub(&dir).max_abs() < 1e-12);

    let mut wobbly = GaugePath::new(1.02);
    for (t, _) in &path.samples {
        wobbly.samples.push((*t, dir.scale(t.sin() * 10.0)));
    }
    assert!(matches!(dominant_weight_estimate(&g, &wobbly), Err(FlowError::NotConverged { .. })));
}

#[test]
fn lojasiewicz_fit_examples() {
    let ts: Vec<f64> = (1..=400).map(|k| k as f64 * 0.05).collect();
    let fe: Vec<f64> = ts.iter().map(|t| (-t).exp()).collect();
    let fit = lojasiewicz_fit(&ts, &fe, 0.0).unwrap();
    assert_eq!(fit.kind, DecayKind::Exponential);
    assert!((fit.gamma - 0.5).abs() <= 0.01 && (fit.rate - 1.0).abs() < 1e-6);

    let ts: Vec<f64> = (0..400).map(|k| 10f64.powf(k as f64 / 100.0)).collect();
    let fp: Vec<f64> = ts.iter().map(|t| t.powi(-2)).collect();
    let fit = lojasiewicz_fit(&ts, &fp, 0.0).unwrap();
    assert_eq!(fit.kind, DecayKind::PowerLaw);
    assert!((fit.gamma - 0.75).abs() <= 0.01);

    let flat: Vec<f64> = ts.iter().map(|t| 1.0 + 1.0 / t).collect();
    assert!(matches!(lojasiewicz_fit(&ts, &flat, 0.0), Err(FlowError::InsufficientDecay { .. })));
}

/// Off holomorphic data ymh may rise along the flow of F; enforcing its
/// monotonicity then ends the run as stalled instead of crawling.
#[test]
fn non_holomorphic_start_with_enforced_ymh_stalls_quickly() {
    let spec = ActionSpec::new(2, 2, vec![1, 1, 0, 2], vec![3.0, 2.0], vec![1, 0]).unwrap();
    let m = Model64::new(Grid64::new(8, 8, 1.0, 1.3).unwrap(), spec).unwrap();
    let p = smooth_pair(&m, 11400714819323198485, 0.5);
    let cfg = FlowConfig { t_max: 1.0, ..FlowConfig::default() };
    let (rep, _) = run_flow(&m, &p, &cfg).unwrap();
    assert_eq!(rep.terminal, Terminal::Stalled);
    assert!(matches!(rep.error, Some(FlowError::Stalled { .. })));
    let (free, _) = run_flow(&m, &p, &FlowConfig { enforce_ymh: false, ..cfg }).unwrap();
    assert_eq!(free.terminal, Terminal::MaxTimeReached);
    assert!(free.rows.windows(2).all(|w| w[1].f_moment <= w[0].f_moment + 1e-14 * w[0].f_moment));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn flow_invariants_hold_on_random_starts(seed in any::<u64>(), scheme in prop_oneof![Just(Scheme::Rk4), Just(Scheme::SemiImplicit), Just(Scheme::ExplicitEuler)]) {
        let spec = ActionSpec::new(2, 2, vec![1, 1, 0, 2], vec![3.0, 2.0], vec![1, 0]).unwrap();
        let m = Model64::new(Grid64::new(8, 8, 1.0, 1.3).unwrap(), spec).unwrap();
        // ymh only decreases along the flow from holomorphic starts. The
        // gauge amplitude enters |u|^2 exponentially and the explicit step
        // cap shrinks like 1/sup|u|^2, so a moderate amplitude keeps every
        // case short.
        let p = m.random_holomorphic_pair(seed, 1.0, 0.25);
        let cfg = FlowConfig { scheme, t_max: 1.0, ..FlowConfig::default() };
        let flow = Flow::new(&m, cfg, &p).unwrap();
        let bound = flow.sup_bound();
        let mut prev: Option<(f64, f64)> = None;
        let mut failures = vec![];
        let rep = flow.run(FlowState::new(&m, p.clone(), 1e-3), |st| {
            if let Some((t, y)) = prev {
                if st.t < t || st.energies.ymh > y + 1e-12 {
                    failures.push(format!("monotonicity at t {}", st.t));
                }
            }
            if st.sup_u2 > bound + 1e-6 {
                failures.push(format!("sup bound at t {}", st.t));
            }
            for (f, d) in m.flux_integral(&st.pair.a).iter().zip(&m.spec.degrees) {
                if (f - TAU * *d as f64).abs() > 1e-10 {
                    failures.push(format!("flux at t {}", st.t));
                }
            }
            prev = Some((st.t, st.energies.ymh));
        });
        prop_assert!(failures.is_empty(), "{:?}", failures);
        prop_assert!(matches!(rep.terminal, Terminal::Converged | Terminal::MaxTimeReached));
    }
}
