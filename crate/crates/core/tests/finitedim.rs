use num_complex::Complex;
use proptest::prelude::*;
use vortexflow::finitedim::{
    fd_dominant_weight_bruteforce, fd_flow, fd_lojasiewicz_probe, fd_moment, fd_ray_weight, fd_reduced_potential,
    fd_weight, BruteForceOptions, FdFlowConfig, FiniteError, FinitePoint, LojasiewiczProbeOptions, ReducedOptions,
};
use vortexflow::flow::{run_flow, FlowConfig, Scheme};
use vortexflow::lattice::ComplexSiteField;
use vortexflow::stability::{RayOptions, WeightValue};
use vortexflow::{ActionSpec, Grid64, Model64};

type C = Complex<f64>;

fn c(re: f64, im: f64) -> C {
    Complex::new(re, im)
}

fn circle(tau: f64) -> ActionSpec<f64> {
    ActionSpec::circle(tau, 0)
}

fn diagonal(tau: [f64; 2]) -> ActionSpec<f64> {
    ActionSpec::new(2, 2, vec![1, 0, 0, 1], tau.to_vec(), vec![0, 0]).unwrap()
}

#[test]
fn moment_examples() {
    let s = diagonal([1.0, 3.0]);
    assert_eq!(fd_moment(&s, &[c(0.0, 0.0); 2]), vec![-1.0, -3.0]);
    assert_eq!(fd_moment(&circle(2.0), &[c(2.0, 0.0)]), vec![0.0]);
    let s = ActionSpec::new(1, 2, vec![1, 2], vec![0.0], vec![0]).unwrap();
    assert_eq!(fd_moment(&s, &[c(1.0, 0.0), c(0.0, 1.0)]), vec![1.5]);
}

#[test]
fn fixed_points_of_the_flow() {
    for x in [c(0.0, 0.0), c(0.0, 2.0), c(2f64.sqrt(), -(2f64.sqrt()))] {
        let p = FinitePoint::new(circle(2.0), vec![x]).unwrap();
        let tr = fd_flow(&p, &FdFlowConfig::default()).unwrap();
        assert!(tr.converged);
        assert!((tr.limit()[0] - x).norm() < 1e-14);
    }
}

/// With `r = |x|^2` the flow reads `r' = -(r - 2 tau) r`, a logistic equation.
#[test]
fn radial_flow_matches_logistic_solution() {
    let tau = 2.0;
    for (r0, phase) in [(0.3, 0.4), (9.0, -2.0)] {
        let p = FinitePoint::new(circle(tau), vec![Complex::from_polar(f64::sqrt(r0), phase)]).unwrap();
        let cfg = FdFlowConfig { t_max: 5.0, tol: 0.0, ..FdFlowConfig::default() };
        let tr = fd_flow(&p, &cfg).unwrap();
        for (t, x) in tr.ts.iter().zip(&tr.xs) {
            let exact = 2.0 * tau / (1.0 + (2.0 * tau / r0 - 1.0) * (-2.0 * tau * t).exp());
            assert!((x[0].norm_sqr() - exact).abs() <= 1e-8 * exact, "t {t}");
            assert!((x[0].arg() - phase).abs() < 1e-12);
        }
        assert!(tr.mu_norms.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let long = fd_flow(&p, &FdFlowConfig::default()).unwrap();
        assert!((long.limit()[0].norm_sqr() - 4.0).abs() < 1e-9);
    }
}

#[test]
fn closed_form_weight_examples() {
    let zero = FinitePoint::new(diagonal([1.0, 3.0]), vec![c(0.0, 0.0); 2]).unwrap();
    for xi in [[1.0, 0.0], [-0.5, 2.0], [0.3, -0.7]] {
        let expected = -(xi[0] * 1.0 + xi[1] * 3.0);
        assert_eq!(fd_weight(&zero, &xi).unwrap(), WeightValue::Finite(expected));
    }
    let s = ActionSpec::new(1, 2, vec![1, -1], vec![0.0], vec![0]).unwrap();
    let both = FinitePoint::new(s.clone(), vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
    for xi in [0.2, -3.0] {
        assert_eq!(fd_weight(&both, &[xi]).unwrap(), WeightValue::PlusInfinity);
    }
    let half = FinitePoint::new(s, vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
    assert_eq!(fd_weight(&half, &[-1.0]).unwrap(), WeightValue::Finite(0.0));
    assert!(matches!(fd_weight(&half, &[0.0]), Err(FiniteError::BadDirection)));
}

#[test]
fn dominant_weight_at_the_origin_is_tau() {
    let p = FinitePoint::new(circle(2.0), vec![c(0.0, 0.0)]).unwrap();
    let (xi, v) = fd_dominant_weight_bruteforce(&p, &BruteForceOptions::default()).unwrap();
    assert!((v - 2.0).abs() < 1e-12 && (xi[0] - 1.0).abs() < 1e-12);

    let p = FinitePoint::new(diagonal([1.0, 3.0]), vec![c(0.0, 0.0); 2]).unwrap();
    let (xi, v) = fd_dominant_weight_bruteforce(&p, &BruteForceOptions::default()).unwrap();
    let norm = 10f64.sqrt();
    assert!((v - norm).abs() < 1e-6, "{v}");
    assert!((xi[0] - 1.0 / norm).abs() < 1e-3 && (xi[1] - 3.0 / norm).abs() < 1e-3, "{xi:?}");
    let tr = fd_flow(&p, &FdFlowConfig::default()).unwrap();
    assert!((tr.mu_norms.last().unwrap() - v).abs() < 1e-6);
}

#[test]
fn dominant_weight_matches_the_flow_limit() {
    // x1 settles on its zero level while the empty coordinate keeps mu_2 = -3,
    // so the infimum of |mu| over the orbit is 3.
    let p = FinitePoint::new(diagonal([1.0, 3.0]), vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
    let (xi, v) = fd_dominant_weight_bruteforce(&p, &BruteForceOptions::default()).unwrap();
    assert!((v - 3.0).abs() < 1e-6 && xi[0].abs() < 1e-3, "{xi:?} {v}");
    let tr = fd_flow(&p, &FdFlowConfig::default()).unwrap();
    assert!((tr.mu_norms.last().unwrap() - v).abs() < 1e-6);
    let dom = tr.dominant_weight();
    assert!(dom[0].abs() < 1e-3 && (dom[1] - 3.0).abs() < 1e-2, "{dom:?}");
}

#[test]
fn semistable_points_are_not_unstable() {
    let s = ActionSpec::new(1, 2, vec![1, -1], vec![0.0], vec![0]).unwrap();
    let p = FinitePoint::new(s, vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
    assert!(matches!(fd_dominant_weight_bruteforce(&p, &BruteForceOptions::default()), Err(FiniteError::NotUnstable { .. })));
}

#[test]
fn reduced_potential_examples() {
    // Nondegenerate minimum: tau < 0 at the origin.
    let p = FinitePoint::new(circle(-1.0), vec![c(0.0, 0.0)]).unwrap();
    let rp = fd_reduced_potential(&p, &ReducedOptions::default()).unwrap();
    assert!(rp.kernel.is_empty());
    assert!(rp.samples.iter().all(|s| (s.f - 0.5).abs() < 1e-15));

    // Critical circle |x|^2 = 4: the kernel is the orbit tangent and F is constant along it.
    let p = FinitePoint::new(circle(2.0), vec![c(2.0, 0.0)]).unwrap();
    let rp = fd_reduced_potential(&p, &ReducedOptions::default()).unwrap();
    assert_eq!(rp.kernel.len(), 1);
    assert!(rp.kernel[0][0].abs() < 1e-12 && (rp.kernel[0][1].abs() - 1.0).abs() < 1e-12);
    assert!(rp.samples.iter().all(|s| s.f.abs() < 1e-10));

    // tau = 0 at the origin: F = |x|^4 / 8 on the whole (degenerate) space.
    let p = FinitePoint::new(circle(0.0), vec![c(0.0, 0.0)]).unwrap();
    let rp = fd_reduced_potential(&p, &ReducedOptions::default()).unwrap();
    assert_eq!(rp.kernel.len(), 2);
    for s in &rp.samples {
        let r2: f64 = s.coords.iter().map(|v| v * v).sum();
        assert!((s.f - r2 * r2 / 8.0).abs() <= 1e-14 * r2.max(1e-300));
        assert!(s.identity_defect < 1e-6, "{}", s.identity_defect);
    }
    let (gamma, r2) = rp.gamma.unwrap();
    assert!((gamma - 0.75).abs() < 0.02 && r2 > 0.99);
}

#[test]
fn lojasiewicz_probe_exponents() {
    let radii = [1e-1, 3e-2, 1e-2];
    for (tau, x, expected) in [(-1.0, c(0.0, 0.0), 0.5), (2.0, c(0.0, 2.0), 0.5), (0.0, c(0.0, 0.0), 0.75)] {
        let p = FinitePoint::new(circle(tau), vec![x]).unwrap();
        let probe = fd_lojasiewicz_probe(&p, &radii, &LojasiewiczProbeOptions::default()).unwrap();
        assert!((probe.gamma - expected).abs() <= 0.02, "tau {tau}: {}", probe.gamma);
        assert_eq!(probe.revalidated, 1000);
        assert_eq!(probe.violations, 0, "tau {tau}: gamma {} c {}", probe.gamma, probe.c);
    }
    let p = FinitePoint::new(circle(2.0), vec![c(1.0, 0.0)]).unwrap();
    assert!(matches!(fd_lojasiewicz_probe(&p, &radii, &LojasiewiczProbeOptions::default()), Err(FiniteError::NotCritical { .. })));
}

/// Constant fields on a trivial bundle follow the point ODE exactly.
#[test]
fn lattice_constant_fields_follow_the_ode() {
    let spec = ActionSpec::new(2, 3, vec![1, 0, 2, 0, 1, -1], vec![1.0, 0.5], vec![0, 0]).unwrap();
    let x = vec![c(0.4, 0.2), c(-0.3, 0.9), c(0.6, -0.1)];
    let m = Model64::new(Grid64::new(4, 4, 1.3, 0.7).unwrap(), spec.clone()).unwrap();
    let mut pair = m.zero_pair();
    pair.u = ComplexSiteField::constant(&m.grid, &x);
    let t_end = 1.0;
    let cfg = FlowConfig {
        scheme: Scheme::Rk4,
        dt0: 1e-3,
        dt_max: Some(1e-3),
        growth: 1.0,
        t_max: t_end,
        tol: 1e-300,
        ..FlowConfig::default()
    };
    let (rep, _) = run_flow(&m, &pair, &cfg).unwrap();
    let p = FinitePoint::new(spec, x).unwrap();
    let tr = fd_flow(&p, &FdFlowConfig { t_max: t_end, tol: 0.0, ..FdFlowConfig::default() }).unwrap();
    assert!((tr.final_time() - t_end).abs() < 1e-12);
    let n = m.grid.len();
    for (j, z) in tr.limit().iter().enumerate() {
        for s in 0..n {
            let w = rep.final_state.pair.u.data[j * n + s];
            assert!((w - z).norm() <= 1e-6 * z.norm(), "component {j}: {w} vs {z}");
        }
    }
}

fn small_spec() -> impl Strategy<Value = ActionSpec<f64>> {
    (prop::collection::vec(-2i64..=2, 6), -2.0f64..2.0, -2.0f64..2.0)
        .prop_map(|(w, t0, t1)| ActionSpec::new(2, 3, w, vec![t0, t1], vec![0, 0]).unwrap())
}

fn point() -> impl Strategy<Value = Vec<C>> {
    prop::collection::vec((prop::bool::ANY, -1.5f64..1.5, -1.5f64..1.5), 3)
        .prop_map(|v| v.into_iter().map(|(on, a, b)| if on { c(a, b) } else { c(0.0, 0.0) }).collect())
}

fn direction() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2i64..=2, 2)
        .prop_filter("nonzero", |v| v.iter().any(|&x| x != 0))
        .prop_map(|v| v.into_iter().map(|x| x as f64).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_weight_equals_ray_limit(spec in small_spec(), x in point(), xi in direction()) {
        let p = FinitePoint::new(spec, x).unwrap();
        let closed = fd_weight(&p, &xi).unwrap();
        let ray = fd_ray_weight(&p, &xi, &RayOptions::default()).unwrap();
        match (closed, ray) {
            (WeightValue::Finite(a), WeightValue::Finite(b)) => prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn flow_decreases_mu(spec in small_spec(), x in point()) {
        let p = FinitePoint::new(spec, x).unwrap();
        let tr = fd_flow(&p, &FdFlowConfig { t_max: 20.0, tol: 0.0, ..FdFlowConfig::default() }).unwrap();
        for w in tr.mu_norms.windows(2) {
            // Past convergence the norm sits at the solver tolerance floor.
            prop_assert!(w[1] <= w[0] + 1e-10, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn brute_force_value_dominates_probed_directions(x in point(), t0 in 0.1f64..2.0, t1 in 0.1f64..2.0, xi in direction()) {
        let spec = ActionSpec::new(2, 3, vec![1, 0, 1, 0, 1, 1], vec![t0, t1], vec![0, 0]).unwrap();
        let p = FinitePoint::new(spec, x).unwrap();
        if let Ok((_, best)) = fd_dominant_weight_bruteforce(&p, &BruteForceOptions::default()) {
            if let WeightValue::Finite(w) = fd_weight(&p, &xi).unwrap() {
                let n = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(best >= -w / n - 1e-12);
            }
        }
    }
}
