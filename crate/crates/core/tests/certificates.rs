use proptest::prelude::*;

use pulsestream::certificates::{
    build_certificate_1d, build_certificate_2d, build_product_certificate, coefficient_bound, equispaced_nodes, minimal_separation_search,
    theorem_bound, verify_certificate_1d, verify_certificate_2d, SearchOptions, DEFAULT_DENSITY, DEFAULT_EXTENT,
};
use pulsestream::grid::IndexRange;
use pulsestream::kernels::{Kernel, Kernel2D};
use pulsestream::par::Execution;

const SEQ: Execution = Execution::Sequential;

/// Smallest Cauchy `nu` with a positive coefficient-bound denominator,
/// `sqrt(2 pi^2 C_0 / (3 g(0)))`.
fn cauchy_valid_nu() -> f64 {
    let k = Kernel::cauchy(0.1).unwrap();
    (2.0 * std::f64::consts::PI.powi(2) * k.decay[0] / (3.0 * k.peak())).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn interpolation_is_exact_at_the_nodes(count in 1usize..11, nu in 1.0f64..5.0, gauss in any::<bool>(), shift in -1.0f64..1.0) {
        let k = if gauss { Kernel::gaussian(0.1) } else { Kernel::cauchy(0.1) }.unwrap();
        let nodes: Vec<f64> = equispaced_nodes(count, nu, 0.1).into_iter().map(|t| t + shift).collect();
        let c = build_certificate_1d(&k, &nodes).unwrap();
        prop_assert!(c.interpolation_residual <= 1e-9);
        for &t in &nodes {
            prop_assert!((c.eval(t) - 1.0).abs() <= 1e-9);
            prop_assert!((0.1 * c.derivative(t)).abs() <= 1e-9);
        }
    }

    #[test]
    fn coefficient_bound_holds_when_valid(count in 2usize..11, extra in 0.0f64..4.0) {
        let k = Kernel::cauchy(0.1).unwrap();
        let nu = cauchy_valid_nu() * 1.001 + extra;
        let bound = coefficient_bound(&k, nu).unwrap();
        let c = build_certificate_1d(&k, &equispaced_nodes(count, nu, 0.1)).unwrap();
        prop_assert!(c.a_max() <= bound, "{} > {}", c.a_max(), bound);
    }

    #[test]
    fn theorem_bound_grows_with_delta_and_r(r in 1usize..5, d1 in 0.0f64..500.0, extra in 0.01f64..500.0, extra_nu in 0.0f64..3.0) {
        let k = Kernel::cauchy(0.1).unwrap();
        let nu = cauchy_valid_nu() * 1.001 + extra_nu;
        let a = theorem_bound(&k, r, nu, 100, d1).unwrap();
        let b = theorem_bound(&k, r, nu, 100, d1 + extra).unwrap();
        let c = theorem_bound(&k, r + 1, nu, 100, d1 + extra).unwrap();
        prop_assert!(a.valid && b.valid && c.valid);
        prop_assert!(a.gamma >= 1.0);
        prop_assert!(b.bound > a.bound);
        prop_assert!(c.bound > b.bound);
    }
}

#[test]
fn zero_noise_bound_is_zero_and_small_nu_is_invalid() {
    let k = Kernel::cauchy(0.1).unwrap();
    assert_eq!(theorem_bound(&k, 2, 0.5, 100, 0.0).unwrap().bound, 0.0);
    assert!(!theorem_bound(&k, 2, 0.5, 100, 75.0).unwrap().valid);
    assert!(coefficient_bound(&k, 0.5).is_none());
}

#[test]
fn wide_gaussian_pair_fails_a_cap_condition() {
    let k = Kernel::gaussian(0.1).unwrap();
    let c = build_certificate_1d(&k, &[-0.03, 0.03]).unwrap();
    let r = verify_certificate_1d(&c, DEFAULT_DENSITY, DEFAULT_EXTENT, SEQ).unwrap();
    assert!(!r.passed);
    let failed = |name: &str| !r.condition(name).unwrap().passed;
    assert!(failed("far_cap") || failed("nonnegativity") || failed("near_cap"), "{r:?}");
}

#[test]
fn two_node_threshold_is_below_many_node_threshold() {
    let k = Kernel::cauchy(0.1).unwrap();
    let two = SearchOptions { counts: (2, 2), ..SearchOptions::default() };
    let many = SearchOptions { counts: (2, 10), ..SearchOptions::default() };
    let a = minimal_separation_search(&k, &two, SEQ).unwrap();
    let b = minimal_separation_search(&k, &many, SEQ).unwrap();
    assert!(a.nu_star <= b.nu_star + two.tol, "{} vs {}", a.nu_star, b.nu_star);
}

#[test]
fn product_certificate_sign_pattern_for_two_subsets() {
    let k = Kernel::cauchy(0.1).unwrap();
    let t1 = equispaced_nodes(4, 2.0, 0.1);
    let t2: Vec<f64> = t1.iter().map(|t| t + 0.05).collect();
    let certs = [build_certificate_1d(&k, &t1).unwrap(), build_certificate_1d(&k, &t2).unwrap()];
    let p = build_product_certificate(&certs, 100, IndexRange::symmetric(100), SEQ).unwrap();
    assert!(p.passed, "{:?}", p.checks);
    assert!(p.rho >= p.rho_floor && p.rho < 1.0);
    for &k in &p.node_indices {
        let v = p.q[p.window.offset(k).unwrap()];
        assert!((v + p.rho).abs() <= 1e-9);
    }
    assert!(p.q.iter().all(|&v| v <= 1.0 + 1e-12));
}

#[test]
fn close_pair_2d_certificate_verifies() {
    let k = Kernel2D::cauchy(0.1).unwrap();
    let nodes = [(0.0, 0.0), (0.08, 0.0)];
    let c = build_certificate_2d(&k, &nodes).unwrap();
    assert!(c.interpolation_residual <= 1e-9);
    let r = verify_certificate_2d(&c, 0.2, 20, 6.0, SEQ).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn single_node_2d_certificate_is_the_normalised_pulse() {
    let k = Kernel2D::gaussian(0.1).unwrap();
    let c = build_certificate_2d(&k, &[(0.3, -0.2)]).unwrap();
    assert!((c.a[0] - 1.0 / k.peak()).abs() <= 1e-14);
    assert!(c.b1[0].abs() <= 1e-14 && c.b2[0].abs() <= 1e-14);
    let r = verify_certificate_2d(&c, 0.2, 20, 6.0, SEQ).unwrap();
    assert!(r.passed, "{r:?}");
}
