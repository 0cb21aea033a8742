use proptest::prelude::*;

use pulsestream::grid::{IndexRange, Rect};
use pulsestream::kernels::{Kernel, KernelFamily};
use pulsestream::seed;
use pulsestream::signals::{
    decompose_2d, generate_regular_support, generate_regular_support_2d, max_square_count_2d, rayleigh_regularity_1d, DecompositionMode,
    GenerationOptions, RegularityParams,
};

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::Gaussian), Just(KernelFamily::Cauchy)]
}

/// Integer lattice points; `d` is kept off the integers so no distance
/// ever ties with it.
fn lattice(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::btree_set((0i32..12, 0i32..12), 1..max).prop_map(|s| s.into_iter().map(|(a, b)| (a as f64, b as f64)).collect())
}

proptest! {
    #[test]
    fn kernels_are_even(fam in family(), sigma in 0.01f64..1.0, t in -20.0f64..20.0) {
        let k = Kernel::new(fam, sigma).unwrap();
        prop_assert_eq!(k.eval(t), k.eval(-t));
        prop_assert!((k.derivative(1, t) + k.derivative(1, -t)).abs() <= 1e-14);
        prop_assert!((k.derivative(2, t) - k.derivative(2, -t)).abs() <= 1e-14);
        prop_assert!(k.eval(t) <= k.peak());
    }

    #[test]
    fn symmetric_windows_sample_symmetrically(fam in family(), sigma in 0.02f64..0.5, n in 10usize..200, half in 1i64..80) {
        let k = Kernel::new(fam, sigma).unwrap();
        let s = k.sample(n, IndexRange::symmetric(half));
        let rev: Vec<f64> = s.iter().rev().copied().collect();
        prop_assert_eq!(s, rev);
    }

    #[test]
    fn regularity_is_monotone_in_d(t in prop::collection::vec(-5.0f64..5.0, 1..30), d1 in 0.01f64..3.0, extra in 0.0f64..3.0) {
        prop_assert!(rayleigh_regularity_1d(&t, d1) <= rayleigh_regularity_1d(&t, d1 + extra));
    }

    #[test]
    fn square_count_is_monotone_in_d(p in lattice(25), d1 in 0.1f64..4.0, extra in 0.0f64..4.0) {
        prop_assert!(max_square_count_2d(&p, d1) <= max_square_count_2d(&p, d1 + extra));
    }

    #[test]
    fn single_subset_iff_separated(p in lattice(10), k in 0usize..5) {
        let d = k as f64 + 0.5;
        let separated = p.iter().enumerate().all(|(i, a)| {
            p[i + 1..].iter().all(|b| (a.0 - b.0).abs().max((a.1 - b.1).abs()) >= d)
        });
        let dec = decompose_2d(&p, d, 1, DecompositionMode::Exact).unwrap();
        prop_assert_eq!(dec.success, separated);
    }

    #[test]
    fn decompositions_revalidate(p in lattice(14), k in 0usize..4, r in 1usize..4, exact in any::<bool>()) {
        let d = k as f64 + 0.5;
        let mode = if exact { DecompositionMode::Exact } else { DecompositionMode::Greedy };
        let dec = decompose_2d(&p, d, r, mode).unwrap();
        if dec.success {
            prop_assert!(dec.validate(&p, d));
            prop_assert!(dec.subsets.len() <= r);
        }
    }

    #[test]
    fn greedy_success_implies_exact_success(p in lattice(12), k in 0usize..4, r in 1usize..4) {
        let d = k as f64 + 0.5;
        if decompose_2d(&p, d, r, DecompositionMode::Greedy).unwrap().success {
            prop_assert!(decompose_2d(&p, d, r, DecompositionMode::Exact).unwrap().success);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_1d_supports_pass_their_own_check(s in any::<u64>(), r in 1usize..5, nu in 0.3f64..2.0, count in 1usize..12) {
        let params = RegularityParams::new(nu, 0.1, r).unwrap();
        let n = 100;
        let sup = generate_regular_support(&params, count, n, IndexRange::symmetric(100), GenerationOptions::default(), &mut seed::rng(s)).unwrap();
        let t: Vec<f64> = sup.indices.iter().map(|&k| k as f64 / n as f64).collect();
        prop_assert!(rayleigh_regularity_1d(&t, params.d) <= r);
        prop_assert_eq!(sup.complete, sup.indices.len() == count);
        prop_assert!(sup.indices.iter().all(|&k| (-100..=100).contains(&k)));
    }

    #[test]
    fn generated_2d_supports_decompose(s in any::<u64>(), r in 1usize..3, count in 1usize..7) {
        let params = RegularityParams::new(0.8, 0.1, r).unwrap();
        let window = Rect::square(IndexRange::new(-32, 31).unwrap());
        let sup = generate_regular_support_2d(&params, count, 32, window, GenerationOptions::default(), &mut seed::rng(s)).unwrap();
        let p: Vec<(f64, f64)> = sup.indices.iter().map(|&(a, b)| (a as f64 / 32.0, b as f64 / 32.0)).collect();
        let dec = decompose_2d(&p, params.d, r, DecompositionMode::Exact).unwrap();
        prop_assert!(dec.success && dec.validate(&p, params.d));
    }
}
