mod common;

use proptest::prelude::*;
use rand::Rng;

use pulsestream::grid::{IndexRange, Rect};
use pulsestream::kernels::{Kernel, Kernel2D};
use pulsestream::linprog::{project_l1_ball, solve_simplex, LpStatus, SimplexOptions};
use pulsestream::measurement::{add_noise, convolve, ApplyMode, ConvolutionOperator, ConvolutionOperator2d, NoiseFamily};
use pulsestream::recovery::{assemble_lp, Backend};
use pulsestream::seed;
use pulsestream::signals::SpikeTrain;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn probe<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn adjoint_identity_1d() {
    let mut rng = seed::rng(11);
    for kernel in [Kernel::cauchy(0.1).unwrap(), Kernel::gaussian(0.07).unwrap()] {
        for mode in [ApplyMode::Matrix, ApplyMode::Stencil] {
            let op = ConvolutionOperator::covering(&kernel, 100, IndexRange::symmetric(100), mode).unwrap();
            for _ in 0..100 {
                let x = probe(&mut rng, op.cols());
                let z = probe(&mut rng, op.rows());
                let lhs = dot(&op.apply(&x).unwrap(), &z);
                let rhs = dot(&x, &op.apply_transpose(&z).unwrap());
                assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }
}

#[test]
fn adjoint_identity_2d() {
    let mut rng = seed::rng(12);
    let kernel = Kernel2D::cauchy(0.1).unwrap();
    let input = Rect::square(IndexRange::new(-8, 7).unwrap());
    for mode in [ApplyMode::Matrix, ApplyMode::Stencil, ApplyMode::Separable] {
        let op = ConvolutionOperator2d::covering(&kernel, 32, input, mode).unwrap();
        for _ in 0..100 {
            let x = probe(&mut rng, op.cols());
            let z = probe(&mut rng, op.rows());
            let lhs = dot(&op.apply(&x).unwrap(), &z);
            let rhs = dot(&x, &op.apply_transpose(&z).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn separable_2d_matches_dense_oracle() {
    let mut rng = seed::rng(13);
    let kernel = Kernel2D::gaussian(0.1).unwrap();
    let input = Rect::new(IndexRange::new(-6, 5).unwrap(), IndexRange::new(-3, 9).unwrap());
    let fast = ConvolutionOperator2d::covering(&kernel, 32, input, ApplyMode::Separable).unwrap();
    let dense = ConvolutionOperator2d::covering(&kernel, 32, input, ApplyMode::Matrix).unwrap();
    for _ in 0..10 {
        let mut x = vec![0.0; fast.cols()];
        for _ in 0..5 {
            x[rng.random_range(0..fast.cols())] = rng.random_range(-5.0..5.0);
        }
        let a = fast.apply(&x).unwrap();
        let b = dense.apply(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }
}

/// Bisection on the soft threshold: an independent projection oracle.
fn l1_projection_oracle(v: &[f64], radius: f64) -> Vec<f64> {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= radius {
        return v.to_vec();
    }
    let (mut lo, mut hi) = (0.0, v.iter().fold(0.0f64, |a, x| a.max(x.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = v.iter().map(|x| (x.abs() - mid).max(0.0)).sum();
        if s > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    v.iter().map(|x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

proptest! {
    #[test]
    fn nonnegative_trains_convolve_nonnegative(
        spikes in prop::collection::btree_map(-50i64..=50, 0.01f64..10.0, 1..8),
        sigma in 0.03f64..0.3,
    ) {
        let (idx, amps): (Vec<i64>, Vec<f64>) = spikes.into_iter().unzip();
        let x = SpikeTrain::new(100, IndexRange::symmetric(50), idx, amps, true).unwrap();
        for kernel in [Kernel::cauchy(sigma).unwrap(), Kernel::gaussian(sigma).unwrap()] {
            let (_, y) = convolve(&x, &kernel).unwrap();
            prop_assert!(y.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn translation_shifts_the_output(
        spikes in prop::collection::btree_map(-40i64..=40, -10.0f64..10.0, 1..6),
        shift in -5i64..=5,
    ) {
        let (idx, amps): (Vec<i64>, Vec<f64>) = spikes.into_iter().unzip();
        let window = IndexRange::symmetric(50);
        let x = SpikeTrain::new(100, window, idx, amps, false).unwrap();
        let moved = x.translated(shift).unwrap();
        let kernel = Kernel::cauchy(0.1).unwrap();
        // A common output window wide enough for both trains.
        let out = window.dilate(kernel.stencil_radius(100) + 5);
        let op = ConvolutionOperator::new(&kernel, 100, window, out, ApplyMode::Stencil).unwrap();
        let a = op.apply(&x.to_dense()).unwrap();
        let b = op.apply(&moved.to_dense()).unwrap();
        for k in out.iter() {
            let (Some(i), Some(j)) = (out.offset(k), out.offset(k + shift)) else { continue };
            prop_assert!((a[i] - b[j]).abs() <= 1e-12 * (1.0 + a[i].abs()));
        }
    }

    #[test]
    fn noise_has_exact_l1_budget(len in 1usize..300, delta in 0.0f64..500.0, s in any::<u64>(), uniform in any::<bool>()) {
        let clean = vec![1.0; len];
        let family = if uniform { NoiseFamily::Uniform } else { NoiseFamily::Normal };
        let noisy = add_noise(&clean, delta, family, &mut seed::rng(s)).unwrap();
        let l1: f64 = noisy.noise.iter().map(|v| v.abs()).sum();
        prop_assert!((l1 - delta).abs() <= 1e-9 * (1.0 + delta));
    }

    #[test]
    fn l1_projection_matches_bisection(v in prop::collection::vec(-10.0f64..10.0, 1..60), radius in 0.01f64..20.0) {
        let mut p = v.clone();
        project_l1_ball(&mut p, radius);
        let oracle = l1_projection_oracle(&v, radius);
        for (a, b) in p.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert!(p.iter().map(|x| x.abs()).sum::<f64>() <= radius + 1e-9);
    }
}

#[test]
fn simplex_certificates_on_recovery_lps() {
    for i in 0..30 {
        let p = common::oracle_instance(100 + i, 8, Backend::Simplex);
        let (lp, _) = assemble_lp(&p).unwrap();
        let s = solve_simplex(&lp, &SimplexOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        let d = &s.diagnostics;
        assert!(d.complementary_slackness <= 1e-8, "instance {i}: {d:?}");
        assert!(d.dual_residual <= 1e-8, "instance {i}: {d:?}");
        // Weak duality, tight at the optimum.
        assert!(d.dual_objective <= d.primal_objective + 1e-8 * (1.0 + d.primal_objective.abs()));
        assert!(d.relative_gap <= 1e-8, "instance {i}: {d:?}");
        let tr = &s.objective_trace;
        assert!(tr.windows(2).all(|w| w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs())), "instance {i}");
    }
}
