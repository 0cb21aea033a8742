//! Oracles and instance builders shared by the integration and acceptance
//! targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use pulsestream::grid::IndexRange;
use pulsestream::kernels::{Kernel, KernelFamily};
use pulsestream::linprog::{LinearProgram, Sense, VarBound};
use pulsestream::measurement::{ApplyMode, ConvolutionOperator, Measurement};
use pulsestream::recovery::{Backend, RecoveryProblem};
use pulsestream::seed;

/// Standard form `A x = b, x >= 0` of `lp`: free variables split, one slack
/// per inequality row.
fn standard_form(lp: &LinearProgram) -> (DMatrix<f64>, DVector<f64>, Vec<f64>) {
    let (m, n) = (lp.rows(), lp.cols());
    let dense = lp.a.to_dense();
    let mut cols: Vec<(Vec<f64>, f64)> = Vec::new();
    for j in 0..n {
        let col: Vec<f64> = (0..m).map(|i| dense[[i, j]]).collect();
        if lp.bounds[j] == VarBound::Free {
            cols.push((col.iter().map(|v| -v).collect(), -lp.c[j]));
        }
        cols.push((col, lp.c[j]));
    }
    for (i, s) in lp.senses.iter().enumerate() {
        let sign = match s {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
            Sense::Eq => continue,
        };
        let mut col = vec![0.0; m];
        col[i] = sign;
        cols.push((col, 0.0));
    }
    let a = DMatrix::from_fn(m, cols.len(), |i, j| cols[j].0[i]);
    let c = cols.iter().map(|(_, c)| *c).collect();
    (a, DVector::from_column_slice(&lp.b), c)
}

/// Next `k`-subset of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Optimal objective by enumerating every basic feasible solution. `None`
/// when no basis is feasible. Assumes a bounded problem with full row rank.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let (a, b, c) = standard_form(lp);
    let (m, n) = a.shape();
    let scale = 1.0 + b.amax();
    let mut idx: Vec<usize> = (0..m).collect();
    let mut best: Option<f64> = None;
    loop {
        let basis = a.select_columns(&idx);
        let lu = basis.clone().lu();
        let u = lu.u();
        let umax = u.diagonal().amax();
        let umin = u.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        if umin > 1e-11 * umax.max(1.0) {
            if let Some(xb) = lu.solve(&b) {
                let resid = (&basis * &xb - &b).amax();
                if resid <= 1e-9 * scale && xb.iter().all(|&v| v >= -1e-9 * scale) {
                    let obj: f64 = idx.iter().zip(xb.iter()).map(|(&j, &v)| c[j] * v.max(0.0)).sum();
                    best = Some(best.map_or(obj, |o: f64| o.min(obj)));
                }
            }
        }
        if !next_combination(&mut idx, n) {
            return best;
        }
    }
}

/// A small recovery problem: `n_in` grid points, `n_out` measurements,
/// one or two spikes and a random noise budget.
pub fn small_recovery_problem<R: Rng>(rng: &mut R, n_in: usize, n_out: usize, backend: Backend) -> RecoveryProblem {
    let family = if rng.random_bool(0.5) { KernelFamily::Cauchy } else { KernelFamily::Gaussian };
    let sigma = rng.random_range(0.1..0.3);
    let n = rng.random_range(8..=20);
    let kernel = Kernel::new(family, sigma).unwrap();
    let input = IndexRange::new(0, n_in as i64 - 1).unwrap();
    let shift = rng.random_range(-1..=1i64);
    let output = IndexRange::new(shift, shift + n_out as i64 - 1).unwrap();
    let op = ConvolutionOperator::new(&kernel, n, input, output, ApplyMode::Matrix).unwrap();
    let positive = rng.random_bool(0.5);
    let mut x = vec![0.0; n_in];
    for _ in 0..rng.random_range(1..=2) {
        let v: f64 = rng.random_range(0.5..3.0);
        x[rng.random_range(0..n_in)] = if positive || rng.random_bool(0.5) { v } else { -v };
    }
    let clean = op.apply(&x).unwrap();
    // Noise of l1 norm exactly delta keeps the truth feasible.
    let delta = rng.random_range(0.0..0.3) * clean.iter().map(|v| v.abs()).sum::<f64>();
    let dir: Vec<f64> = clean.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm: f64 = dir.iter().map(|v| v.abs()).sum();
    let y: Vec<f64> = clean.iter().zip(&dir).map(|(c, d)| c + delta * d / norm).collect();
    let measurement =
        Measurement { n, window: output, delta, kernel: kernel.name().to_string(), sigma, seed: None, snr_db: None, y, noise: None };
    RecoveryProblem::new(measurement, kernel, input, positive, backend)
}

/// Seeded random instance for the oracle suites.
pub fn oracle_instance(index: u64, max_points: usize, backend: Backend) -> RecoveryProblem {
    let mut rng = seed::rng(seed::derive(0x5eed, &[index]));
    let n_in = rng.random_range(2..=max_points);
    let n_out = rng.random_range(2..=n_in.min(5));
    small_recovery_problem(&mut rng, n_in, n_out, backend)
}

/// Seeded random instance with up to about `max_vars` LP columns.
pub fn mid_instance(index: u64, max_vars: usize, backend: Backend) -> RecoveryProblem {
    let mut rng = seed::rng(seed::derive(0xcafe, &[index]));
    // Signed split-residual LPs have 2 n_in + 2 n_out columns.
    let n_in = rng.random_range(4..=max_vars / 5);
    let n_out = rng.random_range(n_in / 2..=n_in);
    small_recovery_problem(&mut rng, n_in, n_out, backend)
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}
