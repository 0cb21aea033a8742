//! Restarted PDHG for `min w(x)  s.t.  |G x - y|_1 <= delta`, where `w` is
//! `sum x` over `x >= 0` or `|x|_1` over signed `x`.
//!
//! This is the recovery program without its LP reformulation: the primal
//! step is a shifted or soft threshold and the dual step projects onto an
//! l1 ball, so only `G` and `G^T` are applied per iteration. The dual is
//! `max -z^T y - delta |z|_inf` subject to `G^T z >= -1` (non-negative) or
//! `|G^T z|_inf <= 1` (signed).

use super::{dot, Diagnostics, IterationRecord, LinearOperator, LpSolution, LpStatus, SplittingOptions};
use crate::error::{invalid, Result};

/// Euclidean projection of `v` onto `{u : |u|_1 <= radius}`.
pub fn project_l1_ball(v: &mut [f64], radius: f64) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // Michelot: drop entries below the running threshold until none remain.
    let mut active: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let mut theta = (norm - radius) / active.len() as f64;
    loop {
        let before = active.len();
        active.retain(|&u| u > theta);
        let sum: f64 = active.iter().sum();
        theta = (sum - radius) / active.len() as f64;
        if active.len() == before {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

struct Kkt {
    /// `max(|Gx - y|_1 - delta, 0)`.
    primal: f64,
    /// Largest dual constraint violation.
    dual: f64,
    dual_sq: f64,
    pobj: f64,
    dobj: f64,
}

impl Kkt {
    fn gap(&self) -> f64 {
        (self.pobj - self.dobj).abs() / (1.0 + self.pobj.abs() + self.dobj.abs())
    }

    fn norm(&self, omega: f64) -> f64 {
        let g = self.pobj - self.dobj;
        (omega * omega * self.primal * self.primal + self.dual_sq / (omega * omega) + g * g).sqrt()
    }
}

fn kkt(x: &[f64], z: &[f64], gx: &[f64], gtz: &[f64], y: &[f64], delta: f64, positive: bool) -> Kkt {
    let res: f64 = gx.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    let mut dual: f64 = 0.0;
    let mut dual_sq = 0.0;
    for &g in gtz {
        let v = if positive { (-1.0 - g).max(0.0) } else { (g.abs() - 1.0).max(0.0) };
        dual = dual.max(v);
        dual_sq += v * v;
    }
    let pobj: f64 = x.iter().map(|v| v.abs()).sum();
    let zinf = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Kkt { primal: (res - delta).max(0.0), dual, dual_sq, pobj, dobj: -dot(z, y) - delta * zinf }
}

fn operator_norm(op: &dyn LinearOperator) -> f64 {
    let (m, n) = (op.rows(), op.cols());
    let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * ((j as f64) * 0.618_034).fract()).collect();
    let mut av = vec![0.0; m];
    let mut atav = vec![0.0; n];
    let mut est = 1.0;
    for _ in 0..60 {
        op.apply(&v, &mut av);
        op.apply_transpose(&av, &mut atav);
        let nrm = dot(&atav, &atav).sqrt();
        if nrm == 0.0 {
            break;
        }
        est = nrm.sqrt();
        v.iter_mut().zip(&atav).for_each(|(v, w)| *v = w / nrm);
    }
    est * 1.05
}

/// Solves the l1-fidelity recovery program. Convergence requires the
/// constraint excess below `feas_tol * (1 + |y|_1)`, dual violations below
/// `feas_tol` and the relative gap below `gap_tol`. The returned `y` holds
/// the dual vector `z`.
pub fn solve_l1_fidelity(op: &dyn LinearOperator, y: &[f64], delta: f64, positive: bool, opts: &SplittingOptions) -> Result<LpSolution> {
    let (m, n) = (op.rows(), op.cols());
    if y.len() != m {
        return Err(invalid(format!("{} measurements for an operator with {m} rows", y.len())));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(invalid(format!("noise budget must be finite and non-negative, got {delta}")));
    }
    let step = opts.step_fraction / operator_norm(op);
    let yn = dot(y, y).sqrt();
    let mut omega = if yn > 1e-10 { (n as f64).sqrt() / yn } else { 1.0 };
    let pscale = 1.0 + y.iter().map(|v| v.abs()).sum::<f64>();

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; m];
    let mut gx = vec![0.0; m];
    let mut gtz = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut gx_new = vec![0.0; m];
    let mut w = vec![0.0; m];

    let mut x_sum = vec![0.0; n];
    let mut z_sum = vec![0.0; m];
    let mut gx_sum = vec![0.0; m];
    let mut gtz_sum = vec![0.0; n];
    let mut count = 0usize;

    let mut x_last = x.clone();
    let mut z_last = z.clone();
    let mut kkt_last = kkt(&x, &z, &gx, &gtz, y, delta, positive).norm(omega);
    let mut kkt_prev_candidate = f64::INFINITY;
    let mut since_restart = 0usize;

    let mut history = Vec::new();
    let mut status = LpStatus::IterationLimit;
    let mut iter = 0usize;
    let mut best = (x.clone(), z.clone());

    while iter < opts.max_iter {
        let tau = step / omega;
        let sigma = step * omega;
        for j in 0..n {
            let v = x[j] - tau * gtz[j];
            x_new[j] = if positive { (v - tau).max(0.0) } else { v.signum() * (v.abs() - tau).max(0.0) };
        }
        op.apply(&x_new, &mut gx_new);
        // Moreau: prox of sigma h* is w - sigma proj_B(w / sigma).
        for i in 0..m {
            let wi = z[i] + sigma * (2.0 * gx_new[i] - gx[i]);
            z[i] = wi;
            w[i] = wi / sigma - y[i];
        }
        project_l1_ball(&mut w, delta);
        for i in 0..m {
            z[i] -= sigma * (y[i] + w[i]);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut gx, &mut gx_new);
        op.apply_transpose(&z, &mut gtz);
        iter += 1;
        since_restart += 1;

        count += 1;
        add_to(&mut x_sum, &x);
        add_to(&mut z_sum, &z);
        add_to(&mut gx_sum, &gx);
        add_to(&mut gtz_sum, &gtz);

        if !iter.is_multiple_of(opts.check_every) && iter != opts.max_iter {
            continue;
        }

        let inv = 1.0 / count as f64;
        let xa: Vec<f64> = x_sum.iter().map(|v| v * inv).collect();
        let za: Vec<f64> = z_sum.iter().map(|v| v * inv).collect();
        let gxa: Vec<f64> = gx_sum.iter().map(|v| v * inv).collect();
        let gtza: Vec<f64> = gtz_sum.iter().map(|v| v * inv).collect();
        let rc = kkt(&x, &z, &gx, &gtz, y, delta, positive);
        let ra = kkt(&xa, &za, &gxa, &gtza, y, delta, positive);
        let use_avg = ra.norm(omega) < rc.norm(omega);
        let r = if use_avg { &ra } else { &rc };
        let r_norm = r.norm(omega);
        if !r_norm.is_finite() {
            break;
        }

        let converged = r.primal <= opts.feas_tol * pscale && r.dual <= opts.feas_tol && r.gap() <= opts.gap_tol;
        let restart = !converged
            && (r_norm <= 0.2 * kkt_last
                || (r_norm <= 0.8 * kkt_last && r_norm > kkt_prev_candidate)
                || since_restart as f64 >= 0.36 * iter as f64);
        kkt_prev_candidate = r_norm;

        if opts.record_history {
            history.push(IterationRecord {
                iteration: iter,
                primal_residual: r.primal,
                dual_residual: r.dual,
                relative_gap: r.gap(),
                objective: r.pobj,
                restarted: restart,
            });
        }

        best = if use_avg { (xa.clone(), za.clone()) } else { (x.clone(), z.clone()) };
        if converged {
            status = LpStatus::Optimal;
            break;
        }

        if restart {
            if use_avg {
                x.copy_from_slice(&xa);
                z.copy_from_slice(&za);
                gx.copy_from_slice(&gxa);
                gtz.copy_from_slice(&gtza);
            }
            let dx = dist(&x, &x_last);
            let dz = dist(&z, &z_last);
            if dx > 1e-10 && dz > 1e-10 {
                omega = (0.5 * (dz / dx).ln() + 0.5 * omega.ln()).exp();
            }
            x_last.copy_from_slice(&x);
            z_last.copy_from_slice(&z);
            kkt_last = kkt(&x, &z, &gx, &gtz, y, delta, positive).norm(omega);
            kkt_prev_candidate = f64::INFINITY;
            since_restart = 0;
            count = 0;
            for v in [&mut x_sum, &mut gtz_sum, &mut z_sum, &mut gx_sum] {
                v.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    let (x, z) = best;
    let mut gx = vec![0.0; m];
    op.apply(&x, &mut gx);
    let mut gtz = vec![0.0; n];
    op.apply_transpose(&z, &mut gtz);
    let r = kkt(&x, &z, &gx, &gtz, y, delta, positive);
    let diagnostics = Diagnostics {
        primal_residual: r.primal,
        dual_residual: r.dual,
        primal_objective: r.pobj,
        dual_objective: r.dobj,
        relative_gap: r.gap(),
        complementary_slackness: 0.0,
    };
    Ok(LpSolution { status, objective: r.pobj, x, y: z, iterations: iter, diagnostics, objective_trace: Vec::new(), history })
}

fn add_to(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linprog::{LinearProgram, Sense, VarBound};

    #[test]
    fn l1_ball_projection() {
        let mut v = vec![3.0, -1.0, 0.5];
        project_l1_ball(&mut v, 2.0);
        // Threshold 1: (2, 0, 0).
        assert_eq!(v, vec![2.0, 0.0, 0.0]);
        let mut v = vec![1.0, -1.0];
        project_l1_ball(&mut v, 1.0);
        assert_eq!(v, vec![0.5, -0.5]);
        let mut v = vec![0.1, 0.2];
        project_l1_ball(&mut v, 1.0);
        assert_eq!(v, vec![0.1, 0.2]);
    }

    #[test]
    fn identity_operator_shrinks_toward_zero() {
        // min |x|_1 s.t. |x - y|_1 <= 1 with G = I: shrink the largest entry.
        let g = LinearProgram::from_dense(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0; 2],
            vec![0.0; 2],
            vec![Sense::Eq; 2],
            vec![VarBound::Free; 2],
        )
        .unwrap();
        let s = solve_l1_fidelity(&g, &[3.0, -0.5], 1.0, false, &SplittingOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 2.5).abs() < 1e-5);
        let s = solve_l1_fidelity(&g, &[3.0, -0.5], 1.0, true, &SplittingOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        // x >= 0: x2 = 0 spends 0.5 of the budget, leaving x1 = 2.5.
        assert!((s.objective - 2.5).abs() < 1e-5);
        assert!((s.x[0] - 2.5).abs() < 1e-4 && s.x[1].abs() < 1e-6);
    }
}
