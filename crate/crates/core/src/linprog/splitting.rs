//! Restarted primal-dual hybrid gradient (PDHG) for LPs, matrix-free.
//!
//! The problem is rescaled by diagonal row/column equilibration, step sizes
//! come from a power-iteration estimate of the scaled operator norm, and
//! the iteration restarts adaptively to the average iterate with
//! primal-weight updates at each restart.

use serde::{Deserialize, Serialize};

use super::{diagnose, dot, IterationRecord, LinearOperator, LinearProgram, LpSolution, LpStatus, Sense, VarBound};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplittingOptions {
    /// Primal and dual residual tolerance, relative to `1 + |b|_inf`
    /// and `1 + |c|_inf`.
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Convergence and restart checks happen every this many iterations.
    pub check_every: usize,
    pub equilibration_iters: usize,
    /// Fraction of the maximal stable step product.
    pub step_fraction: f64,
    pub record_history: bool,
}

impl Default for SplittingOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            gap_tol: 1e-8,
            max_iter: 400_000,
            check_every: 64,
            equilibration_iters: 10,
            step_fraction: 0.95,
            record_history: true,
        }
    }
}

/// Solves an explicit LP with PDHG.
pub fn solve_splitting(lp: &LinearProgram, opts: &SplittingOptions) -> Result<LpSolution> {
    solve_splitting_operator(lp, &lp.c, &lp.b, &lp.senses, &lp.bounds, opts)
}

struct Scaled<'a> {
    op: &'a dyn LinearOperator,
    dr: Vec<f64>,
    dc: Vec<f64>,
    tn: Vec<f64>,
    tm: Vec<f64>,
}

impl Scaled<'_> {
    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        for ((t, x), d) in self.tn.iter_mut().zip(x).zip(&self.dc) {
            *t = x * d;
        }
        self.op.apply(&self.tn, out);
        for (o, d) in out.iter_mut().zip(&self.dr) {
            *o *= d;
        }
    }

    fn apply_transpose(&mut self, y: &[f64], out: &mut [f64]) {
        for ((t, y), d) in self.tm.iter_mut().zip(y).zip(&self.dr) {
            *t = y * d;
        }
        self.op.apply_transpose(&self.tm, out);
        for (o, d) in out.iter_mut().zip(&self.dc) {
            *o *= d;
        }
    }
}

/// Row and column scalings from alternating `|A|` row/column sum
/// balancing (Sinkhorn-Knopp on the absolute values).
fn equilibrate(op: &dyn LinearOperator, iters: usize) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (op.rows(), op.cols());
    let mut dr = vec![1.0; m];
    let mut dc = vec![1.0; n];
    let mut rs = vec![0.0; m];
    let mut cs = vec![0.0; n];
    for _ in 0..iters {
        op.abs_apply(&dc, &mut rs);
        for (d, r) in dr.iter_mut().zip(&rs) {
            if *r > 0.0 {
                *d = 1.0 / r.sqrt();
            }
        }
        op.abs_apply_transpose(&dr, &mut cs);
        for (d, c) in dc.iter_mut().zip(&cs) {
            if *c > 0.0 {
                *d = 1.0 / c.sqrt();
            }
        }
    }
    (dr, dc)
}

fn project_primal(x: &mut [f64], bounds: &[VarBound]) {
    for (v, b) in x.iter_mut().zip(bounds) {
        if *b == VarBound::NonNegative && *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn project_dual(y: &mut [f64], senses: &[Sense]) {
    for (v, s) in y.iter_mut().zip(senses) {
        match s {
            Sense::Ge if *v < 0.0 => *v = 0.0,
            Sense::Le if *v > 0.0 => *v = 0.0,
            _ => {}
        }
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    gap: f64,
    objective: f64,
    kkt: f64,
}

/// Residuals of a scaled iterate, measured in the original units.
#[allow(clippy::too_many_arguments)]
fn residuals(
    x: &[f64],
    y: &[f64],
    ax: &[f64],
    aty: &[f64],
    c: &[f64],
    b: &[f64],
    senses: &[Sense],
    bounds: &[VarBound],
    dr: &[f64],
    dc: &[f64],
    omega: f64,
) -> Residuals {
    let mut p_inf: f64 = 0.0;
    let mut p_sq = 0.0;
    for i in 0..b.len() {
        let r = ax[i] / dr[i] - b[i];
        let v = match senses[i] {
            Sense::Le => r.max(0.0),
            Sense::Ge => (-r).max(0.0),
            Sense::Eq => r.abs(),
        };
        p_inf = p_inf.max(v);
        p_sq += v * v;
    }
    let mut d_inf: f64 = 0.0;
    let mut d_sq = 0.0;
    let mut pobj = 0.0;
    for j in 0..c.len() {
        let red = c[j] - aty[j] / dc[j];
        let v = match bounds[j] {
            VarBound::NonNegative => (-red).max(0.0),
            VarBound::Free => red.abs(),
        };
        d_inf = d_inf.max(v);
        d_sq += v * v;
        pobj += c[j] * x[j] * dc[j];
    }
    let dobj: f64 = b.iter().zip(y).zip(dr).map(|((b, y), d)| b * y * d).sum();
    let gap = (pobj - dobj).abs();
    Residuals {
        primal: p_inf,
        dual: d_inf,
        gap: gap / (1.0 + pobj.abs() + dobj.abs()),
        objective: pobj,
        kkt: (omega * omega * p_sq + d_sq / (omega * omega) + gap * gap).sqrt(),
    }
}

/// Solves `min c^T x  s.t.  A x (senses) b`, `x` within `bounds`, with `A`
/// given as an operator.
pub fn solve_splitting_operator(
    op: &dyn LinearOperator,
    c: &[f64],
    b: &[f64],
    senses: &[Sense],
    bounds: &[VarBound],
    opts: &SplittingOptions,
) -> Result<LpSolution> {
    let (m, n) = (op.rows(), op.cols());
    if c.len() != n || bounds.len() != n || b.len() != m || senses.len() != m {
        return Err(Error::Dimension("LP data does not match the operator shape".into()));
    }
    let (dr, dc) = equilibrate(op, opts.equilibration_iters);
    let mut a = Scaled { op, dr: dr.clone(), dc: dc.clone(), tn: vec![0.0; n], tm: vec![0.0; m] };
    let cs: Vec<f64> = c.iter().zip(&dc).map(|(c, d)| c * d).collect();
    let bs: Vec<f64> = b.iter().zip(&dr).map(|(b, d)| b * d).collect();

    // Spectral norm of the scaled operator, by power iteration.
    let norm = {
        // A generic start vector: structured ones can sit in an invariant
        // subspace that misses the dominant singular vector.
        let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * ((j as f64) * 0.618_034).fract()).collect();
        let mut av = vec![0.0; m];
        let mut atav = vec![0.0; n];
        let mut est = 1.0;
        for _ in 0..60 {
            a.apply(&v, &mut av);
            a.apply_transpose(&av, &mut atav);
            let nrm = dot(&atav, &atav).sqrt();
            if nrm == 0.0 {
                break;
            }
            est = nrm.sqrt();
            v.iter_mut().zip(&atav).for_each(|(v, w)| *v = w / nrm);
        }
        est * 1.05
    };

    let cn = dot(&cs, &cs).sqrt();
    let bn = dot(&bs, &bs).sqrt();
    let mut omega = if cn > 1e-10 && bn > 1e-10 { cn / bn } else { 1.0 };
    let step = opts.step_fraction / norm;

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut ax_new = vec![0.0; m];

    let mut x_sum = vec![0.0; n];
    let mut y_sum = vec![0.0; m];
    let mut ax_sum = vec![0.0; m];
    let mut aty_sum = vec![0.0; n];
    let mut count = 0usize;

    let mut x_last = x.clone();
    let mut y_last = y.clone();
    let mut kkt_last = residuals(&x, &y, &ax, &aty, c, b, senses, bounds, &dr, &dc, omega).kkt;
    let mut kkt_prev_candidate = f64::INFINITY;
    let mut since_restart = 0usize;

    let mut history = Vec::new();
    let bscale = 1.0 + b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cscale = 1.0 + c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut status = LpStatus::IterationLimit;
    let mut iter = 0usize;
    let mut best: (Vec<f64>, Vec<f64>) = (x.clone(), y.clone());

    while iter < opts.max_iter {
        let tau = step / omega;
        let sigma = step * omega;
        for j in 0..n {
            x_new[j] = x[j] - tau * (cs[j] - aty[j]);
        }
        project_primal(&mut x_new, bounds);
        a.apply(&x_new, &mut ax_new);
        for i in 0..m {
            y[i] += sigma * (bs[i] - (2.0 * ax_new[i] - ax[i]));
        }
        project_dual(&mut y, senses);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut ax, &mut ax_new);
        a.apply_transpose(&y, &mut aty);
        iter += 1;
        since_restart += 1;

        count += 1;
        add_to(&mut x_sum, &x);
        add_to(&mut y_sum, &y);
        add_to(&mut ax_sum, &ax);
        add_to(&mut aty_sum, &aty);

        if !iter.is_multiple_of(opts.check_every) && iter != opts.max_iter {
            continue;
        }

        let inv = 1.0 / count as f64;
        let xa: Vec<f64> = x_sum.iter().map(|v| v * inv).collect();
        let ya: Vec<f64> = y_sum.iter().map(|v| v * inv).collect();
        let axa: Vec<f64> = ax_sum.iter().map(|v| v * inv).collect();
        let atya: Vec<f64> = aty_sum.iter().map(|v| v * inv).collect();
        let rc = residuals(&x, &y, &ax, &aty, c, b, senses, bounds, &dr, &dc, omega);
        let ra = residuals(&xa, &ya, &axa, &atya, c, b, senses, bounds, &dr, &dc, omega);
        let use_avg = ra.kkt < rc.kkt;
        let r = if use_avg { &ra } else { &rc };

        let converged = r.primal <= opts.feas_tol * bscale && r.dual <= opts.feas_tol * cscale && r.gap <= opts.gap_tol;

        let restart = !converged
            && (r.kkt <= 0.2 * kkt_last
                || (r.kkt <= 0.8 * kkt_last && r.kkt > kkt_prev_candidate)
                || since_restart as f64 >= 0.36 * iter as f64);
        kkt_prev_candidate = r.kkt;

        if opts.record_history {
            history.push(IterationRecord {
                iteration: iter,
                primal_residual: r.primal,
                dual_residual: r.dual,
                relative_gap: r.gap,
                objective: r.objective,
                restarted: restart,
            });
        }

        if converged {
            best = if use_avg { (xa, ya) } else { (x.clone(), y.clone()) };
            status = LpStatus::Optimal;
            break;
        }
        best = if use_avg { (xa.clone(), ya.clone()) } else { (x.clone(), y.clone()) };

        if restart {
            if use_avg {
                x.copy_from_slice(&xa);
                y.copy_from_slice(&ya);
                ax.copy_from_slice(&axa);
                aty.copy_from_slice(&atya);
            }
            let dx = dist(&x, &x_last);
            let dy = dist(&y, &y_last);
            if dx > 1e-10 && dy > 1e-10 {
                omega = (0.5 * (dy / dx).ln() + 0.5 * omega.ln()).exp();
            }
            x_last.copy_from_slice(&x);
            y_last.copy_from_slice(&y);
            kkt_last = residuals(&x, &y, &ax, &aty, c, b, senses, bounds, &dr, &dc, omega).kkt;
            kkt_prev_candidate = f64::INFINITY;
            since_restart = 0;
            count = 0;
            for v in [&mut x_sum, &mut aty_sum] {
                v.iter_mut().for_each(|v| *v = 0.0);
            }
            for v in [&mut y_sum, &mut ax_sum] {
                v.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    let x_out: Vec<f64> = best.0.iter().zip(&dc).map(|(x, d)| x * d).collect();
    let y_out: Vec<f64> = best.1.iter().zip(&dr).map(|(y, d)| y * d).collect();
    let diagnostics = diagnose(op, c, b, senses, bounds, &x_out, &y_out);
    Ok(LpSolution {
        status,
        objective: diagnostics.primal_objective,
        x: x_out,
        y: y_out,
        iterations: iter,
        diagnostics,
        objective_trace: Vec::new(),
        history,
    })
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
    use crate::linprog::{Sense::*, VarBound::*};

    #[test]
    fn small_lp_converges() {
        let lp = LinearProgram::from_dense(
            &[vec![1.0, 1.0], vec![1.0, -1.0]],
            vec![1.0, 2.0],
            vec![1.0, 0.5],
            vec![Ge, Le],
            vec![NonNegative; 2],
        )
        .unwrap();
        let s = solve_splitting(&lp, &SplittingOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        // x = (0.75, 0.25).
        assert!((s.objective - 1.25).abs() < 1e-5);
        assert!(!s.history.is_empty());
    }

    #[test]
    fn zero_objective_returns_feasible_point() {
        let lp = LinearProgram::from_dense(&[vec![1.0, 2.0]], vec![0.0, 0.0], vec![4.0], vec![Le], vec![NonNegative; 2]).unwrap();
        let s = solve_splitting(&lp, &SplittingOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.objective, 0.0);
        assert!(s.diagnostics.primal_residual <= 1e-6);
    }

    #[test]
    fn infeasible_budget_does_not_converge() {
        // |x - 3| <= s with budget s <= 1, while x <= 1.
        let lp = LinearProgram::from_dense(
            &[vec![1.0, 1.0], vec![1.0, -1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1.0, 0.0],
            vec![3.0, 3.0, 1.0, 1.0],
            vec![Ge, Le, Le, Le],
            vec![NonNegative, NonNegative],
        )
        .unwrap();
        let opts = SplittingOptions { max_iter: 20_000, ..Default::default() };
        let s = solve_splitting(&lp, &opts).unwrap();
        assert_eq!(s.status, LpStatus::IterationLimit);
        assert!(s.diagnostics.primal_residual > 0.1);
        assert!(s.stagnated());
    }
}
