//! Two-phase primal simplex on a dense tableau, with periodic
//! reinversion of the basis and Bland's rule as the anti-cycling fallback.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{diagnose, LinearProgram, LpSolution, LpStatus, Sense, VarBound};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Non-improving pivots tolerated before switching to Bland's rule.
    pub bland_after: usize,
    /// Refactor the basis and rebuild the tableau every this many pivots.
    pub reinvert_every: usize,
    /// Refuse problems whose tableau would exceed this many entries.
    pub max_tableau_entries: usize,
    /// Give up after this many consecutive pivots without improving on the
    /// best objective seen; reported as an iteration limit.
    pub stall_limit: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200_000,
            bland_after: 50,
            reinvert_every: 500,
            max_tableau_entries: 40_000_000,
            stall_limit: 20_000,
        }
    }
}

const PIVOT_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-10;
const STALL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    /// Original variable `j` with sign `+1` or `-1` (free split).
    Structural(usize, f64),
    Slack,
    Artificial,
}

struct Tableau {
    m: usize,
    /// Number of columns excluding the right-hand side.
    ncols: usize,
    /// Row-major `m x (ncols + 1)`; last entry of each row is the rhs.
    t: Vec<f64>,
    /// Original standard-form matrix, used for reinversion.
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    kinds: Vec<Column>,
    cost: Vec<f64>,
    d: Vec<f64>,
    obj: f64,
    scratch: Vec<f64>,
    nz: Vec<usize>,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn width(&self) -> usize {
        self.ncols + 1
    }

    fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.t[i * w..(i + 1) * w]
    }

    fn set_costs(&mut self, cost: Vec<f64>) {
        self.cost = cost;
        self.refresh_reduced_costs();
    }

    fn refresh_reduced_costs(&mut self) {
        if self.cost.is_empty() {
            return;
        }
        let w = self.width();
        self.d = self.cost.clone();
        self.obj = 0.0;
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[i * w..(i + 1) * w];
            for (dj, &v) in self.d.iter_mut().zip(&row[..self.ncols]) {
                *dj -= cb * v;
            }
            self.obj += cb * row[self.ncols];
        }
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let w = self.width();
        let piv = self.t[p * w + q];
        for v in &mut self.t[p * w..(p + 1) * w] {
            *v /= piv;
        }
        self.scratch.clear();
        self.scratch.extend_from_slice(&self.t[p * w..(p + 1) * w]);
        self.nz.clear();
        self.nz.extend((0..w).filter(|&j| self.scratch[j] != 0.0));
        let sparse = self.nz.len() * 3 < w;
        for r in 0..self.m {
            if r == p {
                continue;
            }
            let row = &mut self.t[r * w..(r + 1) * w];
            let f = row[q];
            if f == 0.0 {
                continue;
            }
            if sparse {
                for &j in &self.nz {
                    row[j] -= f * self.scratch[j];
                }
            } else {
                for (v, &s) in row.iter_mut().zip(&self.scratch) {
                    *v -= f * s;
                }
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for &j in &self.nz {
                if j < self.ncols {
                    self.d[j] -= f * self.scratch[j];
                }
            }
            self.obj += f * self.scratch[self.ncols];
            self.d[q] = 0.0;
        }
        self.basis[p] = q;
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, k| self.a[i * self.ncols + self.basis[k]])
    }

    /// Rebuilds the tableau body as `B^{-1} [A | b]`. Returns false when the
    /// basis matrix is numerically singular, leaving the tableau untouched.
    fn reinvert(&mut self) -> bool {
        let lu = self.basis_matrix().lu();
        if !lu.is_invertible() {
            return false;
        }
        let w = self.width();
        let full = DMatrix::from_fn(self.m, w, |i, j| if j < self.ncols { self.a[i * self.ncols + j] } else { self.rhs[i] });
        let Some(sol) = lu.solve(&full) else {
            return false;
        };
        for i in 0..self.m {
            for j in 0..w {
                self.t[i * w + j] = sol[(i, j)];
            }
            // Basic columns are exact unit vectors.
            for (k, &bj) in self.basis.iter().enumerate() {
                self.t[i * w + bj] = if k == i { 1.0 } else { 0.0 };
            }
            let r = &mut self.t[i * w + self.ncols];
            if *r < 0.0 && *r > -1e-9 {
                *r = 0.0;
            }
        }
        self.refresh_reduced_costs();
        true
    }

    fn run(&mut self, opts: &SimplexOptions, allowed: &[bool], iters: &mut usize, trace: Option<&mut Vec<f64>>) -> Outcome {
        let cscale = self.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        let mut stalled = 0usize;
        let mut best_obj = self.obj;
        let mut since_best = 0usize;
        let mut since_reinvert = 0usize;
        let mut trace = trace;
        loop {
            if *iters >= opts.max_iter || since_best >= opts.stall_limit {
                return Outcome::IterationLimit;
            }
            let bland = stalled >= opts.bland_after;
            let tol = DUAL_TOL * cscale;
            let entering = if bland {
                (0..self.ncols).find(|&j| allowed[j] && self.d[j] < -tol)
            } else {
                let mut best = None;
                let mut best_d = -tol;
                for (j, (&ok, &dj)) in allowed.iter().zip(&self.d).enumerate().take(self.ncols) {
                    if ok && dj < best_d {
                        best_d = dj;
                        best = Some(j);
                    }
                }
                best
            };
            let Some(q) = entering else {
                return Outcome::Optimal;
            };

            let leave = if bland { self.bland_ratio(q) } else { self.harris_ratio(q, opts.feas_tol) };
            let Some(p) = leave else {
                return Outcome::Unbounded;
            };

            let before = self.obj;
            self.pivot(p, q);
            *iters += 1;
            since_reinvert += 1;
            if since_reinvert >= opts.reinvert_every.max(self.m) {
                since_reinvert = 0;
                self.reinvert();
            }
            if self.obj < before - 1e-12 * (1.0 + before.abs()) {
                stalled = 0;
            } else {
                stalled += 1;
            }
            // On an ill-conditioned basis the objective drifts by rounding
            // noise, so the give-up counter tracks the best value seen.
            if self.obj < best_obj - STALL_TOL * (1.0 + best_obj.abs()) {
                best_obj = self.obj;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(self.obj);
            }
        }
    }

    /// Two-pass ratio test: bound the step with the feasibility tolerance
    /// relaxed, then take the largest pivot among rows within that bound.
    fn harris_ratio(&self, q: usize, tol: f64) -> Option<usize> {
        let w = self.width();
        let mut bound = f64::INFINITY;
        for i in 0..self.m {
            let a = self.t[i * w + q];
            if a > PIVOT_TOL {
                bound = bound.min((self.t[i * w + self.ncols].max(0.0) + tol) / a);
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.t[i * w + q];
            if a > PIVOT_TOL && self.t[i * w + self.ncols].max(0.0) / a <= bound && best.is_none_or(|(_, ba)| a > ba) {
                best = Some((i, a));
            }
        }
        best.map(|(i, _)| i)
    }

    fn bland_ratio(&self, q: usize) -> Option<usize> {
        let w = self.width();
        let colmax = (0..self.m).fold(0.0f64, |acc, i| acc.max(self.t[i * w + q].abs()));
        let tol = PIVOT_TOL.max(1e-7 * colmax);
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let a = self.t[i * w + q];
            if a <= tol {
                continue;
            }
            let ratio = self.t[i * w + self.ncols].max(0.0) / a;
            let better = match leave {
                None => true,
                Some((pi, pr)) => {
                    if (ratio - pr).abs() <= 1e-12 * (1.0 + pr) {
                        self.basis[i] < self.basis[pi]
                    } else {
                        ratio < pr
                    }
                }
            };
            if better {
                leave = Some((i, ratio));
            }
        }
        leave.map(|(i, _)| i)
    }

    fn basic_values(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.ncols];
        let lu = self.basis_matrix().lu();
        let b = nalgebra::DVector::from_column_slice(&self.rhs);
        match lu.solve(&b) {
            Some(xb) => {
                for (i, &j) in self.basis.iter().enumerate() {
                    x[j] = xb[i];
                }
            }
            None => {
                for (i, &j) in self.basis.iter().enumerate() {
                    x[j] = self.row(i)[self.ncols];
                }
            }
        }
        x
    }

    /// Solves `B^T y = c_B`.
    fn duals(&self) -> Vec<f64> {
        let bt = self.basis_matrix().transpose();
        let cb = nalgebra::DVector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost[j]));
        match bt.lu().solve(&cb) {
            Some(y) => y.iter().copied().collect(),
            None => vec![0.0; self.m],
        }
    }
}

/// Solves `lp` to optimality with the two-phase simplex method.
pub fn solve_simplex(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution> {
    let m = lp.rows();
    let n = lp.cols();

    let mut kinds = Vec::new();
    for (j, bound) in lp.bounds.iter().enumerate() {
        kinds.push(Column::Structural(j, 1.0));
        if *bound == VarBound::Free {
            kinds.push(Column::Structural(j, -1.0));
        }
    }
    let row_sign: Vec<f64> = lp.b.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut slack_of = vec![None; m];
    for i in 0..m {
        let coef = match lp.senses[i] {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
            Sense::Eq => continue,
        };
        slack_of[i] = Some((kinds.len(), coef * row_sign[i]));
        kinds.push(Column::Slack);
    }
    let rhs: Vec<f64> = lp.b.iter().zip(&row_sign).map(|(b, s)| b * s).collect();
    let mut struct_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (col, kind) in kinds.iter().enumerate() {
        if let Column::Structural(j, _) = kind {
            struct_cols[*j].push(col);
        }
    }

    // Crash basis: an equality row takes a non-negative column that is
    // positive in that row and absent from every other equality row.
    let mut basis = vec![usize::MAX; m];
    let mut eq_hits = vec![0usize; n];
    let mut eq_entry = vec![(0usize, 0.0f64); n];
    let csc = lp.a.to_csc();
    for (j, col) in csc.outer_iterator().enumerate() {
        for (i, &v) in col.iter() {
            if lp.senses[i] == Sense::Eq && v != 0.0 {
                eq_hits[j] += 1;
                eq_entry[j] = (i, v * row_sign[i]);
            }
        }
    }
    for j in 0..n {
        let (i, v) = eq_entry[j];
        if lp.bounds[j] != VarBound::NonNegative || eq_hits[j] != 1 || v <= 0.0 {
            continue;
        }
        let col = struct_cols[j][0];
        let better = match basis[i] {
            usize::MAX => true,
            cur => {
                let Column::Structural(jc, _) = kinds[cur] else { unreachable!() };
                v > eq_entry[jc].1
            }
        };
        if better {
            basis[i] = col;
        }
    }
    // Row residuals after the crashed columns take their values.
    let mut residual = rhs.clone();
    for i in 0..m {
        if let Column::Structural(j, _) = kinds.get(basis[i]).copied().unwrap_or(Column::Slack) {
            let xj = rhs[i] / eq_entry[j].1;
            for (k, &v) in csc.outer_view(j).unwrap().iter() {
                residual[k] -= v * row_sign[k] * xj;
            }
        }
    }
    let mut art_rows = Vec::new();
    for i in 0..m {
        if basis[i] != usize::MAX {
            continue;
        }
        match slack_of[i] {
            Some((col, s)) if residual[i] / s >= 0.0 => basis[i] = col,
            _ => {
                let sign = if residual[i] < 0.0 { -1.0 } else { 1.0 };
                basis[i] = kinds.len() + art_rows.len();
                art_rows.push((i, sign));
            }
        }
    }
    kinds.extend(std::iter::repeat_n(Column::Artificial, art_rows.len()));
    let ncols = kinds.len();
    if m * (ncols + 1) > opts.max_tableau_entries {
        return Err(invalid(format!(
            "simplex tableau of {m}x{} exceeds the cap of {} entries; use the splitting backend",
            ncols + 1,
            opts.max_tableau_entries
        )));
    }

    let mut a = vec![0.0; m * ncols];
    for (i, row) in lp.a.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            for &col in &struct_cols[j] {
                let Column::Structural(_, s) = kinds[col] else { unreachable!() };
                a[i * ncols + col] = v * s * row_sign[i];
            }
        }
        if let Some((col, s)) = slack_of[i] {
            a[i * ncols + col] = s;
        }
    }
    for (k, &(i, sign)) in art_rows.iter().enumerate() {
        let col = ncols - art_rows.len() + k;
        a[i * ncols + col] = sign;
    }
    let crashed = basis.iter().any(|&b| matches!(kinds[b], Column::Structural(..)))
        || art_rows.iter().any(|&(_, s)| s < 0.0)
        || slack_of.iter().enumerate().any(|(i, sl)| sl.is_some_and(|(c, s)| basis[i] == c && s < 0.0));
    let mut t = vec![0.0; m * (ncols + 1)];
    for i in 0..m {
        t[i * (ncols + 1)..i * (ncols + 1) + ncols].copy_from_slice(&a[i * ncols..(i + 1) * ncols]);
        t[i * (ncols + 1) + ncols] = rhs[i];
    }

    let mut tab = Tableau {
        m,
        ncols,
        t,
        a,
        rhs,
        basis,
        kinds,
        cost: Vec::new(),
        d: Vec::new(),
        obj: 0.0,
        scratch: Vec::with_capacity(ncols + 1),
        nz: Vec::with_capacity(ncols + 1),
    };
    if crashed && !tab.reinvert() {
        return Err(invalid("crash basis is singular"));
    }
    let not_artificial: Vec<bool> = tab.kinds.iter().map(|k| *k != Column::Artificial).collect();
    let mut iters = 0;
    let bscale = 1.0 + lp.b.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    if !art_rows.is_empty() {
        let phase1: Vec<f64> = tab.kinds.iter().map(|k| if *k == Column::Artificial { 1.0 } else { 0.0 }).collect();
        tab.set_costs(phase1);
        let outcome = tab.run(opts, &not_artificial, &mut iters, None);
        tab.reinvert();
        if matches!(outcome, Outcome::IterationLimit) {
            return Ok(finish(lp, &tab, LpStatus::IterationLimit, iters, Vec::new()));
        }
        if tab.obj > opts.feas_tol * bscale {
            return Ok(finish(lp, &tab, LpStatus::Infeasible, iters, Vec::new()));
        }
        drive_out_artificials(&mut tab);
    }

    let phase2: Vec<f64> = tab
        .kinds
        .iter()
        .map(|k| match k {
            Column::Structural(j, s) => lp.c[*j] * s,
            _ => 0.0,
        })
        .collect();
    tab.set_costs(phase2);
    let mut trace = vec![tab.obj];
    let outcome = tab.run(opts, &not_artificial, &mut iters, Some(&mut trace));
    let status = match outcome {
        Outcome::Optimal => {
            // Confirm optimality on a freshly factored tableau.
            if tab.reinvert() {
                let again = tab.run(opts, &not_artificial, &mut iters, Some(&mut trace));
                match again {
                    Outcome::Optimal => LpStatus::Optimal,
                    Outcome::Unbounded => LpStatus::Unbounded,
                    Outcome::IterationLimit => LpStatus::IterationLimit,
                }
            } else {
                LpStatus::Optimal
            }
        }
        Outcome::Unbounded => LpStatus::Unbounded,
        Outcome::IterationLimit => LpStatus::IterationLimit,
    };
    Ok(finish(lp, &tab, status, iters, trace))
}

fn drive_out_artificials(tab: &mut Tableau) {
    let w = tab.width();
    for i in 0..tab.m {
        if tab.kinds[tab.basis[i]] != Column::Artificial {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..tab.ncols {
            if tab.kinds[j] == Column::Artificial {
                continue;
            }
            let v = tab.t[i * w + j].abs();
            if v > 1e-7 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        // A pivot tiny next to the row's own artificial entry only
        // amplifies roundoff; treat such rows as redundant.
        let own = tab.t[i * w + tab.basis[i]].abs().max(1.0);
        if best.is_some_and(|(_, v)| v < 1e-6 * own) {
            best = None;
        }
        // Rows without a candidate are redundant; their artificial stays
        // basic at zero and never re-enters.
        if let Some((j, _)) = best {
            tab.pivot(i, j);
        }
    }
    for i in 0..tab.m {
        let r = &mut tab.t[i * w + tab.ncols];
        if *r < 0.0 {
            *r = 0.0;
        }
    }
}

fn finish(lp: &LinearProgram, tab: &Tableau, status: LpStatus, iterations: usize, trace: Vec<f64>) -> LpSolution {
    let xs = tab.basic_values();
    let mut x = vec![0.0; lp.cols()];
    for (col, kind) in tab.kinds.iter().enumerate() {
        if let Column::Structural(j, s) = kind {
            x[*j] += s * xs[col];
        }
    }
    // Tiny negative values from the final solve are roundoff.
    for (xj, b) in x.iter_mut().zip(&lp.bounds) {
        if *b == VarBound::NonNegative && *xj < 0.0 && *xj > -1e-9 {
            *xj = 0.0;
        }
    }
    let ystd = tab.duals();
    let y: Vec<f64> = ystd.iter().zip(&lp.b).map(|(y, b)| if *b < 0.0 { -y } else { *y }).collect();
    let diagnostics = diagnose(lp, &lp.c, &lp.b, &lp.senses, &lp.bounds, &x, &y);
    let bscale = 1.0 + lp.b.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let status = if status == LpStatus::Optimal && diagnostics.primal_residual > 1e-6 * bscale { LpStatus::Numerical } else { status };
    LpSolution {
        status,
        objective: diagnostics.primal_objective,
        x,
        y,
        iterations,
        diagnostics,
        objective_trace: trace,
        history: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linprog::{Sense::*, VarBound::*};

    fn solve(rows: &[Vec<f64>], c: Vec<f64>, b: Vec<f64>, s: Vec<Sense>, bounds: Vec<VarBound>) -> LpSolution {
        let lp = LinearProgram::from_dense(rows, c, b, s, bounds).unwrap();
        solve_simplex(&lp, &SimplexOptions::default()).unwrap()
    }

    #[test]
    fn single_covering_constraint() {
        let s = solve(&[vec![1.0, 1.0]], vec![1.0, 1.0], vec![1.0], vec![Ge], vec![NonNegative; 2]);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-12);
        assert!((s.y[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinned_variable() {
        let s = solve(&[vec![1.0], vec![1.0]], vec![-1.0], vec![0.0, 0.0], vec![Le, Ge], vec![NonNegative]);
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.x, vec![0.0]);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let s = solve(&[vec![1.0], vec![1.0]], vec![1.0], vec![2.0, 1.0], vec![Ge, Le], vec![NonNegative]);
        assert_eq!(s.status, LpStatus::Infeasible);
        let s = solve(&[vec![1.0, -1.0]], vec![-1.0, 0.0], vec![1.0], vec![Le], vec![NonNegative; 2]);
        assert_eq!(s.status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min |x1 - 3| + |x2 + 2| via free x and epigraph variables.
        let rows = vec![
            vec![1.0, 0.0, 1.0, 0.0],
            vec![-1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
            vec![0.0, -1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0, 0.0],
        ];
        let s = solve(
            &rows,
            vec![0.0, 0.0, 1.0, 1.0],
            vec![3.0, -3.0, -2.0, 2.0, 1.0],
            vec![Ge, Ge, Ge, Ge, Eq],
            vec![Free, Free, NonNegative, NonNegative],
        );
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.objective.abs() < 1e-12);
        assert!((s.x[0] - 3.0).abs() < 1e-12 && (s.x[1] + 2.0).abs() < 1e-12);
        assert!(s.diagnostics.dual_residual < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the textbook rule without safeguards.
        let rows = vec![vec![0.25, -60.0, -0.04, 9.0], vec![0.5, -90.0, -0.02, 3.0], vec![0.0, 0.0, 1.0, 0.0]];
        let s = solve(&rows, vec![-0.75, 150.0, -0.02, 6.0], vec![0.0, 0.0, 1.0], vec![Le, Le, Le], vec![NonNegative; 4]);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 0.05).abs() < 1e-12);
        assert!(s.diagnostics.complementary_slackness < 1e-10);
        assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn tableau_cap_is_enforced() {
        let lp = LinearProgram::from_dense(&[vec![1.0; 4]], vec![1.0; 4], vec![1.0], vec![Ge], vec![NonNegative; 4]).unwrap();
        let opts = SimplexOptions { max_tableau_entries: 3, ..Default::default() };
        assert!(solve_simplex(&lp, &opts).is_err());
    }
}
