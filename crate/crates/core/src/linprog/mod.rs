//! Linear programs `min c^T x  s.t.  A x (<=|=|>=) b`, with each variable
//! either non-negative or free, and two solvers for them.

mod fidelity;
mod simplex;
mod splitting;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

pub use fidelity::{project_l1_ball, solve_l1_fidelity};
pub use simplex::{solve_simplex, SimplexOptions};
pub use splitting::{solve_splitting, solve_splitting_operator, SplittingOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarBound {
    NonNegative,
    Free,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    /// CSR constraint matrix.
    pub a: CsMat<f64>,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub senses: Vec<Sense>,
    pub bounds: Vec<VarBound>,
}

impl LinearProgram {
    pub fn new(a: CsMat<f64>, c: Vec<f64>, b: Vec<f64>, senses: Vec<Sense>, bounds: Vec<VarBound>) -> Result<Self> {
        let a = if a.is_csr() { a } else { a.to_csr() };
        let (m, n) = a.shape();
        if c.len() != n || bounds.len() != n {
            return Err(Error::Dimension(format!("{n} columns but {} costs and {} bounds", c.len(), bounds.len())));
        }
        if b.len() != m || senses.len() != m {
            return Err(Error::Dimension(format!("{m} rows but {} right-hand sides and {} senses", b.len(), senses.len())));
        }
        if a.data().iter().chain(&c).chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite LP data".into()));
        }
        Ok(Self { a, c, b, senses, bounds })
    }

    /// Builds the matrix from `(row, col, value)` triplets; duplicates add.
    pub fn from_triplets(
        shape: (usize, usize),
        triplets: &[(usize, usize, f64)],
        c: Vec<f64>,
        b: Vec<f64>,
        senses: Vec<Sense>,
        bounds: Vec<VarBound>,
    ) -> Result<Self> {
        let mut t = TriMat::new(shape);
        for &(r, col, v) in triplets {
            if r >= shape.0 || col >= shape.1 {
                return Err(Error::Dimension(format!("entry ({r}, {col}) outside {shape:?}")));
            }
            t.add_triplet(r, col, v);
        }
        Self::new(t.to_csr(), c, b, senses, bounds)
    }

    /// Convenience constructor from dense rows.
    pub fn from_dense(rows: &[Vec<f64>], c: Vec<f64>, b: Vec<f64>, senses: Vec<Sense>, bounds: Vec<VarBound>) -> Result<Self> {
        let n = c.len();
        let mut trip = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            trip.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (i, j, *v)));
        }
        Self::from_triplets((rows.len(), n), &trip, c, b, senses, bounds)
    }

    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    pub fn cols(&self) -> usize {
        self.a.cols()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        dot(&self.c, x)
    }

    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        LinearOperator::apply(self, x, &mut out);
        out
    }

    /// Primal, dual and optimality diagnostics for a candidate pair.
    pub fn diagnose(&self, x: &[f64], y: &[f64]) -> Diagnostics {
        diagnose(self, &self.c, &self.b, &self.senses, &self.bounds, x, y)
    }
}

/// Matrix-free access to a constraint matrix.
pub trait LinearOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = A x`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = A^T y`.
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]);
    /// `out = |A| x` with entrywise absolute values.
    fn abs_apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = |A|^T y`.
    fn abs_apply_transpose(&self, y: &[f64], out: &mut [f64]);

    fn row_abs_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.abs_apply(&vec![1.0; self.cols()], &mut out);
        out
    }

    fn col_abs_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        self.abs_apply_transpose(&vec![1.0; self.rows()], &mut out);
        out
    }
}

impl LinearOperator for LinearProgram {
    fn rows(&self) -> usize {
        self.a.rows()
    }

    fn cols(&self) -> usize {
        self.a.cols()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.a.outer_iterator().enumerate() {
            out[i] = row.iter().map(|(j, v)| v * x[j]).sum();
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in self.a.outer_iterator().enumerate() {
            let yi = y[i];
            if yi != 0.0 {
                for (j, v) in row.iter() {
                    out[j] += v * yi;
                }
            }
        }
    }

    fn abs_apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.a.outer_iterator().enumerate() {
            out[i] = row.iter().map(|(j, v)| v.abs() * x[j]).sum();
        }
    }

    fn abs_apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in self.a.outer_iterator().enumerate() {
            for (j, v) in row.iter() {
                out[j] += v.abs() * y[i];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    /// The solver stopped at a point that fails the feasibility check.
    Numerical,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest constraint or bound violation.
    pub primal_residual: f64,
    /// Largest violation of dual sign constraints and reduced-cost signs.
    pub dual_residual: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|p - d| / (1 + |p| + |d|)`.
    pub relative_gap: f64,
    /// Largest `|y_i (a_i x - b_i)|` or `|x_j (c - A^T y)_j|`.
    pub complementary_slackness: f64,
}

/// One row of a solver's convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
    pub objective: f64,
    pub restarted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Multipliers with `y_i >= 0` on `>=` rows, `<= 0` on `<=` rows.
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub diagnostics: Diagnostics,
    /// Phase-two objective after each simplex pivot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<IterationRecord>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// True when the primal residual failed to improve over the second half
    /// of the recorded history.
    pub fn stagnated(&self) -> bool {
        let h = &self.history;
        if h.len() < 4 {
            return false;
        }
        let mid = h[h.len() / 2].primal_residual;
        let last = h[h.len() - 1].primal_residual;
        last > 0.5 * mid
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for rec in &self.history {
            w.serialize(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn diagnose(
    op: &dyn LinearOperator,
    c: &[f64],
    b: &[f64],
    senses: &[Sense],
    bounds: &[VarBound],
    x: &[f64],
    y: &[f64],
) -> Diagnostics {
    let mut ax = vec![0.0; op.rows()];
    op.apply(x, &mut ax);
    let mut aty = vec![0.0; op.cols()];
    op.apply_transpose(y, &mut aty);

    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..b.len() {
        let r = ax[i] - b[i];
        primal = primal.max(match senses[i] {
            Sense::Le => r.max(0.0),
            Sense::Ge => (-r).max(0.0),
            Sense::Eq => r.abs(),
        });
        dual = dual.max(match senses[i] {
            Sense::Le => y[i].max(0.0),
            Sense::Ge => (-y[i]).max(0.0),
            Sense::Eq => 0.0,
        });
        if senses[i] != Sense::Eq {
            comp = comp.max((y[i] * r).abs());
        }
    }
    for j in 0..c.len() {
        let red = c[j] - aty[j];
        match bounds[j] {
            VarBound::NonNegative => {
                primal = primal.max((-x[j]).max(0.0));
                dual = dual.max((-red).max(0.0));
                comp = comp.max((x[j] * red).abs());
            }
            VarBound::Free => dual = dual.max(red.abs()),
        }
    }
    let p = dot(c, x);
    let d = dot(b, y);
    Diagnostics {
        primal_residual: primal,
        dual_residual: dual,
        primal_objective: p,
        dual_objective: d,
        relative_gap: (p - d).abs() / (1.0 + p.abs() + d.abs()),
        complementary_slackness: comp,
    }
}
