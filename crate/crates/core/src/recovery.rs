//! The l1 recovery programs for 1D and 2D pulse streams, solver dispatch,
//! and support-localization metrics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{IndexRange, Rect};
use crate::kernels::{Kernel, Kernel2D};
use crate::linprog::{
    solve_l1_fidelity, solve_simplex, Diagnostics, LinearOperator, LinearProgram, LpSolution, LpStatus, Sense, SimplexOptions,
    SplittingOptions, VarBound,
};
use crate::measurement::{l1, ApplyMode, ConvolutionOperator, ConvolutionOperator2d, Measurement, Measurement2d};
use crate::signals::{SpikeTrain, SpikeTrain2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Simplex,
    Splitting,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Simplex => "simplex",
            Backend::Splitting => "splitting",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex" => Ok(Backend::Simplex),
            "splitting" => Ok(Backend::Splitting),
            other => Err(invalid(format!("unknown backend '{other}'"))),
        }
    }
}

/// How the residual constraint `|y - G x|_1 <= delta` is linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpForm {
    /// One slack `s_i >= |y_i - (G x)_i|` per measurement via two
    /// inequalities, plus `sum s <= delta`.
    SlackPair,
    /// `G x + u - v = y`, `u, v >= 0`, `sum (u + v) <= delta`.
    SplitResidual,
}

/// Column layout of an assembled recovery LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub signed: bool,
    pub form: LpForm,
}

impl Layout {
    fn amplitude_cols(&self) -> usize {
        if self.signed {
            2 * self.n
        } else {
            self.n
        }
    }

    pub fn cols(&self) -> usize {
        self.amplitude_cols()
            + match self.form {
                LpForm::SlackPair => self.m,
                LpForm::SplitResidual => 2 * self.m,
            }
    }

    pub fn rows(&self) -> usize {
        match self.form {
            LpForm::SlackPair => 2 * self.m + 1,
            LpForm::SplitResidual => self.m + 1,
        }
    }

    /// Amplitude estimate from an LP solution vector.
    pub fn estimate(&self, z: &[f64]) -> Vec<f64> {
        if self.signed {
            (0..self.n).map(|i| z[i] - z[self.n + i]).collect()
        } else {
            z[..self.n].to_vec()
        }
    }
}

/// Convolution in either dimension, as seen by the recovery programs.
trait Conv: LinearOperator {
    fn entries(&self) -> Vec<(usize, usize, f64)>;
    fn as_operator(&self) -> &dyn LinearOperator;
}

impl Conv for ConvolutionOperator {
    fn entries(&self) -> Vec<(usize, usize, f64)> {
        ConvolutionOperator::entries(self)
    }
    fn as_operator(&self) -> &dyn LinearOperator {
        self
    }
}

impl Conv for ConvolutionOperator2d {
    fn entries(&self) -> Vec<(usize, usize, f64)> {
        ConvolutionOperator2d::entries(self)
    }
    fn as_operator(&self) -> &dyn LinearOperator {
        self
    }
}

fn layout_for(g: &dyn Conv, positive: bool, form: LpForm) -> Layout {
    Layout { n: g.cols(), m: g.rows(), signed: !positive, form }
}

fn assemble(g: &dyn Conv, y: &[f64], positive: bool, delta: f64, form: LpForm) -> Result<(LinearProgram, Layout)> {
    if !(delta >= 0.0) {
        return Err(invalid(format!("delta must be >= 0, got {delta}")));
    }
    if y.len() != g.rows() {
        return Err(Error::Dimension(format!("{} measurements for an operator with {} rows", y.len(), g.rows())));
    }
    let layout = layout_for(g, positive, form);
    let Layout { n, m, signed, .. } = layout;
    let off = layout.amplitude_cols();
    let entries = g.entries();
    let mut trip = Vec::with_capacity(entries.len() * if signed { 4 } else { 2 } + 4 * m);
    let mut c = vec![0.0; layout.cols()];
    c[..off].iter_mut().for_each(|v| *v = 1.0);
    let bounds = vec![VarBound::NonNegative; layout.cols()];

    let (b, senses) = match form {
        LpForm::SlackPair => {
            // Row i: G x + s_i >= y_i; row m + i: -G x + s_i >= -y_i.
            for &(r, col, v) in &entries {
                trip.push((r, col, v));
                trip.push((m + r, col, -v));
                if signed {
                    trip.push((r, n + col, -v));
                    trip.push((m + r, n + col, v));
                }
            }
            for i in 0..m {
                trip.push((i, off + i, 1.0));
                trip.push((m + i, off + i, 1.0));
                trip.push((2 * m, off + i, 1.0));
            }
            let mut b: Vec<f64> = y.to_vec();
            b.extend(y.iter().map(|v| -v));
            b.push(delta);
            let mut senses = vec![Sense::Ge; 2 * m];
            senses.push(Sense::Le);
            (b, senses)
        }
        LpForm::SplitResidual => {
            for &(r, col, v) in &entries {
                trip.push((r, col, v));
                if signed {
                    trip.push((r, n + col, -v));
                }
            }
            for i in 0..m {
                trip.push((i, off + i, 1.0));
                trip.push((i, off + m + i, -1.0));
                trip.push((m, off + i, 1.0));
                trip.push((m, off + m + i, 1.0));
            }
            let mut b = y.to_vec();
            b.push(delta);
            let mut senses = vec![Sense::Eq; m];
            senses.push(Sense::Le);
            (b, senses)
        }
    };
    let lp = LinearProgram::from_triplets((layout.rows(), layout.cols()), &trip, c, b, senses, bounds)?;
    Ok((lp, layout))
}

/// Parameters of the 1D program `min |x|_1 s.t. |y - g * x|_1 <= delta`
/// (and `x >= 0` when `positive`).
#[derive(Debug, Clone)]
pub struct RecoveryProblem {
    pub measurement: Measurement,
    pub kernel: Kernel,
    pub positive: bool,
    /// Budget handed to the solver.
    pub delta: f64,
    pub window: IndexRange,
    pub backend: Backend,
    pub form: LpForm,
}

impl RecoveryProblem {
    /// Problem over `window` with the oracle budget `measurement.delta`.
    pub fn new(measurement: Measurement, kernel: Kernel, window: IndexRange, positive: bool, backend: Backend) -> Self {
        Self { delta: measurement.delta, measurement, kernel, positive, window, backend, form: LpForm::SplitResidual }
    }

    pub fn operator(&self) -> Result<ConvolutionOperator> {
        if self.kernel.sigma != self.measurement.sigma {
            return Err(invalid("kernel scale differs from the measurement's"));
        }
        ConvolutionOperator::new(&self.kernel, self.measurement.n, self.window, self.measurement.window, ApplyMode::Stencil)
    }
}

/// Explicit LP for a 1D recovery problem.
pub fn assemble_lp(problem: &RecoveryProblem) -> Result<(LinearProgram, Layout)> {
    let g = problem.operator()?;
    assemble(&g, &problem.measurement.y, problem.positive, problem.delta, problem.form)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub simplex: SimplexOptions,
    pub splitting: SplittingOptions,
    /// Support threshold as a fraction of the largest amplitude.
    pub tau: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self { simplex: SimplexOptions::default(), splitting: SplittingOptions::default(), tau: DEFAULT_TAU }
    }
}

pub const DEFAULT_TAU: f64 = 0.05;

/// Support-localization metrics; distances in `t` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    /// Mean over true spikes of the distance to the nearest recovered point.
    pub mean: f64,
    /// Symmetric Hausdorff distance between the two supports.
    pub hausdorff: f64,
    /// Per true spike: distance to its nearest recovered point.
    pub nearest: Vec<f64>,
    /// Number of recovered support points.
    pub recovered: usize,
    /// The recovered support was empty; metrics hold the window diameter.
    pub empty: bool,
}

impl Localization {
    /// Fraction of true spikes with a recovered point within `dist`.
    pub fn fraction_within(&self, dist: f64) -> f64 {
        if self.nearest.is_empty() {
            return 1.0;
        }
        let tol = 1e-9 * dist.abs().max(1e-12);
        self.nearest.iter().filter(|&&d| d <= dist + tol).count() as f64 / self.nearest.len() as f64
    }
}

fn support_threshold(estimate: &[f64], tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid(format!("threshold fraction must be in (0, 1), got {tau}")));
    }
    let peak = estimate.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return Ok(Vec::new());
    }
    Ok((0..estimate.len()).filter(|&i| estimate[i].abs() >= tau * peak).collect())
}

fn localization_from<P: Copy>(truth: &[P], rec: &[P], dist: impl Fn(P, P) -> f64, diameter: f64) -> Localization {
    if rec.is_empty() {
        return Localization { mean: diameter, hausdorff: diameter, nearest: vec![diameter; truth.len()], recovered: 0, empty: true };
    }
    // Only distances are reported, so equidistant candidates are interchangeable.
    let nearest_in = |p: P, set: &[P]| set.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min);
    let nearest: Vec<f64> = truth.iter().map(|&p| nearest_in(p, rec)).collect();
    let mean = if nearest.is_empty() { 0.0 } else { nearest.iter().sum::<f64>() / nearest.len() as f64 };
    let forward = nearest.iter().copied().fold(0.0, f64::max);
    let backward = if truth.is_empty() { diameter } else { rec.iter().map(|&q| nearest_in(q, truth)).fold(0.0, f64::max) };
    Localization { mean, hausdorff: forward.max(backward), nearest, recovered: rec.len(), empty: false }
}

/// Localization error of a dense 1D estimate over `window` against the
/// true spikes. The same relative threshold `tau` selects the support of
/// both the estimate and the truth.
pub fn localization_error(estimate: &[f64], window: IndexRange, n: usize, truth: &SpikeTrain, tau: f64) -> Result<Localization> {
    if estimate.len() != window.len() {
        return Err(Error::Dimension("estimate does not cover the window".into()));
    }
    let truth: Vec<i64> = support_threshold(&truth.amplitudes, tau)?.into_iter().map(|i| truth.indices[i]).collect();
    let truth = truth.as_slice();
    let rec: Vec<i64> = support_threshold(estimate, tau)?.into_iter().map(|i| window.index_at(i)).collect();
    let nf = n as f64;
    Ok(localization_from(truth, &rec, |a, b| (a - b).abs() as f64 / nf, (window.len() - 1) as f64 / nf))
}

/// 2D localization error with sup-norm distances.
pub fn localization_error_2d(estimate: &[f64], window: Rect, n: usize, truth: &SpikeTrain2D, tau: f64) -> Result<Localization> {
    if estimate.len() != window.len() {
        return Err(Error::Dimension("estimate does not cover the window".into()));
    }
    let truth: Vec<(i64, i64)> = support_threshold(&truth.amplitudes, tau)?.into_iter().map(|i| truth.indices[i]).collect();
    let truth = truth.as_slice();
    let rec: Vec<(i64, i64)> = support_threshold(estimate, tau)?.into_iter().map(|i| window.index_at(i)).collect();
    let nf = n as f64;
    let diameter = (window.rows.len().max(window.cols.len()) - 1) as f64 / nf;
    Ok(localization_from(truth, &rec, |a, b| (a.0 - b.0).abs().max((a.1 - b.1).abs()) as f64 / nf, diameter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub backend: Backend,
    pub status: LpStatus,
    pub positive: bool,
    pub delta: f64,
    /// `|y - g * x_hat|_1`.
    pub residual_l1: f64,
    /// `residual_l1 <= delta + feasibility_slack`.
    pub feasible: bool,
    pub feasibility_slack: f64,
    pub objective: f64,
    pub estimate: Vec<f64>,
    pub truth_l1: Option<f64>,
    /// `|x_hat - x|_1`.
    pub h_l1: Option<f64>,
    pub localization: Option<Localization>,
    pub iterations: usize,
    pub diagnostics: Diagnostics,
    pub runtime_ms: f64,
}

/// Flat summary of a report, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub backend: Backend,
    pub status: LpStatus,
    pub positive: bool,
    pub delta: f64,
    pub residual_l1: f64,
    pub feasible: bool,
    pub objective: f64,
    pub truth_l1: Option<f64>,
    pub h_l1: Option<f64>,
    pub loc_mean: Option<f64>,
    pub loc_hausdorff: Option<f64>,
    pub empty_support: Option<bool>,
    pub iterations: usize,
    pub runtime_ms: f64,
}

impl RecoveryReport {
    pub fn summary(&self) -> RecoverySummary {
        RecoverySummary {
            backend: self.backend,
            status: self.status,
            positive: self.positive,
            delta: self.delta,
            residual_l1: self.residual_l1,
            feasible: self.feasible,
            objective: self.objective,
            truth_l1: self.truth_l1,
            h_l1: self.h_l1,
            loc_mean: self.localization.as_ref().map(|l| l.mean),
            loc_hausdorff: self.localization.as_ref().map(|l| l.hausdorff),
            empty_support: self.localization.as_ref().map(|l| l.empty),
            iterations: self.iterations,
            runtime_ms: self.runtime_ms,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::measurement::write_json(path, self)
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.serialize(self.summary())?;
        w.flush()?;
        Ok(())
    }
}

fn solve(
    g: &dyn Conv,
    y: &[f64],
    positive: bool,
    delta: f64,
    form: LpForm,
    backend: Backend,
    opts: &RecoveryOptions,
) -> Result<(LpSolution, Vec<f64>, f64)> {
    match backend {
        Backend::Simplex => {
            let (lp, layout) = assemble(g, y, positive, delta, form)?;
            let sol = solve_simplex(&lp, &opts.simplex)?;
            let estimate = layout.estimate(&sol.x);
            Ok((sol, estimate, 1e-6))
        }
        Backend::Splitting => {
            let sol = solve_l1_fidelity(g.as_operator(), y, delta, positive, &opts.splitting)?;
            let estimate = sol.x.clone();
            // The solver stops once the excess over delta is within tolerance.
            let slack = opts.splitting.feas_tol * (1.0 + l1(y));
            Ok((sol, estimate, slack.max(1e-9)))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn report(
    g: &dyn Conv,
    y: &[f64],
    positive: bool,
    delta: f64,
    backend: Backend,
    sol: LpSolution,
    mut estimate: Vec<f64>,
    slack: f64,
    truth: Option<Vec<f64>>,
    localization: impl FnOnce(&[f64]) -> Result<Option<Localization>>,
    started: Instant,
) -> Result<RecoveryReport> {
    if positive {
        estimate.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mut gx = vec![0.0; g.rows()];
    g.apply(&estimate, &mut gx);
    let residual_l1: f64 = y.iter().zip(&gx).map(|(a, b)| (a - b).abs()).sum();
    let objective = l1(&estimate);
    let (truth_l1, h_l1) = match &truth {
        Some(t) => (Some(l1(t)), Some(t.iter().zip(&estimate).map(|(a, b)| (a - b).abs()).sum())),
        None => (None, None),
    };
    let localization = localization(&estimate)?;
    Ok(RecoveryReport {
        backend,
        status: sol.status,
        positive,
        delta,
        residual_l1,
        feasible: residual_l1 <= delta + slack,
        feasibility_slack: slack,
        objective,
        estimate,
        truth_l1,
        h_l1,
        localization,
        iterations: sol.iterations,
        diagnostics: sol.diagnostics,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Solves the 1D program and, given the truth, scores the estimate.
pub fn recover(problem: &RecoveryProblem, truth: Option<&SpikeTrain>, opts: &RecoveryOptions) -> Result<RecoveryReport> {
    let started = Instant::now();
    let g = problem.operator()?;
    if let Some(t) = truth {
        if t.window != problem.window || t.n != problem.measurement.n {
            return Err(Error::Dimension("ground truth lives on a different grid".into()));
        }
    }
    let y = &problem.measurement.y;
    let (sol, estimate, slack) = solve(&g, y, problem.positive, problem.delta, problem.form, problem.backend, opts)?;
    report(
        &g,
        y,
        problem.positive,
        problem.delta,
        problem.backend,
        sol,
        estimate,
        slack,
        truth.map(|t| t.to_dense()),
        |est| truth.map(|t| localization_error(est, problem.window, problem.measurement.n, t, opts.tau)).transpose(),
        started,
    )
}

/// The 2D program over a rectangular grid window.
#[derive(Debug, Clone)]
pub struct RecoveryProblem2d {
    pub measurement: Measurement2d,
    pub kernel: Kernel2D,
    pub positive: bool,
    pub delta: f64,
    pub window: Rect,
    pub backend: Backend,
}

impl RecoveryProblem2d {
    pub fn new(measurement: Measurement2d, kernel: Kernel2D, window: Rect, positive: bool, backend: Backend) -> Self {
        Self { delta: measurement.delta, measurement, kernel, positive, window, backend }
    }

    pub fn operator(&self) -> Result<ConvolutionOperator2d> {
        if self.kernel.sigma() != self.measurement.sigma {
            return Err(invalid("kernel scale differs from the measurement's"));
        }
        ConvolutionOperator2d::new(&self.kernel, self.measurement.n, self.window, self.measurement.window, ApplyMode::Separable)
    }
}

pub fn assemble_lp_2d(problem: &RecoveryProblem2d, form: LpForm) -> Result<(LinearProgram, Layout)> {
    let g = problem.operator()?;
    assemble(&g, &problem.measurement.y, problem.positive, problem.delta, form)
}

pub fn recover_2d(problem: &RecoveryProblem2d, truth: Option<&SpikeTrain2D>, opts: &RecoveryOptions) -> Result<RecoveryReport> {
    let started = Instant::now();
    let g = problem.operator()?;
    if let Some(t) = truth {
        if t.window != problem.window || t.n != problem.measurement.n {
            return Err(Error::Dimension("ground truth lives on a different grid".into()));
        }
    }
    let y = &problem.measurement.y;
    let (sol, estimate, slack) = solve(&g, y, problem.positive, problem.delta, LpForm::SplitResidual, problem.backend, opts)?;
    report(
        &g,
        y,
        problem.positive,
        problem.delta,
        problem.backend,
        sol,
        estimate,
        slack,
        truth.map(|t| t.to_dense()),
        |est| truth.map(|t| localization_error_2d(est, problem.window, problem.measurement.n, t, opts.tau)).transpose(),
        started,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::NoiseFamily;
    use crate::seed;

    fn single_spike_problem(delta: f64, backend: Backend) -> (RecoveryProblem, SpikeTrain) {
        let k = Kernel::cauchy(0.1).unwrap();
        let w = IndexRange::symmetric(100);
        let x = SpikeTrain::new(100, w, vec![13], vec![4.0], true).unwrap();
        let m = Measurement::synthesize(&x, &k, delta, NoiseFamily::Normal, None, &mut seed::rng(1)).unwrap();
        (RecoveryProblem::new(m, k, w, true, backend), x)
    }

    #[test]
    fn lp_shapes() {
        let (mut p, _) = single_spike_problem(1.0, Backend::Simplex);
        let (n, m) = (201, 301);
        p.form = LpForm::SlackPair;
        let (lp, _) = assemble_lp(&p).unwrap();
        assert_eq!((lp.cols(), lp.rows()), (n + m, 2 * m + 1));
        p.positive = false;
        let (lp, _) = assemble_lp(&p).unwrap();
        assert_eq!(lp.cols(), 2 * n + m);
        p.form = LpForm::SplitResidual;
        let (lp, _) = assemble_lp(&p).unwrap();
        assert_eq!((lp.cols(), lp.rows()), (2 * n + 2 * m, m + 1));
    }

    #[test]
    fn single_spike_is_exact() {
        for backend in [Backend::Simplex, Backend::Splitting] {
            let (p, x) = single_spike_problem(0.0, backend);
            let r = recover(&p, Some(&x), &RecoveryOptions::default()).unwrap();
            assert_eq!(r.status, LpStatus::Optimal, "{backend}");
            assert!(r.h_l1.unwrap() <= 1e-6 * 4.0, "{backend}: {:?}", r.h_l1);
            assert_eq!(r.localization.unwrap().mean, 0.0);
        }
    }

    #[test]
    fn metrics() {
        let w = IndexRange::symmetric(10);
        let mut est = vec![0.0; w.len()];
        est[w.offset(3).unwrap()] = 2.0;
        est[w.offset(-4).unwrap()] = 1.0;
        let train = |idx: Vec<i64>, amp: Vec<f64>| SpikeTrain::new(100, w, idx, amp, true).unwrap();
        let l = localization_error(&est, w, 100, &train(vec![3, -4], vec![1.0, 1.0]), 0.05).unwrap();
        assert_eq!(l.mean, 0.0);
        let l = localization_error(&est, w, 100, &train(vec![2, -5], vec![1.0, 1.0]), 0.05).unwrap();
        assert!((l.mean - 0.01).abs() < 1e-15);
        assert!((l.hausdorff - 0.01).abs() < 1e-15);
        // A true spike below the threshold is not part of the true support.
        let l = localization_error(&est, w, 100, &train(vec![-4, 3, 10], vec![1.0, 1.0, 0.01]), 0.05).unwrap();
        assert_eq!(l.mean, 0.0);
        let l = localization_error(&vec![0.0; w.len()], w, 100, &train(vec![0], vec![1.0]), 0.05).unwrap();
        assert!(l.empty);
        assert!((l.mean - 0.2).abs() < 1e-15);
        assert!(localization_error(&est, w, 100, &train(vec![0], vec![1.0]), 1.5).is_err());
    }
}
