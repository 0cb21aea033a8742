//! Config-driven experiment runners: single-instance demos, noise sweeps,
//! certificate studies and bound tables.
//!
//! Every random draw is derived from the master seed by [`seed::derive`]
//! along the path `(r, trial)`, so the positive and signed arms and every
//! noise level of a sweep see the same supports, amplitude draws and noise
//! direction.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certificates::{minimal_separation_search, theorem_bound, SearchOptions, SearchStep, TheoremBound};
use crate::error::{invalid, Result};
use crate::grid::{IndexRange, Rect};
use crate::kernels::{verify_admissibility, AdmissibilityReport, Kernel, Kernel2D, KernelFamily};
use crate::linprog::{LpStatus, SplittingOptions};
use crate::measurement::{write_json, Measurement, Measurement2d, NoiseFamily};
use crate::par::{self, Execution};
use crate::recovery::{recover, recover_2d, Backend, RecoveryOptions, RecoveryProblem, RecoveryProblem2d, RecoveryReport};
use crate::seed::{self, stream};
use crate::signals::{draw_amplitudes, generate_regular_support, generate_regular_support_2d, RegularityParams, SpikeTrain, SpikeTrain2D};

/// Fraction of failed trials above which an aggregate cell is flagged.
pub const FAILURE_FLAG_FRACTION: f64 = 0.1;

/// Grid density and extent used by the admissibility runner.
pub const ADMISSIBILITY_DENSITY: usize = 200;
pub const ADMISSIBILITY_EXTENT: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelFamily,
    pub sigma: f64,
    /// 1 or 2.
    pub dimension: usize,
    /// Grid density: samples at `k / N`.
    #[serde(rename = "N")]
    pub n: usize,
    /// Signal window `[lo, hi]` in `t` units; square in 2D.
    pub window: [f64; 2],
    /// Rayleigh regularity values; demos use the first.
    pub r: Vec<usize>,
    pub nu: f64,
    /// Noise levels; demos use the first.
    pub deltas: Vec<f64>,
    pub trials: usize,
    pub spikes: usize,
    /// Amplitude standard deviation.
    pub sd: f64,
    pub seed: u64,
    pub backend: Backend,
    /// Programs to run: `true` is the non-negative program.
    pub positivity: Vec<bool>,
    pub noise: NoiseFamily,
    pub solver: RecoveryOptions,
    pub execution: Execution,
    /// Kernels for the certificate study and admissibility runs.
    pub study_kernels: Vec<KernelFamily>,
    pub search: SearchOptions,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::demo1d()
    }
}

impl ExperimentConfig {
    /// Cauchy `sigma = 0.1`, `N = 100` on `[-1, 1]`, `r = 2`, `nu = 0.5`,
    /// 8 spikes with SD 10 and `delta = 75`.
    pub fn demo1d() -> Self {
        Self {
            kernel: KernelFamily::Cauchy,
            sigma: 0.1,
            dimension: 1,
            n: 100,
            window: [-1.0, 1.0],
            r: vec![2],
            nu: 0.5,
            deltas: vec![75.0],
            trials: 1,
            spikes: 8,
            sd: 10.0,
            seed: 0,
            backend: Backend::Simplex,
            positivity: vec![true],
            noise: NoiseFamily::Normal,
            solver: RecoveryOptions::default(),
            execution: Execution::Parallel,
            study_kernels: vec![KernelFamily::Gaussian, KernelFamily::Cauchy],
            search: SearchOptions::default(),
            out: None,
        }
    }

    /// Cauchy `sigma = 0.1` on a 64 x 64 grid at `N = 32`, `r = 2`,
    /// `nu = 0.8`, 6 spikes, `delta = 400`, solved by splitting with a
    /// fixed iteration budget.
    pub fn demo2d() -> Self {
        Self {
            dimension: 2,
            n: 32,
            window: [-1.0, 31.0 / 32.0],
            nu: 0.8,
            deltas: vec![400.0],
            spikes: 6,
            backend: Backend::Splitting,
            solver: RecoveryOptions { splitting: splitting_2d(), ..RecoveryOptions::default() },
            ..Self::demo1d()
        }
    }

    /// Paired positive/signed sweep at `r = 2`, 50 trials per noise level.
    pub fn sweep() -> Self {
        Self { deltas: vec![0.0, 25.0, 50.0, 75.0, 100.0, 150.0, 200.0], trials: 50, positivity: vec![true, false], ..Self::demo1d() }
    }

    /// Merges a JSON object over this config; nested objects merge
    /// recursively and absent keys keep their current values.
    pub fn overlay(&self, patch: &Value) -> Result<Self> {
        if !patch.is_object() {
            return Err(invalid("config must be a JSON object"));
        }
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, patch);
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(base: &Self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        base.overlay(&serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.dimension != 1 && self.dimension != 2 {
            return Err(invalid(format!("dimension must be 1 or 2, got {}", self.dimension)));
        }
        if self.n == 0 {
            return Err(invalid("N must be at least 1"));
        }
        if !(self.window[0] <= self.window[1]) {
            return Err(invalid(format!("empty window [{}, {}]", self.window[0], self.window[1])));
        }
        if self.r.is_empty() || self.r.contains(&0) {
            return Err(invalid("r values must be a nonempty list of positive integers"));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(invalid(format!("nu must be positive, got {}", self.nu)));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(invalid("deltas must be a nonempty list of finite values >= 0"));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.spikes == 0 {
            return Err(invalid("spikes must be at least 1"));
        }
        if !(self.sd > 0.0) {
            return Err(invalid(format!("amplitude SD must be positive, got {}", self.sd)));
        }
        if self.positivity.is_empty() {
            return Err(invalid("positivity list is empty"));
        }
        if !(self.solver.tau > 0.0 && self.solver.tau < 1.0) {
            return Err(invalid(format!("threshold fraction must be in (0, 1), got {}", self.solver.tau)));
        }
        Ok(())
    }

    pub fn kernel_1d(&self) -> Result<Kernel> {
        Kernel::new(self.kernel, self.sigma)
    }

    pub fn kernel_2d(&self) -> Result<Kernel2D> {
        Ok(Kernel2D::separable(self.kernel_1d()?))
    }

    pub fn index_window(&self) -> Result<IndexRange> {
        IndexRange::covering(self.window[0], self.window[1], self.n)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Splitting budget for the 2D demo: looser tolerances and an iteration
/// cap. Support localization settles long before the tolerances do.
pub fn splitting_2d() -> SplittingOptions {
    SplittingOptions { feas_tol: 1e-4, gap_tol: 1e-5, max_iter: 20_000, record_history: false, ..SplittingOptions::default() }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// One `(delta, r, positivity)` combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub delta: f64,
    pub r: usize,
    pub positive: bool,
}

/// Seed of trial `trial` at regularity `r`.
pub fn trial_seed(master: u64, r: usize, trial: usize) -> u64 {
    seed::derive(master, &[r as u64, trial as u64])
}

#[derive(Debug, Clone)]
pub struct Instance1d {
    pub truth: SpikeTrain,
    pub measurement: Measurement,
    /// False when the generator placed fewer spikes than requested.
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct Instance2d {
    pub truth: SpikeTrain2D,
    pub measurement: Measurement2d,
    pub complete: bool,
}

pub fn instance_1d(cfg: &ExperimentConfig, cell: Cell, trial: usize) -> Result<Instance1d> {
    let s = trial_seed(cfg.seed, cell.r, trial);
    let window = cfg.index_window()?;
    let params = RegularityParams::new(cfg.nu, cfg.sigma, cell.r)?;
    let support = generate_regular_support(
        &params,
        cfg.spikes,
        cfg.n,
        window,
        Default::default(),
        &mut seed::rng(seed::derive(s, &[stream::SUPPORT])),
    )?;
    let amps = draw_amplitudes(support.indices.len(), cfg.sd, cell.positive, &mut seed::rng(seed::derive(s, &[stream::AMPLITUDES])))?;
    let truth = SpikeTrain::new(cfg.n, window, support.indices, amps, cell.positive)?;
    let measurement = Measurement::synthesize(
        &truth,
        &cfg.kernel_1d()?,
        cell.delta,
        cfg.noise,
        Some(s),
        &mut seed::rng(seed::derive(s, &[stream::NOISE])),
    )?;
    Ok(Instance1d { truth, measurement, complete: support.complete })
}

pub fn instance_2d(cfg: &ExperimentConfig, cell: Cell, trial: usize) -> Result<Instance2d> {
    let s = trial_seed(cfg.seed, cell.r, trial);
    let window = Rect::square(cfg.index_window()?);
    let params = RegularityParams::new(cfg.nu, cfg.sigma, cell.r)?;
    let support = generate_regular_support_2d(
        &params,
        cfg.spikes,
        cfg.n,
        window,
        Default::default(),
        &mut seed::rng(seed::derive(s, &[stream::SUPPORT])),
    )?;
    let amps = draw_amplitudes(support.indices.len(), cfg.sd, cell.positive, &mut seed::rng(seed::derive(s, &[stream::AMPLITUDES])))?;
    let truth = SpikeTrain2D::new(cfg.n, window, support.indices, amps, cell.positive)?;
    let measurement = Measurement2d::synthesize(
        &truth,
        &cfg.kernel_2d()?,
        cell.delta,
        cfg.noise,
        Some(s),
        &mut seed::rng(seed::derive(s, &[stream::NOISE])),
    )?;
    Ok(Instance2d { truth, measurement, complete: support.complete })
}

/// One trial of one cell; a CSV row of `trials.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub delta: f64,
    pub r: usize,
    pub positive: bool,
    pub backend: Backend,
    pub status: Option<LpStatus>,
    /// No usable estimate: an error, an infeasible estimate, or a solver
    /// status other than optimal or iteration limit.
    pub failed: bool,
    pub spikes: usize,
    pub support_complete: bool,
    pub snr_db: Option<f64>,
    pub truth_l1: Option<f64>,
    pub h_l1: Option<f64>,
    pub residual_l1: Option<f64>,
    pub feasible: Option<bool>,
    pub loc_mean: Option<f64>,
    pub loc_hausdorff: Option<f64>,
    /// Largest distance from a true spike to its nearest recovered point.
    pub loc_max_nearest: Option<f64>,
    /// Fraction of true spikes with a recovered point within two grid steps.
    pub frac_within_2: Option<f64>,
    pub recovered: Option<usize>,
    pub iterations: Option<usize>,
    pub runtime_ms: Option<f64>,
    pub error: Option<String>,
}

impl TrialRow {
    fn new(cell: Cell, trial: usize, seed: u64, backend: Backend) -> Self {
        Self {
            trial,
            seed,
            delta: cell.delta,
            r: cell.r,
            positive: cell.positive,
            backend,
            status: None,
            failed: true,
            spikes: 0,
            support_complete: false,
            snr_db: None,
            truth_l1: None,
            h_l1: None,
            residual_l1: None,
            feasible: None,
            loc_mean: None,
            loc_hausdorff: None,
            loc_max_nearest: None,
            frac_within_2: None,
            recovered: None,
            iterations: None,
            runtime_ms: None,
            error: None,
        }
    }

    fn fill(&mut self, report: &RecoveryReport, n: usize) {
        self.status = Some(report.status);
        self.failed = !report.feasible || !matches!(report.status, LpStatus::Optimal | LpStatus::IterationLimit);
        self.truth_l1 = report.truth_l1;
        self.h_l1 = report.h_l1;
        self.residual_l1 = Some(report.residual_l1);
        self.feasible = Some(report.feasible);
        if let Some(l) = &report.localization {
            self.loc_mean = Some(l.mean);
            self.loc_hausdorff = Some(l.hausdorff);
            self.loc_max_nearest = Some(l.nearest.iter().copied().fold(0.0, f64::max));
            self.frac_within_2 = Some(l.fraction_within(2.0 / n as f64));
            self.recovered = Some(l.recovered);
        }
        self.iterations = Some(report.iterations);
        self.runtime_ms = Some(report.runtime_ms);
    }
}

/// Mean and sample standard deviation of one cell over its non-failed trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub delta: f64,
    pub r: usize,
    pub positive: bool,
    pub trials: usize,
    pub failures: usize,
    /// More than [`FAILURE_FLAG_FRACTION`] of the trials failed.
    pub flagged: bool,
    pub loc_mean_mean: Option<f64>,
    pub loc_mean_std: Option<f64>,
    pub h_l1_mean: Option<f64>,
    pub h_l1_std: Option<f64>,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (Some(mean), Some(var.sqrt()))
}

/// Aggregates per cell, in order of first appearance in `rows`.
pub fn aggregate(rows: &[TrialRow]) -> Vec<AggregateRow> {
    let mut cells: Vec<Cell> = Vec::new();
    for row in rows {
        let c = Cell { delta: row.delta, r: row.r, positive: row.positive };
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    cells
        .into_iter()
        .map(|c| {
            let in_cell: Vec<&TrialRow> = rows.iter().filter(|t| t.delta == c.delta && t.r == c.r && t.positive == c.positive).collect();
            let ok: Vec<&&TrialRow> = in_cell.iter().filter(|t| !t.failed).collect();
            let failures = in_cell.len() - ok.len();
            let loc: Vec<f64> = ok.iter().filter_map(|t| t.loc_mean).collect();
            let h: Vec<f64> = ok.iter().filter_map(|t| t.h_l1).collect();
            let (loc_mean_mean, loc_mean_std) = mean_std(&loc);
            let (h_l1_mean, h_l1_std) = mean_std(&h);
            AggregateRow {
                delta: c.delta,
                r: c.r,
                positive: c.positive,
                trials: in_cell.len(),
                failures,
                flagged: failures as f64 > FAILURE_FLAG_FRACTION * in_cell.len() as f64,
                loc_mean_mean,
                loc_mean_std,
                h_l1_mean,
                h_l1_std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl ExperimentResult {
    fn from_rows(config: &ExperimentConfig, trials: Vec<TrialRow>) -> Self {
        let aggregates = aggregate(&trials);
        Self { config: config.clone(), trials, aggregates }
    }

    /// Writes `config.json`, `trials.csv` and `aggregates.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.config.write_json(&dir.join("config.json"))?;
        write_rows(&dir.join("trials.csv"), &self.trials)?;
        write_rows(&dir.join("aggregates.csv"), &self.aggregates)
    }

    pub fn aggregate_for(&self, delta: f64, r: usize, positive: bool) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.delta == delta && a.r == r && a.positive == positive)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn recovery_options(cfg: &ExperimentConfig) -> RecoveryOptions {
    let mut opts = cfg.solver;
    opts.splitting.record_history = false;
    opts
}

fn trial_1d(cfg: &ExperimentConfig, cell: Cell, trial: usize) -> (TrialRow, Option<(Instance1d, RecoveryReport)>) {
    let mut row = TrialRow::new(cell, trial, trial_seed(cfg.seed, cell.r, trial), cfg.backend);
    let attempt = || -> Result<(Instance1d, RecoveryReport)> {
        let inst = instance_1d(cfg, cell, trial)?;
        let problem = RecoveryProblem::new(inst.measurement.clone(), cfg.kernel_1d()?, inst.truth.window, cell.positive, cfg.backend);
        let report = recover(&problem, Some(&inst.truth), &recovery_options(cfg))?;
        Ok((inst, report))
    };
    match attempt() {
        Ok((inst, report)) => {
            row.spikes = inst.truth.len();
            row.support_complete = inst.complete;
            row.snr_db = inst.measurement.snr_db;
            row.fill(&report, cfg.n);
            (row, Some((inst, report)))
        }
        Err(e) => {
            row.error = Some(e.to_string());
            (row, None)
        }
    }
}

fn trial_2d(cfg: &ExperimentConfig, cell: Cell, trial: usize) -> (TrialRow, Option<(Instance2d, RecoveryReport)>) {
    let mut row = TrialRow::new(cell, trial, trial_seed(cfg.seed, cell.r, trial), cfg.backend);
    let attempt = || -> Result<(Instance2d, RecoveryReport)> {
        let inst = instance_2d(cfg, cell, trial)?;
        let problem = RecoveryProblem2d::new(inst.measurement.clone(), cfg.kernel_2d()?, inst.truth.window, cell.positive, cfg.backend);
        let report = recover_2d(&problem, Some(&inst.truth), &recovery_options(cfg))?;
        Ok((inst, report))
    };
    match attempt() {
        Ok((inst, report)) => {
            row.spikes = inst.truth.len();
            row.support_complete = inst.complete;
            row.snr_db = inst.measurement.snr_db;
            row.fill(&report, cfg.n);
            (row, Some((inst, report)))
        }
        Err(e) => {
            row.error = Some(e.to_string());
            (row, None)
        }
    }
}

fn demo_cell(cfg: &ExperimentConfig) -> Cell {
    Cell { delta: cfg.deltas[0], r: cfg.r[0], positive: cfg.positivity[0] }
}

pub struct Demo1d {
    pub result: ExperimentResult,
    pub instance: Option<Instance1d>,
    pub report: Option<RecoveryReport>,
}

impl Demo1d {
    /// Adds `truth.csv`, `measurement.csv`, `estimate.csv` and
    /// `recovery.json` to the [`ExperimentResult`] files.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.result.write(dir)?;
        if let Some(inst) = &self.instance {
            inst.truth.write_csv(&dir.join("truth.csv"))?;
            inst.measurement.write_csv(&dir.join("measurement.csv"))?;
        }
        if let (Some(inst), Some(report)) = (&self.instance, &self.report) {
            let mut w = csv::Writer::from_path(dir.join("estimate.csv"))?;
            w.write_record(["k", "t", "amplitude"])?;
            for (k, v) in inst.truth.window.iter().zip(&report.estimate) {
                w.write_record([k.to_string(), (k as f64 / inst.truth.n as f64).to_string(), v.to_string()])?;
            }
            w.flush()?;
            report.write_json(&dir.join("recovery.json"))?;
        }
        Ok(())
    }
}

/// One 1D instance at the first `r`, `delta` and positivity of `cfg`.
/// Solver failures land in the result row.
pub fn run_demo_1d(cfg: &ExperimentConfig) -> Result<Demo1d> {
    cfg.validate()?;
    if cfg.dimension != 1 {
        return Err(invalid("run_demo_1d needs dimension 1"));
    }
    let (row, out) = trial_1d(cfg, demo_cell(cfg), 0);
    let (instance, report) = out.map_or((None, None), |(i, r)| (Some(i), Some(r)));
    Ok(Demo1d { result: ExperimentResult::from_rows(cfg, vec![row]), instance, report })
}

pub struct Demo2d {
    pub result: ExperimentResult,
    pub instance: Option<Instance2d>,
    pub report: Option<RecoveryReport>,
}

impl Demo2d {
    /// Points of the estimate at or above `tau` times its peak magnitude.
    pub fn recovered_support(&self) -> Vec<((i64, i64), f64)> {
        let (Some(inst), Some(report)) = (&self.instance, &self.report) else {
            return Vec::new();
        };
        let tau = self.result.config.solver.tau;
        let peak = report.estimate.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if peak == 0.0 {
            return Vec::new();
        }
        report
            .estimate
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() >= tau * peak)
            .map(|(i, &v)| (inst.truth.window.index_at(i), v))
            .collect()
    }

    /// Adds `truth.csv`, `measurement.csv`, `recovered.csv` and
    /// `recovery.json` to the [`ExperimentResult`] files.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.result.write(dir)?;
        if let Some(inst) = &self.instance {
            inst.truth.write_csv(&dir.join("truth.csv"))?;
            inst.measurement.write_csv(&dir.join("measurement.csv"))?;
            let n = inst.truth.n as f64;
            let mut w = csv::Writer::from_path(dir.join("recovered.csv"))?;
            w.write_record(["k1", "k2", "t1", "t2", "amplitude"])?;
            for ((a, b), v) in self.recovered_support() {
                w.write_record([a.to_string(), b.to_string(), (a as f64 / n).to_string(), (b as f64 / n).to_string(), v.to_string()])?;
            }
            w.flush()?;
        }
        if let Some(report) = &self.report {
            report.write_json(&dir.join("recovery.json"))?;
        }
        Ok(())
    }
}

pub fn run_demo_2d(cfg: &ExperimentConfig) -> Result<Demo2d> {
    cfg.validate()?;
    if cfg.dimension != 2 {
        return Err(invalid("run_demo_2d needs dimension 2"));
    }
    let (row, out) = trial_2d(cfg, demo_cell(cfg), 0);
    let (instance, report) = out.map_or((None, None), |(i, r)| (Some(i), Some(r)));
    Ok(Demo2d { result: ExperimentResult::from_rows(cfg, vec![row]), instance, report })
}

/// Cells in output order: `r`, then positivity, then `delta`.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &r in &cfg.r {
        for &positive in &cfg.positivity {
            for &delta in &cfg.deltas {
                out.push(Cell { delta, r, positive });
            }
        }
    }
    out
}

/// Runs `trials` instances per cell. Trials run concurrently under
/// [`Execution::Parallel`]; rows come back in cell-then-trial order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let jobs: Vec<(Cell, usize)> = cells(cfg).into_iter().flat_map(|c| (0..cfg.trials).map(move |t| (c, t))).collect();
    let rows = par::map(cfg.execution, &jobs, |&(cell, trial)| match cfg.dimension {
        1 => trial_1d(cfg, cell, trial).0,
        _ => trial_2d(cfg, cell, trial).0,
    });
    Ok(ExperimentResult::from_rows(cfg, rows))
}

/// Per-kernel outcome of the minimal separation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub kernel: String,
    pub sigma: f64,
    pub nu_star: Option<f64>,
    pub margin: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateStudy {
    pub rows: Vec<StudyRow>,
    pub trace: Vec<SearchStep>,
}

impl CertificateStudy {
    /// Writes `certify_summary.csv` and `certify_trace.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_rows(&dir.join("certify_summary.csv"), &self.rows)?;
        write_rows(&dir.join("certify_trace.csv"), &self.trace)
    }

    pub fn nu_star(&self, kernel: KernelFamily) -> Option<f64> {
        self.rows.iter().find(|r| r.kernel == kernel.name()).and_then(|r| r.nu_star)
    }
}

/// Runs the minimal separation search for every kernel in
/// `cfg.study_kernels`; a range exhaustion is recorded, not returned.
pub fn run_certificate_study(cfg: &ExperimentConfig) -> Result<CertificateStudy> {
    if cfg.study_kernels.is_empty() {
        return Err(invalid("no kernels to study"));
    }
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    for &family in &cfg.study_kernels {
        let kernel = Kernel::new(family, cfg.sigma)?;
        match minimal_separation_search(&kernel, &cfg.search, cfg.execution) {
            Ok(s) => {
                rows.push(StudyRow {
                    kernel: s.kernel.clone(),
                    sigma: cfg.sigma,
                    nu_star: Some(s.nu_star),
                    margin: Some(s.margin),
                    error: None,
                });
                trace.extend(s.trace);
            }
            Err(e) => rows.push(StudyRow {
                kernel: family.name().to_string(),
                sigma: cfg.sigma,
                nu_star: None,
                margin: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(CertificateStudy { rows, trace })
}

/// The predicted error bound for every `r` and `delta` of `cfg`.
pub fn run_bound(cfg: &ExperimentConfig) -> Result<Vec<TheoremBound>> {
    cfg.validate()?;
    let kernel = cfg.kernel_1d()?;
    let mut out = Vec::new();
    for &r in &cfg.r {
        for &delta in &cfg.deltas {
            out.push(theorem_bound(&kernel, r, cfg.nu, cfg.n, delta)?);
        }
    }
    Ok(out)
}

pub fn write_bound_csv(path: &Path, rows: &[TheoremBound]) -> Result<()> {
    write_rows(path, rows)
}

/// Admissibility reports for every kernel in `cfg.study_kernels` at `cfg.sigma`.
pub fn run_admissibility(cfg: &ExperimentConfig) -> Result<Vec<AdmissibilityReport>> {
    cfg.study_kernels
        .iter()
        .map(|&f| verify_admissibility(&Kernel::new(f, cfg.sigma)?, ADMISSIBILITY_DENSITY, ADMISSIBILITY_EXTENT))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_merges_nested_keys() {
        let base = ExperimentConfig::demo1d();
        let cfg = base.overlay(&serde_json::json!({"nu": 0.7, "solver": {"tau": 0.1}})).unwrap();
        assert_eq!(cfg.nu, 0.7);
        assert_eq!(cfg.solver.tau, 0.1);
        assert_eq!(cfg.solver.simplex, base.solver.simplex);
        assert!(base.overlay(&serde_json::json!({"trials": 0})).is_err());
        assert!(base.overlay(&serde_json::json!({"no_such_key": 1})).is_err());
    }

    #[test]
    fn presets_validate() {
        for cfg in [ExperimentConfig::demo1d(), ExperimentConfig::demo2d(), ExperimentConfig::sweep()] {
            cfg.validate().unwrap();
        }
        assert_eq!(ExperimentConfig::demo2d().index_window().unwrap().len(), 64);
        assert_eq!(ExperimentConfig::demo1d().index_window().unwrap().len(), 201);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert_eq!(s, Some(1.0));
        assert_eq!(mean_std(&[]), (None, None));
    }
}
