//! Grid-supported spike trains, Rayleigh regularity tests and random
//! regular support generation.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{IndexRange, Rect};

/// Relative slack used when comparing distances to `d`, so that points at
/// exactly distance `d` count as separated.
const SEPARATION_SLACK: f64 = 1e-9;

fn below(dist: f64, d: f64) -> bool {
    dist < d - SEPARATION_SLACK * d.max(1.0)
}

/// Spike train on the grid `k / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    #[serde(rename = "N")]
    pub n: usize,
    pub window: IndexRange,
    pub indices: Vec<i64>,
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub positive: bool,
}

impl SpikeTrain {
    pub fn new(n: usize, window: IndexRange, indices: Vec<i64>, amplitudes: Vec<f64>, positive: bool) -> Result<Self> {
        if n == 0 {
            return Err(invalid("N must be positive"));
        }
        if indices.len() != amplitudes.len() {
            return Err(Error::Dimension(format!("{} indices but {} amplitudes", indices.len(), amplitudes.len())));
        }
        let mut pairs: Vec<(i64, f64)> = indices.into_iter().zip(amplitudes).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("support indices must be unique"));
        }
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !window.contains(*k)) {
            return Err(invalid(format!("support index {k} outside window {}..={}", window.start, window.end)));
        }
        if positive && pairs.iter().any(|(_, c)| !(*c > 0.0)) {
            return Err(invalid("positive train requires every amplitude > 0"));
        }
        let (indices, amplitudes) = pairs.into_iter().unzip();
        Ok(Self { n, window, indices, amplitudes, positive })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.indices.iter().map(|&k| k as f64 / self.n as f64).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.abs()).sum()
    }

    /// Dense amplitudes over the window.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.window.len()];
        for (&k, &c) in self.indices.iter().zip(&self.amplitudes) {
            x[self.window.offset(k).expect("validated on construction")] = c;
        }
        x
    }

    /// Shifts the support by `steps` grid points, keeping the window.
    pub fn translated(&self, steps: i64) -> Result<Self> {
        Self::new(self.n, self.window, self.indices.iter().map(|k| k + steps).collect(), self.amplitudes.clone(), self.positive)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "t", "c"])?;
        for (&k, &c) in self.indices.iter().zip(&self.amplitudes) {
            w.write_record([k.to_string(), fmt_f64(k as f64 / self.n as f64), fmt_f64(c)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Shortest round-trip representation, used for all CSV output.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Spike train on the 2D grid `(k1 / N, k2 / N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain2D {
    #[serde(rename = "N")]
    pub n: usize,
    pub window: Rect,
    pub indices: Vec<(i64, i64)>,
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub positive: bool,
}

impl SpikeTrain2D {
    pub fn new(n: usize, window: Rect, indices: Vec<(i64, i64)>, amplitudes: Vec<f64>, positive: bool) -> Result<Self> {
        if n == 0 {
            return Err(invalid("N must be positive"));
        }
        if indices.len() != amplitudes.len() {
            return Err(Error::Dimension(format!("{} indices but {} amplitudes", indices.len(), amplitudes.len())));
        }
        let mut pairs: Vec<((i64, i64), f64)> = indices.into_iter().zip(amplitudes).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("support index pairs must be unique"));
        }
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !window.contains(*k)) {
            return Err(invalid(format!("support index {k:?} outside window")));
        }
        if positive && pairs.iter().any(|(_, c)| !(*c > 0.0)) {
            return Err(invalid("positive train requires every amplitude > 0"));
        }
        let (indices, amplitudes) = pairs.into_iter().unzip();
        Ok(Self { n, window, indices, amplitudes, positive })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.n as f64;
        self.indices.iter().map(|&(a, b)| (a as f64 / n, b as f64 / n)).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.abs()).sum()
    }

    /// Dense row-major amplitudes over the window.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.window.len()];
        for (&k, &c) in self.indices.iter().zip(&self.amplitudes) {
            x[self.window.offset(k).expect("validated on construction")] = c;
        }
        x
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.n as f64;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k1", "k2", "t1", "t2", "c"])?;
        for (&(a, b), &c) in self.indices.iter().zip(&self.amplitudes) {
            w.write_record([a.to_string(), b.to_string(), fmt_f64(a as f64 / n), fmt_f64(b as f64 / n), fmt_f64(c)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Rayleigh-regularity parameters with `d = nu * sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityParams {
    pub d: f64,
    pub r: usize,
    pub nu: f64,
    pub sigma: f64,
}

impl RegularityParams {
    pub fn new(nu: f64, sigma: f64, r: usize) -> Result<Self> {
        if !(nu > 0.0) || !(sigma > 0.0) {
            return Err(invalid(format!("nu and sigma must be positive, got {nu}, {sigma}")));
        }
        if r == 0 {
            return Err(invalid("r must be at least 1"));
        }
        Ok(Self { d: nu * sigma, r, nu, sigma })
    }
}

/// Largest number of points inside any open interval of length `d`.
pub fn rayleigh_regularity_1d(support: &[f64], d: f64) -> usize {
    let mut t = support.to_vec();
    t.sort_by(f64::total_cmp);
    let mut best = 0;
    let mut hi = 0;
    for lo in 0..t.len() {
        hi = hi.max(lo);
        while hi + 1 < t.len() && below(t[hi + 1] - t[lo], d) {
            hi += 1;
        }
        best = best.max(hi + 1 - lo);
    }
    best
}

/// Largest number of points inside any open `d x d` square.
pub fn max_square_count_2d(points: &[(f64, f64)], d: f64) -> usize {
    let mut best = 0;
    for a in points {
        for b in points {
            let count = points.iter().filter(|p| p.0 >= a.0 && below(p.0 - a.0, d) && p.1 >= b.1 && below(p.1 - b.1, d)).count();
            best = best.max(count);
        }
    }
    best
}

fn linf(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Maximum support size for the exact decomposition search.
pub const EXACT_DECOMPOSITION_CAP: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecompositionMode {
    Exact,
    Greedy,
    /// Exact up to the cap, greedy beyond.
    Auto,
}

/// Partition of a 2D support into separated subsets, by point index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub subsets: Vec<Vec<usize>>,
    pub success: bool,
    /// True when a failure is a proof that no decomposition exists.
    pub exhaustive: bool,
}

impl Decomposition {
    /// Re-checks disjointness, coverage and per-subset separation.
    pub fn validate(&self, points: &[(f64, f64)], d: f64) -> bool {
        let mut seen = vec![false; points.len()];
        for s in &self.subsets {
            for &i in s {
                if i >= points.len() || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
            for (x, &i) in s.iter().enumerate() {
                if s[x + 1..].iter().any(|&j| below(linf(points[i], points[j]), d)) {
                    return false;
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Splits `support` into at most `r` subsets whose points are pairwise at
/// least `d` apart in the sup norm (a graph colouring of the conflict
/// graph).
pub fn decompose_2d(support: &[(f64, f64)], d: f64, r: usize, mode: DecompositionMode) -> Result<Decomposition> {
    if !(d > 0.0) || r == 0 {
        return Err(invalid(format!("need d > 0 and r >= 1, got d={d}, r={r}")));
    }
    let n = support.len();
    let exact = match mode {
        DecompositionMode::Exact if n > EXACT_DECOMPOSITION_CAP => {
            return Err(Error::CapExceeded { cap: EXACT_DECOMPOSITION_CAP, got: n });
        }
        DecompositionMode::Exact => true,
        DecompositionMode::Greedy => false,
        DecompositionMode::Auto => n <= EXACT_DECOMPOSITION_CAP,
    };
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| j != i && below(linf(support[i], support[j]), d)).collect()).collect();
    // Highest degree first; ties by index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| adj[b].len().cmp(&adj[a].len()).then(a.cmp(&b)));

    let mut color = vec![usize::MAX; n];
    let success = if exact { color_backtrack(&order, &adj, r, &mut color, 0, 0) } else { color_greedy(&order, &adj, r, &mut color) };
    let subsets = if success {
        let mut s = vec![Vec::new(); r];
        for (i, &c) in color.iter().enumerate() {
            s[c].push(i);
        }
        s.retain(|v| !v.is_empty());
        s
    } else {
        Vec::new()
    };
    Ok(Decomposition { subsets, success, exhaustive: exact })
}

fn color_backtrack(order: &[usize], adj: &[Vec<usize>], r: usize, color: &mut [usize], pos: usize, used: usize) -> bool {
    let Some(&v) = order.get(pos) else {
        return true;
    };
    // Colours are interchangeable, so only one fresh colour needs trying.
    for c in 0..(used + 1).min(r) {
        if adj[v].iter().all(|&u| color[u] != c) {
            color[v] = c;
            if color_backtrack(order, adj, r, color, pos + 1, used.max(c + 1)) {
                return true;
            }
            color[v] = usize::MAX;
        }
    }
    false
}

fn color_greedy(order: &[usize], adj: &[Vec<usize>], r: usize, color: &mut [usize]) -> bool {
    for &v in order {
        match (0..r).find(|&c| adj[v].iter().all(|&u| color[u] != c)) {
            Some(c) => color[v] = c,
            None => return false,
        }
    }
    true
}

/// Eight points, in units where `d = 1`, whose densest open unit square
/// holds four points but which admit no split into four separated subsets.
pub fn undecomposable_example() -> Vec<(f64, f64)> {
    [(0, 0), (6, 0), (-8, 4), (-1, -4), (7, 8), (-5, -3), (-1, 9), (3, -1)]
        .iter()
        .map(|&(a, b)| (a as f64 / 10.0, b as f64 / 10.0))
        .collect()
}

/// Options for sequential support generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    /// Attempts per accepted point before giving up.
    pub max_attempts: usize,
    /// Seed the support with one saturated cluster of `r` points inside a
    /// single resolution cell before adding uniform draws.
    pub seed_cluster: bool,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self { max_attempts: 10_000, seed_cluster: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSupport<K> {
    pub indices: Vec<K>,
    /// False when fewer than the requested points could be placed.
    pub complete: bool,
}

/// Grid offsets `0..w` that fit strictly inside an open cell of length `d`.
fn cell_width(d: f64, n: usize) -> i64 {
    let steps = d * n as f64;
    let mut w = steps.ceil() as i64;
    if !below((w - 1) as f64 / n as f64, d) {
        w -= 1;
    }
    w.max(1)
}

/// Draws a support on `window` whose regularity at `params.d` is at most
/// `params.r`, by sequential rejection sampling.
pub fn generate_regular_support<R: Rng + ?Sized>(
    params: &RegularityParams,
    count: usize,
    n: usize,
    window: IndexRange,
    options: GenerationOptions,
    rng: &mut R,
) -> Result<GeneratedSupport<i64>> {
    if (window.len() as f64) < params.d * n as f64 {
        return Err(invalid("window shorter than the resolution cell"));
    }
    let to_t = |k: i64| k as f64 / n as f64;
    let mut chosen: BTreeSet<i64> = BTreeSet::new();

    if options.seed_cluster && params.r > 1 && count > 1 {
        let w = cell_width(params.d, n).min(window.len() as i64);
        let size = params.r.min(count).min(w as usize);
        let anchor = rng.random_range(window.start..=window.end - (w - 1));
        let mut offsets: Vec<i64> = (0..w).collect();
        for i in 0..size {
            let j = rng.random_range(i..offsets.len());
            offsets.swap(i, j);
            chosen.insert(anchor + offsets[i]);
        }
    }

    let mut attempts = 0;
    while chosen.len() < count && attempts < options.max_attempts * count {
        attempts += 1;
        let k = rng.random_range(window.start..=window.end);
        if chosen.contains(&k) {
            continue;
        }
        chosen.insert(k);
        let t: Vec<f64> = chosen.iter().map(|&k| to_t(k)).collect();
        if rayleigh_regularity_1d(&t, params.d) > params.r {
            chosen.remove(&k);
        }
    }
    Ok(GeneratedSupport { complete: chosen.len() == count, indices: chosen.into_iter().collect() })
}

/// 2D counterpart of [`generate_regular_support`]; acceptance requires a
/// successful decomposition into `params.r` separated subsets.
pub fn generate_regular_support_2d<R: Rng + ?Sized>(
    params: &RegularityParams,
    count: usize,
    n: usize,
    window: Rect,
    options: GenerationOptions,
    rng: &mut R,
) -> Result<GeneratedSupport<(i64, i64)>> {
    let cell = params.d * n as f64;
    if (window.rows.len() as f64) < cell || (window.cols.len() as f64) < cell {
        return Err(invalid("window shorter than the resolution cell"));
    }
    let to_t = |k: (i64, i64)| (k.0 as f64 / n as f64, k.1 as f64 / n as f64);
    let mut chosen: BTreeSet<(i64, i64)> = BTreeSet::new();

    if options.seed_cluster && params.r > 1 && count > 1 {
        let w = cell_width(params.d, n).min(window.rows.len() as i64).min(window.cols.len() as i64);
        let size = params.r.min(count).min((w * w) as usize);
        let a = rng.random_range(window.rows.start..=window.rows.end - (w - 1));
        let b = rng.random_range(window.cols.start..=window.cols.end - (w - 1));
        let mut offsets: Vec<(i64, i64)> = (0..w).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
        for i in 0..size {
            let j = rng.random_range(i..offsets.len());
            offsets.swap(i, j);
            chosen.insert((a + offsets[i].0, b + offsets[i].1));
        }
    }

    let mut attempts = 0;
    while chosen.len() < count && attempts < options.max_attempts * count {
        attempts += 1;
        let k = (rng.random_range(window.rows.start..=window.rows.end), rng.random_range(window.cols.start..=window.cols.end));
        if !chosen.insert(k) {
            continue;
        }
        let pts: Vec<(f64, f64)> = chosen.iter().map(|&k| to_t(k)).collect();
        if !decompose_2d(&pts, params.d, params.r, DecompositionMode::Auto)?.success {
            chosen.remove(&k);
        }
    }
    Ok(GeneratedSupport { complete: chosen.len() == count, indices: chosen.into_iter().collect() })
}

/// I.i.d. `Normal(0, sd^2)` amplitudes, folded to their absolute value when
/// `positive` is set.
pub fn draw_amplitudes<R: Rng + ?Sized>(count: usize, sd: f64, positive: bool, rng: &mut R) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sd).map_err(|e| invalid(format!("amplitude SD {sd}: {e}")))?;
    if !(sd > 0.0) {
        return Err(invalid(format!("amplitude SD must be positive, got {sd}")));
    }
    Ok((0..count)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v != 0.0 {
                break if positive { v.abs() } else { v };
            }
        })
        .collect())
}
