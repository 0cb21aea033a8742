//! Convolution operators and noisy measurement synthesis.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{IndexRange, Rect};
use crate::kernels::{Kernel, Kernel2D};
use crate::linprog::LinearOperator;
use crate::signals::{fmt_f64, SpikeTrain, SpikeTrain2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApplyMode {
    /// Dense matrix-vector products; for tests and small problems.
    Matrix,
    /// Direct loops over the truncated stencil.
    Stencil,
    /// Two 1D passes; 2D separable kernels only.
    Separable,
}

/// `y[j] = sum_i g[out_j - in_i] x[i]` with a symmetric stencil of radius `K`.
#[derive(Debug, Clone)]
pub struct ConvolutionOperator {
    stencil: Vec<f64>,
    radius: i64,
    input: IndexRange,
    output: IndexRange,
    mode: ApplyMode,
    dense: Option<Vec<f64>>,
}

impl ConvolutionOperator {
    pub fn new(kernel: &Kernel, n: usize, input: IndexRange, output: IndexRange, mode: ApplyMode) -> Result<Self> {
        Self::from_stencil(kernel.stencil(n), input, output, mode)
    }

    /// Output window = input window dilated by the stencil radius, so no
    /// energy above the truncation tolerance is clipped.
    pub fn covering(kernel: &Kernel, n: usize, input: IndexRange, mode: ApplyMode) -> Result<Self> {
        let output = input.dilate(kernel.stencil_radius(n));
        Self::new(kernel, n, input, output, mode)
    }

    /// `stencil` holds samples for offsets `-K..=K`.
    pub fn from_stencil(stencil: Vec<f64>, input: IndexRange, output: IndexRange, mode: ApplyMode) -> Result<Self> {
        if stencil.len().is_multiple_of(2) {
            return Err(Error::Dimension(format!("stencil length {} is not odd", stencil.len())));
        }
        if mode == ApplyMode::Separable {
            return Err(invalid("separable mode applies to 2D operators only"));
        }
        let radius = (stencil.len() / 2) as i64;
        let mut op = Self { stencil, radius, input, output, mode, dense: None };
        if mode == ApplyMode::Matrix {
            op.dense = Some(op.dense_matrix());
        }
        Ok(op)
    }

    pub fn input(&self) -> IndexRange {
        self.input
    }

    pub fn output(&self) -> IndexRange {
        self.output
    }

    pub fn rows(&self) -> usize {
        self.output.len()
    }

    pub fn cols(&self) -> usize {
        self.input.len()
    }

    pub fn stencil(&self) -> &[f64] {
        &self.stencil
    }

    #[inline]
    fn tap(&self, offset: i64) -> f64 {
        if offset.abs() > self.radius {
            0.0
        } else {
            self.stencil[(offset + self.radius) as usize]
        }
    }

    /// Row-major dense matrix.
    pub fn dense_matrix(&self) -> Vec<f64> {
        let (m, n) = (self.rows(), self.cols());
        let mut a = vec![0.0; m * n];
        for (j, ko) in self.output.iter().enumerate() {
            for (i, ki) in self.input.iter().enumerate() {
                a[j * n + i] = self.tap(ko - ki);
            }
        }
        a
    }

    /// Nonzero entries `(row, col, value)` in column-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, ki) in self.input.iter().enumerate() {
            for ko in (ki - self.radius).max(self.output.start)..=(ki + self.radius).min(self.output.end) {
                let v = self.tap(ko - ki);
                if v != 0.0 {
                    out.push((self.output.offset(ko).unwrap(), i, v));
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("input", x.len(), self.cols())?;
        let mut y = vec![0.0; self.rows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    pub fn apply_transpose(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("output", z.len(), self.rows())?;
        let mut x = vec![0.0; self.cols()];
        self.apply_transpose_into(z, &mut x);
        Ok(x)
    }

    /// `y = A x`; lengths are trusted.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        match (&self.dense, self.mode) {
            (Some(a), _) => dense_gemv(a, x, y),
            _ => {
                y.iter_mut().for_each(|v| *v = 0.0);
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let ki = self.input.index_at(i);
                    let lo = (ki - self.radius).max(self.output.start);
                    let hi = (ki + self.radius).min(self.output.end);
                    for ko in lo..=hi {
                        y[(ko - self.output.start) as usize] += self.tap(ko - ki) * xi;
                    }
                }
            }
        }
    }

    /// `x = A^T z`; lengths are trusted.
    pub fn apply_transpose_into(&self, z: &[f64], x: &mut [f64]) {
        match &self.dense {
            Some(a) => dense_gemv_t(a, z, x),
            None => {
                for (i, xi) in x.iter_mut().enumerate() {
                    let ki = self.input.index_at(i);
                    let lo = (ki - self.radius).max(self.output.start);
                    let hi = (ki + self.radius).min(self.output.end);
                    *xi = (lo..=hi).map(|ko| self.tap(ko - ki) * z[(ko - self.output.start) as usize]).sum();
                }
            }
        }
    }

    pub fn row_abs_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows()];
        for (r, _, v) in self.entries() {
            s[r] += v.abs();
        }
        s
    }

    pub fn col_abs_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols()];
        for (_, c, v) in self.entries() {
            s[c] += v.abs();
        }
        s
    }

    /// `sum_m c_m g[k - k_m]` over the output window.
    pub fn convolve_train(&self, x: &SpikeTrain) -> Result<Vec<f64>> {
        if x.window != self.input {
            return Err(Error::Dimension("spike window differs from operator input".into()));
        }
        self.apply(&x.to_dense())
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what} length {got}, expected {want}")));
    }
    Ok(())
}

fn dense_gemv(a: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for (row, yj) in a.chunks_exact(n).zip(y.iter_mut()) {
        *yj = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn dense_gemv_t(a: &[f64], z: &[f64], x: &mut [f64]) {
    let n = x.len();
    x.iter_mut().for_each(|v| *v = 0.0);
    for (row, &zj) in a.chunks_exact(n).zip(z) {
        for (xi, aji) in x.iter_mut().zip(row) {
            *xi += aji * zj;
        }
    }
}

macro_rules! conv_linear_operator {
    ($t:ty) => {
        impl $t {
            /// The same operator with absolute-valued taps.
            fn abs_copy(&self) -> Self {
                let mut op = self.clone();
                op.stencil.iter_mut().for_each(|v| *v = v.abs());
                if let Some(d) = op.dense.as_mut() {
                    d.iter_mut().for_each(|v| *v = v.abs());
                }
                op
            }
        }

        impl LinearOperator for $t {
            fn rows(&self) -> usize {
                <$t>::rows(self)
            }
            fn cols(&self) -> usize {
                <$t>::cols(self)
            }
            fn apply(&self, x: &[f64], out: &mut [f64]) {
                self.apply_into(x, out)
            }
            fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
                self.apply_transpose_into(y, out)
            }
            fn abs_apply(&self, x: &[f64], out: &mut [f64]) {
                if self.stencil.iter().all(|v| *v >= 0.0) {
                    self.apply_into(x, out)
                } else {
                    self.abs_copy().apply_into(x, out)
                }
            }
            fn abs_apply_transpose(&self, y: &[f64], out: &mut [f64]) {
                if self.stencil.iter().all(|v| *v >= 0.0) {
                    self.apply_transpose_into(y, out)
                } else {
                    self.abs_copy().apply_transpose_into(y, out)
                }
            }
        }
    };
}

conv_linear_operator!(ConvolutionOperator);
conv_linear_operator!(ConvolutionOperator2d);

/// Full 1D linear convolution `sum_m c_m g[k - k_m]`, output dilated by the
/// stencil radius.
pub fn convolve(x: &SpikeTrain, kernel: &Kernel) -> Result<(IndexRange, Vec<f64>)> {
    let op = ConvolutionOperator::covering(kernel, x.n, x.window, ApplyMode::Stencil)?;
    Ok((op.output(), op.convolve_train(x)?))
}

/// 2D convolution with a separable kernel `g2[k] = g[k1] g[k2]`.
#[derive(Debug, Clone)]
pub struct ConvolutionOperator2d {
    stencil: Vec<f64>,
    radius: i64,
    input: Rect,
    output: Rect,
    mode: ApplyMode,
    dense: Option<Vec<f64>>,
}

/// Dense 2D matrices above this many entries are refused.
const MAX_DENSE_2D_ENTRIES: usize = 50_000_000;

impl ConvolutionOperator2d {
    pub fn new(kernel: &Kernel2D, n: usize, input: Rect, output: Rect, mode: ApplyMode) -> Result<Self> {
        let stencil = kernel.stencil_1d(n);
        let radius = (stencil.len() / 2) as i64;
        let mut op = Self { stencil, radius, input, output, mode, dense: None };
        if mode == ApplyMode::Matrix {
            if input.len() * output.len() > MAX_DENSE_2D_ENTRIES {
                return Err(invalid(format!("dense 2D operator of {}x{} is too large", output.len(), input.len())));
            }
            op.dense = Some(op.dense_matrix());
        }
        Ok(op)
    }

    pub fn covering(kernel: &Kernel2D, n: usize, input: Rect, mode: ApplyMode) -> Result<Self> {
        let output = input.dilate(kernel.stencil_radius(n));
        Self::new(kernel, n, input, output, mode)
    }

    pub fn input(&self) -> Rect {
        self.input
    }

    pub fn output(&self) -> Rect {
        self.output
    }

    pub fn rows(&self) -> usize {
        self.output.len()
    }

    pub fn cols(&self) -> usize {
        self.input.len()
    }

    #[inline]
    fn tap(&self, offset: i64) -> f64 {
        if offset.abs() > self.radius {
            0.0
        } else {
            self.stencil[(offset + self.radius) as usize]
        }
    }

    pub fn dense_matrix(&self) -> Vec<f64> {
        let (m, n) = (self.rows(), self.cols());
        let mut a = vec![0.0; m * n];
        for j in 0..m {
            let ko = self.output.index_at(j);
            for i in 0..n {
                let ki = self.input.index_at(i);
                a[j * n + i] = self.tap(ko.0 - ki.0) * self.tap(ko.1 - ki.1);
            }
        }
        a
    }

    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.cols() {
            let ki = self.input.index_at(i);
            for a in (ki.0 - self.radius).max(self.output.rows.start)..=(ki.0 + self.radius).min(self.output.rows.end) {
                let ga = self.tap(a - ki.0);
                for b in (ki.1 - self.radius).max(self.output.cols.start)..=(ki.1 + self.radius).min(self.output.cols.end) {
                    let v = ga * self.tap(b - ki.1);
                    if v != 0.0 {
                        out.push((self.output.offset((a, b)).unwrap(), i, v));
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("input", x.len(), self.cols())?;
        let mut y = vec![0.0; self.rows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    pub fn apply_transpose(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("output", z.len(), self.rows())?;
        let mut x = vec![0.0; self.cols()];
        self.apply_transpose_into(z, &mut x);
        Ok(x)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        match self.mode {
            ApplyMode::Matrix => dense_gemv(self.dense.as_ref().unwrap(), x, y),
            ApplyMode::Stencil => {
                y.iter_mut().for_each(|v| *v = 0.0);
                let out_w = self.output.cols.len();
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let ki = self.input.index_at(i);
                    for a in (ki.0 - self.radius).max(self.output.rows.start)..=(ki.0 + self.radius).min(self.output.rows.end) {
                        let ga = self.tap(a - ki.0) * xi;
                        let row = (a - self.output.rows.start) as usize * out_w;
                        for b in (ki.1 - self.radius).max(self.output.cols.start)..=(ki.1 + self.radius).min(self.output.cols.end) {
                            y[row + (b - self.output.cols.start) as usize] += ga * self.tap(b - ki.1);
                        }
                    }
                }
            }
            ApplyMode::Separable => {
                // Columns first: (in_rows x out_cols), then rows.
                let t = conv_axis(&self.stencil, x, self.input.rows.len(), self.input.cols, self.output.cols);
                let y2 = conv_axis_rows(&self.stencil, &t, self.input.rows, self.output.rows, self.output.cols.len());
                y.copy_from_slice(&y2);
            }
        }
    }

    pub fn apply_transpose_into(&self, z: &[f64], x: &mut [f64]) {
        match self.mode {
            ApplyMode::Matrix => dense_gemv_t(self.dense.as_ref().unwrap(), z, x),
            ApplyMode::Stencil => {
                let out_w = self.output.cols.len();
                for (i, xi) in x.iter_mut().enumerate() {
                    let ki = self.input.index_at(i);
                    let mut acc = 0.0;
                    for a in (ki.0 - self.radius).max(self.output.rows.start)..=(ki.0 + self.radius).min(self.output.rows.end) {
                        let ga = self.tap(a - ki.0);
                        let row = (a - self.output.rows.start) as usize * out_w;
                        for b in (ki.1 - self.radius).max(self.output.cols.start)..=(ki.1 + self.radius).min(self.output.cols.end) {
                            acc += ga * self.tap(b - ki.1) * z[row + (b - self.output.cols.start) as usize];
                        }
                    }
                    *xi = acc;
                }
            }
            ApplyMode::Separable => {
                let t = conv_axis(&self.stencil, z, self.output.rows.len(), self.output.cols, self.input.cols);
                let x2 = conv_axis_rows(&self.stencil, &t, self.output.rows, self.input.rows, self.input.cols.len());
                x.copy_from_slice(&x2);
            }
        }
    }

    pub fn row_abs_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows()];
        for (r, _, v) in self.entries() {
            s[r] += v.abs();
        }
        s
    }

    pub fn col_abs_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols()];
        for (_, c, v) in self.entries() {
            s[c] += v.abs();
        }
        s
    }

    pub fn convolve_train(&self, x: &SpikeTrain2D) -> Result<Vec<f64>> {
        if x.window != self.input {
            return Err(Error::Dimension("spike window differs from operator input".into()));
        }
        self.apply(&x.to_dense())
    }
}

/// 1D correlation along the last axis of a row-major `rows x src.len()`
/// array, mapping index window `src` to `dst`. The stencil is symmetric, so
/// the transposed map uses the same taps with the roles of the windows
/// swapped.
fn conv_axis(stencil: &[f64], data: &[f64], rows: usize, src: IndexRange, dst: IndexRange) -> Vec<f64> {
    let radius = (stencil.len() / 2) as i64;
    let (sw, dw) = (src.len(), dst.len());
    let mut out = vec![0.0; rows * dw];
    for r in 0..rows {
        let inp = &data[r * sw..(r + 1) * sw];
        let o = &mut out[r * dw..(r + 1) * dw];
        for (j, kd) in dst.iter().enumerate() {
            let lo = (kd - radius).max(src.start);
            let hi = (kd + radius).min(src.end);
            if lo > hi {
                continue;
            }
            let taps = &stencil[(lo - kd + radius) as usize..=(hi - kd + radius) as usize];
            let vals = &inp[(lo - src.start) as usize..=(hi - src.start) as usize];
            o[j] = taps.iter().zip(vals).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// 1D correlation along the first axis of a row-major `src.len() x cols` array.
fn conv_axis_rows(stencil: &[f64], data: &[f64], src: IndexRange, dst: IndexRange, cols: usize) -> Vec<f64> {
    let radius = (stencil.len() / 2) as i64;
    let mut out = vec![0.0; dst.len() * cols];
    for (j, kd) in dst.iter().enumerate() {
        let o = &mut out[j * cols..(j + 1) * cols];
        let lo = (kd - radius).max(src.start);
        let hi = (kd + radius).min(src.end);
        for ks in lo..=hi {
            let w = stencil[(ks - kd + radius) as usize];
            let row = &data[(ks - src.start) as usize * cols..][..cols];
            for (ov, rv) in o.iter_mut().zip(row) {
                *ov += w * rv;
            }
        }
    }
    out
}

/// 2D convolution of a spike train with a separable kernel.
pub fn convolve_2d(x: &SpikeTrain2D, kernel: &Kernel2D) -> Result<(Rect, Vec<f64>)> {
    let op = ConvolutionOperator2d::covering(kernel, x.n, x.window, ApplyMode::Separable)?;
    Ok((op.output(), op.convolve_train(x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    #[default]
    Normal,
    Uniform,
}

/// Clean data plus additive noise of exact l1 norm `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyData {
    pub y: Vec<f64>,
    pub noise: Vec<f64>,
    /// `20 log10(|clean|_2 / |noise|_2)`; `None` without noise.
    pub snr_db: Option<f64>,
}

pub fn add_noise<R: Rng + ?Sized>(clean: &[f64], delta: f64, family: NoiseFamily, rng: &mut R) -> Result<NoisyData> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(invalid(format!("noise budget must be finite and >= 0, got {delta}")));
    }
    if delta == 0.0 || clean.is_empty() {
        return Ok(NoisyData { y: clean.to_vec(), noise: vec![0.0; clean.len()], snr_db: None });
    }
    let uniform = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    let mut noise: Vec<f64> = loop {
        let v: Vec<f64> = (0..clean.len())
            .map(|_| match family {
                NoiseFamily::Normal => StandardNormal.sample(rng),
                NoiseFamily::Uniform => uniform.sample(rng),
            })
            .collect();
        if v.iter().any(|&x| x != 0.0) {
            break v;
        }
    };
    let l1: f64 = noise.iter().map(|v| v.abs()).sum();
    noise.iter_mut().for_each(|v| *v *= delta / l1);
    let y = clean.iter().zip(&noise).map(|(c, n)| c + n).collect();
    let snr = 20.0 * (l2(clean) / l2(&noise)).log10();
    Ok(NoisyData { y, noise, snr_db: Some(snr) })
}

pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sampled measurements `y = g * x + noise` with `|noise|_1 <= delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    #[serde(rename = "N")]
    pub n: usize,
    pub window: IndexRange,
    pub delta: f64,
    pub kernel: String,
    pub sigma: f64,
    pub seed: Option<u64>,
    pub snr_db: Option<f64>,
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise: Option<Vec<f64>>,
}

impl Measurement {
    /// Convolves `x` over the dilated window and adds noise of l1 norm `delta`.
    pub fn synthesize<R: Rng + ?Sized>(
        x: &SpikeTrain,
        kernel: &Kernel,
        delta: f64,
        family: NoiseFamily,
        seed: Option<u64>,
        rng: &mut R,
    ) -> Result<Self> {
        let (window, clean) = convolve(x, kernel)?;
        let noisy = add_noise(&clean, delta, family, rng)?;
        Ok(Self {
            n: x.n,
            window,
            delta,
            kernel: kernel.name().to_string(),
            sigma: kernel.sigma,
            seed,
            snr_db: noisy.snr_db,
            y: noisy.y,
            noise: Some(noisy.noise),
        })
    }

    /// Realized noise l1 norm, when stored.
    pub fn noise_l1(&self) -> Option<f64> {
        self.noise.as_deref().map(l1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "y"])?;
        for (k, v) in self.window.iter().zip(&self.y) {
            w.write_record([k.to_string(), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// 2D counterpart of [`Measurement`]; `y` is row-major over `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement2d {
    #[serde(rename = "N")]
    pub n: usize,
    pub window: Rect,
    pub delta: f64,
    pub kernel: String,
    pub sigma: f64,
    pub seed: Option<u64>,
    pub snr_db: Option<f64>,
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise: Option<Vec<f64>>,
}

impl Measurement2d {
    pub fn synthesize<R: Rng + ?Sized>(
        x: &SpikeTrain2D,
        kernel: &Kernel2D,
        delta: f64,
        family: NoiseFamily,
        seed: Option<u64>,
        rng: &mut R,
    ) -> Result<Self> {
        let (window, clean) = convolve_2d(x, kernel)?;
        let noisy = add_noise(&clean, delta, family, rng)?;
        Ok(Self {
            n: x.n,
            window,
            delta,
            kernel: kernel.name().to_string(),
            sigma: kernel.sigma(),
            seed,
            snr_db: noisy.snr_db,
            y: noisy.y,
            noise: Some(noisy.noise),
        })
    }

    pub fn noise_l1(&self) -> Option<f64> {
        self.noise.as_deref().map(l1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k1", "k2", "y"])?;
        for (off, v) in self.y.iter().enumerate() {
            let (a, b) = self.window.index_at(off);
            w.write_record([a.to_string(), b.to_string(), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn cauchy() -> Kernel {
        Kernel::cauchy(0.1).unwrap()
    }

    #[test]
    fn single_spike_reproduces_pulse() {
        let k = cauchy();
        let x = SpikeTrain::new(100, IndexRange::symmetric(100), vec![7], vec![1.0], true).unwrap();
        let (win, y) = convolve(&x, &k).unwrap();
        assert_eq!(win, IndexRange::symmetric(150));
        for (off, v) in y.iter().enumerate() {
            let kk = win.index_at(off);
            let expect = if (kk - 7).abs() <= 50 { k.eval((kk - 7) as f64 / 10.0) } else { 0.0 };
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn stencil_matches_dense_matrix() {
        let k = Kernel::gaussian(0.05).unwrap();
        let input = IndexRange::new(-20, 30).unwrap();
        let s = ConvolutionOperator::covering(&k, 100, input, ApplyMode::Stencil).unwrap();
        let m = ConvolutionOperator::covering(&k, 100, input, ApplyMode::Matrix).unwrap();
        let x: Vec<f64> = (0..input.len()).map(|i| if i % 7 == 0 { i as f64 * 0.3 - 2.0 } else { 0.0 }).collect();
        let (a, b) = (s.apply(&x).unwrap(), m.apply(&x).unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(s.apply(&x[1..]).is_err());
    }

    #[test]
    fn separable_and_stencil_2d_agree_with_outer_product() {
        let k = Kernel2D::gaussian(0.1).unwrap();
        let input = Rect::new(IndexRange::new(-4, 3).unwrap(), IndexRange::new(-2, 6).unwrap());
        let ops: Vec<_> = [ApplyMode::Matrix, ApplyMode::Stencil, ApplyMode::Separable]
            .into_iter()
            .map(|m| ConvolutionOperator2d::covering(&k, 32, input, m).unwrap())
            .collect();
        let mut x = vec![0.0; input.len()];
        x[input.offset((1, 2)).unwrap()] = 1.0;
        let g = k.stencil_1d(32);
        let r = k.stencil_radius(32) as i64;
        for op in &ops {
            let y = op.apply(&x).unwrap();
            for (off, v) in y.iter().enumerate() {
                let (a, b) = op.output().index_at(off);
                let (da, db) = (a - 1, b - 2);
                let expect = if da.abs() <= r && db.abs() <= r { g[(da + r) as usize] * g[(db + r) as usize] } else { 0.0 };
                assert!((v - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn noise_budget_is_exact() {
        let clean: Vec<f64> = (0..301).map(|i| (i as f64 * 0.1).sin() * 10.0).collect();
        for family in [NoiseFamily::Normal, NoiseFamily::Uniform] {
            let nd = add_noise(&clean, 75.0, family, &mut seed::rng(4)).unwrap();
            let diff: f64 = nd.y.iter().zip(&clean).map(|(a, b)| (a - b).abs()).sum();
            assert!((diff - 75.0).abs() < 1e-12 * 75.0);
            assert!(nd.snr_db.unwrap().is_finite());
        }
        let nd = add_noise(&clean, 0.0, NoiseFamily::Normal, &mut seed::rng(4)).unwrap();
        assert_eq!(nd.y, clean);
        assert!(add_noise(&clean, -1.0, NoiseFamily::Normal, &mut seed::rng(4)).is_err());
    }

    #[test]
    fn measurement_records_budget() {
        let x = SpikeTrain::new(100, IndexRange::symmetric(100), vec![-3, 40], vec![5.0, 2.0], true).unwrap();
        let m = Measurement::synthesize(&x, &cauchy(), 10.0, NoiseFamily::Normal, Some(9), &mut seed::rng(9)).unwrap();
        assert!(m.noise_l1().unwrap() <= 10.0 + 1e-12);
        assert_eq!(m.y.len(), 301);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["kernel"], "cauchy");
        assert_eq!(v["delta"], 10.0);
    }
}
