//! Integer index windows on the sampling grid `k / N`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Inclusive range of grid indices `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRange {
    pub start: i64,
    pub end: i64,
}

impl IndexRange {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end < start {
            return Err(invalid(format!("empty index range {start}..={end}")));
        }
        Ok(Self { start, end })
    }

    /// Symmetric window `-half..=half`.
    pub fn symmetric(half: i64) -> Self {
        let half = half.abs();
        Self { start: -half, end: half }
    }

    /// The grid indices covering `[lo, hi]` in `t` units at step `1/n`.
    pub fn covering(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let n = n as f64;
        Self::new((lo * n).round() as i64, (hi * n).round() as i64)
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: i64) -> bool {
        k >= self.start && k <= self.end
    }

    /// Position of `k` inside the window.
    pub fn offset(&self, k: i64) -> Option<usize> {
        self.contains(k).then(|| (k - self.start) as usize)
    }

    pub fn index_at(&self, offset: usize) -> i64 {
        self.start + offset as i64
    }

    pub fn dilate(&self, by: usize) -> Self {
        Self { start: self.start - by as i64, end: self.end + by as i64 }
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.start..=self.end
    }
}

/// Rectangle of grid indices, stored row-major with the first coordinate
/// as the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub rows: IndexRange,
    pub cols: IndexRange,
}

impl Rect {
    pub fn new(rows: IndexRange, cols: IndexRange) -> Self {
        Self { rows, cols }
    }

    pub fn square(range: IndexRange) -> Self {
        Self { rows: range, cols: range }
    }

    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn contains(&self, k: (i64, i64)) -> bool {
        self.rows.contains(k.0) && self.cols.contains(k.1)
    }

    pub fn offset(&self, k: (i64, i64)) -> Option<usize> {
        let r = self.rows.offset(k.0)?;
        let c = self.cols.offset(k.1)?;
        Some(r * self.cols.len() + c)
    }

    pub fn index_at(&self, offset: usize) -> (i64, i64) {
        let w = self.cols.len();
        (self.rows.index_at(offset / w), self.cols.index_at(offset % w))
    }

    pub fn dilate(&self, by: usize) -> Self {
        Self { rows: self.rows.dilate(by), cols: self.cols.dilate(by) }
    }
}
