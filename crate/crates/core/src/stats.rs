//! Agreement statistics between predictions and ground truth: Spearman,
//! Kendall tau-b, Pearson, RMSE and yes/no accuracy.
//!
//! Ties are handled exactly: Spearman uses fractional (average) ranks and
//! Kendall uses the tau-b tie correction. A constant side makes every
//! coefficient undefined, which is reported as [`StatsError::DegenerateSeries`]
//! rather than as a NaN or a silent zero.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum StatsError {
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("series of length {n} is too short (need at least {min})")]
    TooShort { n: usize, min: usize },
    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },
    #[error("degenerate series: one side is constant")]
    DegenerateSeries,
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Predictions `x` paired with ground truth `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    x: Vec<f64>,
    y: Vec<f64>,
    labels: Option<Vec<String>>,
    ordinal_only: bool,
}

impl PairedSeries {
    /// Builds a series of finite values with at least two pairs.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::build(x, y, false)
    }

    /// Like [`PairedSeries::new`] but admits infinities, which only the rank
    /// statistics can use. `plcc` and `rmse` reject such a series.
    pub fn ordinal(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::build(x, y, true)
    }

    fn build(x: Vec<f64>, y: Vec<f64>, allow_infinite: bool) -> Result<Self> {
        if x.len() != y.len() {
            return Err(StatsError::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        if x.len() < 2 {
            return Err(StatsError::TooShort { n: x.len(), min: 2 });
        }
        let bad = |v: &f64| v.is_nan() || (!allow_infinite && v.is_infinite());
        if let Some(index) = x.iter().position(bad).or_else(|| y.iter().position(bad)) {
            return Err(StatsError::NonFinite { index });
        }
        let ordinal_only = x.iter().chain(&y).any(|v| v.is_infinite());
        Ok(PairedSeries {
            x,
            y,
            labels: None,
            ordinal_only,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.x.len() {
            return Err(StatsError::LengthMismatch {
                left: self.x.len(),
                right: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// True when an infinite value restricts this series to rank statistics.
    pub fn is_ordinal_only(&self) -> bool {
        self.ordinal_only
    }

    /// The same pairs with prediction and truth exchanged.
    pub fn swapped(&self) -> Self {
        PairedSeries {
            x: self.y.clone(),
            y: self.x.clone(),
            labels: self.labels.clone(),
            ordinal_only: self.ordinal_only,
        }
    }

    fn require_finite(&self) -> Result<()> {
        match self
            .x
            .iter()
            .chain(&self.y)
            .position(|v| !v.is_finite())
        {
            Some(pos) => Err(StatsError::NonFinite {
                index: pos % self.x.len(),
            }),
            None => Ok(()),
        }
    }
}

/// All four agreement figures for one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub srcc: f64,
    pub krcc: f64,
    /// Absent when the predictions carry an infinite sentinel.
    pub plcc: Option<f64>,
    pub rmse: Option<f64>,
    pub n: usize,
}

pub fn correlation_report(series: &PairedSeries) -> Result<CorrelationReport> {
    let srcc = srcc(series)?;
    let krcc = krcc(series)?;
    let (plcc, rmse) = if series.is_ordinal_only() {
        (None, None)
    } else {
        (Some(plcc(series)?), Some(rmse(series)?))
    };
    Ok(CorrelationReport {
        srcc,
        krcc,
        plcc,
        rmse,
        n: series.len(),
    })
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) share rank mean((start+1)..=end)
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
pub fn srcc(series: &PairedSeries) -> Result<f64> {
    let rx = fractional_ranks(series.x());
    let ry = fractional_ranks(series.y());
    pearson(&rx, &ry)
}

/// Pearson linear correlation on the raw values.
pub fn plcc(series: &PairedSeries) -> Result<f64> {
    series.require_finite()?;
    pearson(series.x(), series.y())
}

pub fn rmse(series: &PairedSeries) -> Result<f64> {
    series.require_finite()?;
    let sum: f64 = series
        .x()
        .iter()
        .zip(series.y())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / series.len() as f64).sqrt())
}

/// Number of tied pairs, `sum t(t-1)/2` over runs of equal elements in a
/// sequence already sorted so that equal elements are adjacent.
fn tied_pairs<T, F: Fn(&T, &T) -> bool>(sorted: &[T], same: F) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if same(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Counts strict inversions while merge-sorting `values` in place.
fn count_inversions(values: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = values.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        count_inversions(left, sl) + count_inversions(right, sr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if values[i].total_cmp(&values[j]) != Ordering::Greater {
            scratch[k] = values[i];
            i += 1;
        } else {
            scratch[k] = values[j];
            swaps += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    scratch[k..k + (mid - i)].copy_from_slice(&values[i..mid]);
    k += mid - i;
    scratch[k..k + (n - j)].copy_from_slice(&values[j..n]);
    values.copy_from_slice(&scratch[..n]);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn krcc(series: &PairedSeries) -> Result<f64> {
    let n = series.len();
    let mut pairs: Vec<(f64, f64)> = series
        .x()
        .iter()
        .copied()
        .zip(series.y().iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let total = (n as u64) * (n as u64 - 1) / 2;
    let x_ties = tied_pairs(&pairs, |a, b| a.0 == b.0);
    let joint_ties = tied_pairs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut scratch = vec![0.0; n];
    let discordant = count_inversions(&mut ys, &mut scratch);
    let y_ties = tied_pairs(&ys, |a, b| a == b);

    let concordant_minus_discordant = total as f64 - x_ties as f64 - y_ties as f64
        + joint_ties as f64
        - 2.0 * discordant as f64;
    let denom = ((total - x_ties) as f64) * ((total - y_ties) as f64);
    if denom == 0.0 {
        return Err(StatsError::DegenerateSeries);
    }
    Ok((concordant_minus_discordant / denom.sqrt()).clamp(-1.0, 1.0))
}

/// Fraction of positions where the predicted answer equals the truth.
pub fn qa_accuracy(predicted: &[bool], truth: &[bool]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(StatsError::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(StatsError::TooShort { n: 0, min: 1 });
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}
