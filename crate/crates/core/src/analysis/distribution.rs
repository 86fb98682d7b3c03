//! Empirical distribution views: ECDF, threshold fractions and histograms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("bin width must be positive and finite, got {0}")]
    BinWidth(f64),
    #[error("truncation point must be finite, got {0}")]
    Truncation(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcdfPoint {
    pub value: f64,
    /// Fraction of samples ≤ `value`.
    pub fraction: f64,
}

/// Right-continuous step points, one per distinct value.
pub fn ecdf(samples: &[f64]) -> Vec<EcdfPoint> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<EcdfPoint> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.value == v => last.fraction = fraction,
            _ => points.push(EcdfPoint { value: v, fraction }),
        }
    }
    points
}

/// Fraction of samples ≤ `threshold`.
pub fn threshold_fraction(samples: &[f64], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&x| x <= threshold).count() as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edge of bin 0: 0, or lower when samples are negative.
    pub origin: f64,
    pub truncate_at: f64,
    /// Bin k covers `[origin + k·w, origin + (k+1)·w)`.
    pub counts: Vec<u64>,
    /// Samples at or beyond `truncate_at` (and any non-finite ones).
    pub overflow: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    pub fn bin_left(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.bin_width
    }
}

pub fn histogram(samples: &[f64], bin_width: f64, truncate_at: f64) -> Result<Histogram, HistogramError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(HistogramError::BinWidth(bin_width));
    }
    if !truncate_at.is_finite() {
        return Err(HistogramError::Truncation(truncate_at));
    }
    let min = samples.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let origin = if min < 0.0 { (min / bin_width).floor() * bin_width } else { 0.0 };
    let bins = ((truncate_at - origin) / bin_width).ceil().max(0.0) as usize;
    let mut counts = vec![0u64; bins];
    let mut overflow = 0u64;
    for &x in samples {
        if !x.is_finite() || x >= truncate_at || bins == 0 {
            overflow += 1;
            continue;
        }
        let k = (((x - origin) / bin_width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        bin_width,
        origin,
        truncate_at,
        counts,
        overflow,
    })
}
