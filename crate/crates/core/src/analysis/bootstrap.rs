//! Percentile bootstrap for the median.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{check_finite, quantile_sorted};
use super::ttest::TestError;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianCi {
    pub lo: f64,
    pub hi: f64,
    pub confidence: f64,
    pub resamples: usize,
    pub seed: u64,
}

fn median_in_place(xs: &mut [f64]) -> f64 {
    let n = xs.len();
    let mid = n / 2;
    let (_, &mut upper, _) = xs.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        return upper;
    }
    let lower = xs[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lower + 0.5 * (upper - lower)
}

/// Replicate `r` always draws from stream `r` of the seeded generator, so the
/// result does not depend on how the work is split across threads.
pub fn bootstrap_median_ci(
    samples: &[f64],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<MedianCi, TestError> {
    check_finite(samples)?;
    if samples.len() < 2 {
        return Err(TestError::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    if resamples == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(TestError::InvalidInput(format!(
            "resamples {resamples}, confidence {confidence}"
        )));
    }
    let n = samples.len();
    let mut medians: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r);
                buf.clear();
                buf.extend((0..n).map(|_| samples[rng.random_range(0..n)]));
                median_in_place(buf)
            },
        )
        .collect();
    medians.sort_unstable_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    Ok(MedianCi {
        lo: quantile_sorted(&medians, alpha / 2.0),
        hi: quantile_sorted(&medians, 1.0 - alpha / 2.0),
        confidence,
        resamples,
        seed,
    })
}
