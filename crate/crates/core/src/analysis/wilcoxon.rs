//! One-sided Wilcoxon signed-rank test against a fixed target.
//!
//! Exact zero differences are dropped before ranking. Tied magnitudes get
//! midranks; doubling every rank keeps them integral, so the exact null
//! distribution is a subset-sum count over integers.

use super::special::normal_ln_cdf;
use super::stats::{check_finite, pairwise_sum};
use super::ttest::{PMethod, TestError, TestKind, TestResult};

/// Largest n (after dropping zeros) that uses the exact distribution.
pub const EXACT_MAX_N: usize = 25;

/// Doubled midranks of `|d|` plus the tie-group sizes.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && abs[order[j]] == abs[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share (i+1+j)/2; doubled that is i+1+j
        let r2 = (i + 1 + j) as u64;
        for &k in &order[i..j] {
            ranks[k] = r2;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// `P(W+ ≤ observed)` by counting sign assignments, with doubled ranks.
fn exact_lower_tail(ranks2: &[u64], observed2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let hits: f64 = counts[..=(observed2 as usize).min(total as usize)].iter().sum();
    hits / 2f64.powi(ranks2.len() as i32)
}

pub fn wilcoxon_signed_rank(samples: &[f64], target_ms: f64) -> Result<TestResult, TestError> {
    check_finite(samples)?;
    let diffs: Vec<f64> = samples.iter().map(|x| x - target_ms).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(TestError::AllZeroDifferences);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks2, ties) = doubled_ranks(&abs);
    let w_plus2: u64 = ranks2.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w_plus = w_plus2 as f64 / 2.0;
    let delta_ms = pairwise_sum(samples) / samples.len() as f64 - target_ms;

    let ((p_value, p_below_floor, log10_p), method, z) = if n <= EXACT_MAX_N {
        (TestResult::from_p(exact_lower_tail(&ranks2, w_plus2)), PMethod::Exact, None)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = if var > 0.0 { (w_plus - mean + 0.5) / var.sqrt() } else { 0.0 };
        (TestResult::from_ln_p(normal_ln_cdf(z)), PMethod::NormalApprox, Some(z))
    };
    Ok(TestResult {
        test: TestKind::WilcoxonSignedRank,
        statistic: Some(w_plus),
        degrees_of_freedom: None,
        z,
        p_value,
        p_below_floor,
        log10_p,
        method,
        n,
        target_ms,
        delta_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// P(W+ ≤ observed) by walking all 2^n sign patterns with O(n²) midranks.
    fn enumerate(samples: &[f64], target: f64) -> f64 {
        let d: Vec<f64> = samples.iter().map(|x| x - target).filter(|d| *d != 0.0).collect();
        let n = d.len();
        let rank = |i: usize| {
            let a = d[i].abs();
            let below = d.iter().filter(|x| x.abs() < a).count() as f64;
            let equal = d.iter().filter(|x| x.abs() == a).count() as f64;
            below + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = (0..n).map(rank).collect();
        let observed: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
        let hits = (0u32..1 << n)
            .filter(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum::<f64>() <= observed)
            .count();
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn all_below_target_gives_minimal_p() {
        for n in 1..=20 {
            let xs: Vec<f64> = (0..n).map(|i| 10.0 + i as f64).collect();
            let r = wilcoxon_signed_rank(&xs, 100.0).unwrap();
            assert_eq!(r.statistic, Some(0.0));
            assert_eq!(r.p_value, 0.5f64.powi(n));
        }
    }

    #[test]
    fn all_above_target_gives_one() {
        let r = wilcoxon_signed_rank(&[5.0, 6.0, 7.0], 1.0).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn zeros_dropped_and_all_zero_rejected() {
        let r = wilcoxon_signed_rank(&[30.0, 20.0, 30.0, 25.0], 30.0).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(wilcoxon_signed_rank(&[30.0; 4], 30.0), Err(TestError::AllZeroDifferences));
    }

    #[test]
    fn matches_reference_values() {
        // scipy.stats.wilcoxon(x - 30, alternative="less", method="exact")
        let xs = [22.0, 35.0, 18.5, 29.0, 31.5, 12.0, 27.0, 40.0, 19.0, 24.5];
        let r = wilcoxon_signed_rank(&xs, 30.0).unwrap();
        assert_eq!(r.statistic, Some(13.0));
        assert_relative_eq!(r.p_value, 0.080078125, max_relative = 1e-15);

        // scipy.stats.wilcoxon(d, alternative="less", method="approx", correction=True)
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 - 14.0).collect();
        let r = wilcoxon_signed_rank(&xs, 0.0).unwrap();
        assert_eq!((r.method, r.n, r.statistic), (PMethod::NormalApprox, 38, Some(188.0)));
        assert_relative_eq!(r.p_value, 0.0041291297430935325, max_relative = 1e-9);
    }

    #[test]
    fn large_sample_far_below_target() {
        let xs: Vec<f64> = (0..87_716).map(|i| 15.0 + (i % 97) as f64 * 0.2).collect();
        let r = wilcoxon_signed_rank(&xs, 30.0).unwrap();
        assert!(r.p_value < 1e-3);
        assert!(r.log10_p.unwrap() < -300.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn exact_p_equals_enumeration(
            xs in prop::collection::vec(prop_oneof![0u8..60, Just(30u8)], 1..=10),
            half_steps in any::<bool>(),
        ) {
            // integer grid so ties and zero differences occur often
            let scale = if half_steps { 0.5 } else { 1.0 };
            let xs: Vec<f64> = xs.iter().map(|&v| v as f64 * scale).collect();
            let target = 30.0 * scale;
            prop_assume!(xs.iter().any(|&x| x != target));
            let r = wilcoxon_signed_rank(&xs, target).unwrap();
            prop_assert_eq!(r.method, PMethod::Exact);
            prop_assert_eq!(r.p_value.to_bits(), enumerate(&xs, target).to_bits());
        }
    }
}
