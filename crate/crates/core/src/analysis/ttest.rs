//! One-sided tests of "latency below target".

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::special::student_t_ln_cdf;
use super::stats::{descriptive_stats, StatsError};

/// Smallest p-value reported as a number; anything below is shown as `< 1e-300`.
pub const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TestError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("every difference from the target is zero")]
    AllZeroDifferences,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    OneSidedT,
    WilcoxonSignedRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PMethod {
    StudentT,
    Degenerate,
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    /// t for the t-test, W+ for the signed-rank test; absent when degenerate.
    pub statistic: Option<f64>,
    pub degrees_of_freedom: Option<f64>,
    /// Standardized W+ under the normal approximation.
    pub z: Option<f64>,
    /// One-sided, alternative "less than target". Clamped to [`P_FLOOR`].
    pub p_value: f64,
    pub p_below_floor: bool,
    /// Unclamped log10 of the p-value when it is available.
    pub log10_p: Option<f64>,
    pub method: PMethod,
    pub n: usize,
    pub target_ms: f64,
    pub delta_ms: f64,
}

impl TestResult {
    /// Clamps an exactly computed p-value.
    pub(crate) fn from_p(p: f64) -> (f64, bool, Option<f64>) {
        if p < P_FLOOR {
            (P_FLOOR, true, (p > 0.0).then(|| p.log10()))
        } else {
            (p.min(1.0), false, Some(p.log10()))
        }
    }

    pub(crate) fn from_ln_p(ln_p: f64) -> (f64, bool, Option<f64>) {
        let log10_p = ln_p / std::f64::consts::LN_10;
        let p = ln_p.exp();
        if p < P_FLOOR {
            (P_FLOOR, true, Some(log10_p))
        } else {
            (p.min(1.0), false, Some(log10_p))
        }
    }

    /// `"< 1e-300"` below the floor, otherwise three significant digits.
    pub fn p_display(&self) -> String {
        if self.p_below_floor {
            "< 1e-300".to_string()
        } else {
            format_p(self.p_value)
        }
    }
}

pub(crate) fn format_p(p: f64) -> String {
    if p == 0.0 || p >= 1e-3 {
        format!("{p:.3}")
    } else {
        format!("{p:.2e}")
    }
}

impl fmt::Display for TestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.test {
            TestKind::OneSidedT => "t",
            TestKind::WilcoxonSignedRank => "W+",
        };
        match self.statistic {
            Some(s) => write!(f, "{name} = {s:.2}, p = {}", self.p_display()),
            None => write!(f, "degenerate, p = {}", self.p_display()),
        }
    }
}

/// One-sided t-test of `mean < target` from summary statistics.
pub fn one_sided_t_test(mean: f64, sd: f64, n: usize, target_ms: f64) -> Result<TestResult, TestError> {
    if n < 2 {
        return Err(TestError::TooFewSamples { need: 2, got: n });
    }
    if !(mean.is_finite() && sd.is_finite() && sd >= 0.0 && target_ms.is_finite()) {
        return Err(TestError::InvalidInput(format!("mean {mean}, sd {sd}, target {target_ms}")));
    }
    let delta_ms = mean - target_ms;
    let df = (n - 1) as f64;
    if sd == 0.0 {
        let p = if mean < target_ms { 0.0 } else { 1.0 };
        return Ok(TestResult {
            test: TestKind::OneSidedT,
            statistic: None,
            degrees_of_freedom: Some(df),
            z: None,
            p_value: p,
            p_below_floor: false,
            log10_p: None,
            method: PMethod::Degenerate,
            n,
            target_ms,
            delta_ms,
        });
    }
    let t = delta_ms / (sd / (n as f64).sqrt());
    let (p_value, p_below_floor, log10_p) = TestResult::from_ln_p(student_t_ln_cdf(t, df));
    Ok(TestResult {
        test: TestKind::OneSidedT,
        statistic: Some(t),
        degrees_of_freedom: Some(df),
        z: None,
        p_value,
        p_below_floor,
        log10_p,
        method: PMethod::StudentT,
        n,
        target_ms,
        delta_ms,
    })
}

/// One-sided t-test on raw samples.
pub fn t_test_samples(samples: &[f64], target_ms: f64) -> Result<TestResult, TestError> {
    if samples.len() < 2 {
        return Err(TestError::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let s = descriptive_stats(samples)?;
    one_sided_t_test(s.mean, s.sd, s.n, target_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn null_boundary() {
        let r = one_sided_t_test(30.0, 5.0, 100, 30.0).unwrap();
        assert_eq!(r.statistic, Some(0.0));
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn published_summary_against_both_targets() {
        let r = one_sided_t_test(25.34, 54.8, 87_716, 50.0).unwrap();
        assert_relative_eq!(r.statistic.unwrap(), -133.276, epsilon = 1e-3);
        assert!(r.p_below_floor);
        assert_eq!(r.p_display(), "< 1e-300");

        let r = one_sided_t_test(25.34, 54.8, 87_716, 30.0).unwrap();
        assert_relative_eq!(r.statistic.unwrap(), -25.185, epsilon = 1e-3);
        // scipy.stats.t.sf(25.185..., 87715)
        assert_relative_eq!(r.p_value, 9.1496753664022e-140, max_relative = 1e-6);
    }

    #[test]
    fn degenerate_sd() {
        let r = one_sided_t_test(0.5, 0.0, 10, 30.0).unwrap();
        assert_eq!((r.p_value, r.method, r.statistic), (0.0, PMethod::Degenerate, None));
        assert_eq!(one_sided_t_test(40.0, 0.0, 10, 30.0).unwrap().p_value, 1.0);
        assert_eq!(one_sided_t_test(30.0, 0.0, 10, 30.0).unwrap().p_value, 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(one_sided_t_test(1.0, 1.0, 1, 2.0).is_err());
        assert!(one_sided_t_test(f64::NAN, 1.0, 5, 2.0).is_err());
        assert!(one_sided_t_test(1.0, -1.0, 5, 2.0).is_err());
    }

    #[test]
    fn samples_path_matches_summary_path() {
        let xs = [12.0, 19.5, 22.1, 30.4, 18.8, 25.0, 21.3];
        let a = t_test_samples(&xs, 30.0).unwrap();
        let s = descriptive_stats(&xs).unwrap();
        assert_eq!(a, one_sided_t_test(s.mean, s.sd, 7, 30.0).unwrap());
        // scipy.stats.ttest_1samp(xs, 30, alternative="less")
        assert_relative_eq!(a.statistic.unwrap(), -4.057236010276211, max_relative = 1e-9);
        assert_relative_eq!(a.p_value, 0.0033356547774996133, max_relative = 1e-7);
    }

    proptest! {
        #[test]
        fn shift_invariance(
            xs in prop::collection::vec(0.0f64..100.0, 3..60),
            target in 0.0f64..100.0,
            c in -50.0f64..50.0,
        ) {
            prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
            let a = t_test_samples(&xs, target).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = t_test_samples(&shifted, target + c).unwrap();
            let (ta, tb) = (a.statistic.unwrap(), b.statistic.unwrap());
            prop_assert!((ta - tb).abs() <= 1e-8 * (1.0 + ta.abs()), "{} vs {}", ta, tb);
        }

        #[test]
        fn p_in_unit_interval(mean in -100.0f64..100.0, sd in 0.01f64..100.0, n in 2usize..100_000) {
            let r = one_sided_t_test(mean, sd, n, 0.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
