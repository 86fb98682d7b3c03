//! The full latency report and the batch computation that produces it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bootstrap::{bootstrap_median_ci, MedianCi, DEFAULT_CONFIDENCE, DEFAULT_RESAMPLES};
use super::distribution::{ecdf, histogram, threshold_fraction, EcdfPoint, Histogram, HistogramError};
use super::merge::{merge_logs, LatencyRecord, MergeDiagnostics, MergeError, NetworkFrom};
use super::stats::{descriptive_stats, StageStats, StatsError};
use super::ttest::{one_sided_t_test, TestError, TestResult};
use super::wilcoxon::wilcoxon_signed_rank;
use crate::clock::ClockSource;
use crate::stagelog::{PublishLog, SinkLog};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error("no merged records")]
    NoRecords,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Test(#[from] TestError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error("invalid report json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// End-to-end t-test targets.
    pub targets_ms: Vec<f64>,
    pub wilcoxon_target_ms: f64,
    pub thresholds_ms: Vec<f64>,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    pub seed: u64,
    pub bin_width_ms: f64,
    pub truncate_at_ms: f64,
    pub network_from: NetworkFrom,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            targets_ms: vec![30.0, 50.0],
            wilcoxon_target_ms: 30.0,
            thresholds_ms: vec![30.0, 45.0, 50.0],
            bootstrap_resamples: DEFAULT_RESAMPLES,
            confidence: DEFAULT_CONFIDENCE,
            seed: 0,
            bin_width_ms: 1.0,
            truncate_at_ms: 45.0,
            network_from: NetworkFrom::Rms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stages {
    pub processing: StageStats,
    pub network: StageStats,
    pub rendering: StageStats,
    pub end_to_end: StageStats,
}

impl Stages {
    pub fn rows(&self) -> [(&'static str, &StageStats); 4] {
        [
            ("Processing", &self.processing),
            ("Network", &self.network),
            ("Rendering", &self.rendering),
            ("End-to-end", &self.end_to_end),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFraction {
    pub threshold_ms: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockInfo {
    pub publisher: ClockSource,
    pub sink: ClockSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub schema_version: u32,
    pub config: AnalysisConfig,
    pub clocks: Option<ClockInfo>,
    pub merge: MergeDiagnostics,
    pub stages: Stages,
    /// End-to-end against each target, in config order.
    pub t_tests: Vec<TestResult>,
    pub wilcoxon: TestResult,
    pub median_ci: MedianCi,
    pub thresholds: Vec<ThresholdFraction>,
    /// End-to-end ECDF.
    pub ecdf: Vec<EcdfPoint>,
    /// End-to-end histogram.
    pub histogram: Histogram,
}

impl LatencyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn threshold(&self, threshold_ms: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|t| t.threshold_ms == threshold_ms)
            .map(|t| t.fraction)
    }
}

/// Per-stage sample vectors in milliseconds.
#[derive(Debug, Clone, Default)]
pub struct StageSamples {
    pub processing: Vec<f64>,
    pub network: Vec<f64>,
    pub rendering: Vec<f64>,
    pub end_to_end: Vec<f64>,
}

impl StageSamples {
    pub fn from_records(records: &[LatencyRecord]) -> Self {
        let pick = |f: fn(&LatencyRecord) -> f64| records.iter().map(f).collect();
        Self {
            processing: pick(|r| r.processing.as_ms()),
            network: pick(|r| r.network.as_ms()),
            rendering: pick(|r| r.rendering.as_ms()),
            end_to_end: pick(|r| r.end_to_end.as_ms()),
        }
    }
}

pub fn analyze_records(
    records: &[LatencyRecord],
    merge: MergeDiagnostics,
    cfg: &AnalysisConfig,
) -> Result<LatencyReport, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::NoRecords);
    }
    let s = StageSamples::from_records(records);
    let e2e = &s.end_to_end;
    let stages = Stages {
        processing: descriptive_stats(&s.processing)?,
        network: descriptive_stats(&s.network)?,
        rendering: descriptive_stats(&s.rendering)?,
        end_to_end: descriptive_stats(e2e)?,
    };
    let t_tests = cfg
        .targets_ms
        .iter()
        .map(|&t| one_sided_t_test(stages.end_to_end.mean, stages.end_to_end.sd, stages.end_to_end.n, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LatencyReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        clocks: None,
        merge,
        stages,
        t_tests,
        wilcoxon: wilcoxon_signed_rank(e2e, cfg.wilcoxon_target_ms)?,
        median_ci: bootstrap_median_ci(e2e, cfg.bootstrap_resamples, cfg.confidence, cfg.seed)?,
        thresholds: cfg
            .thresholds_ms
            .iter()
            .map(|&t| ThresholdFraction {
                threshold_ms: t,
                fraction: threshold_fraction(e2e, t),
            })
            .collect(),
        ecdf: ecdf(e2e),
        histogram: histogram(e2e, cfg.bin_width_ms, cfg.truncate_at_ms)?,
    })
}

/// Merges both logs and computes the report.
pub fn analyze_logs(publish: &PublishLog, sink: &SinkLog, cfg: &AnalysisConfig) -> Result<LatencyReport, AnalysisError> {
    let (records, merge) = merge_logs(publish, sink, cfg.network_from)?;
    let mut report = analyze_records(&records, merge, cfg)?;
    report.clocks = Some(ClockInfo {
        publisher: publish.header.clock,
        sink: sink.header.clock,
    });
    Ok(report)
}
