//! Merging stage logs and the statistical report built on the merged records.

pub mod bootstrap;
pub mod distribution;
pub mod merge;
pub mod render;
pub mod report;
pub mod special;
pub mod stats;
pub mod ttest;
pub mod wilcoxon;

pub use bootstrap::{bootstrap_median_ci, MedianCi};
pub use distribution::{ecdf, histogram, threshold_fraction, EcdfPoint, Histogram};
pub use merge::{merge_logs, LatencyRecord, MergeDiagnostics, MergeError, NetworkFrom};
pub use render::{render_text, write_report, ReportFormat};
pub use report::{analyze_logs, analyze_records, AnalysisConfig, AnalysisError, LatencyReport, SCHEMA_VERSION};
pub use stats::{descriptive_stats, StageStats};
pub use ttest::{one_sided_t_test, t_test_samples, TestResult, P_FLOOR};
pub use wilcoxon::wilcoxon_signed_rank;
