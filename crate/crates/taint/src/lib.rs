//! Static taint oracle, method-snapshot baseline and classification metrics.

pub mod analyze;
pub mod metrics;
pub mod snapshot;

pub use analyze::{analyze, analyze_with, AnalysisOptions, Summary, TaintFlow, DEFAULT_CALL_DEPTH};
pub use metrics::{compute_metrics, ConfusionCounts, Metrics, MetricsError};
pub use snapshot::{distinct_snapshots, snapshot_container, SnapshotError};
