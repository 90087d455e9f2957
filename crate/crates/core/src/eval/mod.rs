//! Evaluation: metrics, the repeated-split experiment protocol, and
//! deterministic report files.

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{auc_bruteforce, auc_rank, compute_metrics, Metrics};
pub use protocol::{
    prompt_vocabulary, run_protocol, BackendChoice, MetricsReport, Mode, ProtocolParams,
    RunResult, SummaryStats,
    DEFAULT_RUNS, DEFAULT_SPAN_WEEKS, DEFAULT_X_SWEEP, SPLIT_RATIOS,
};
pub use report::{
    emit_report, load_report, render_curves_csv, render_runs_csv, render_summary_csv,
    CURVES_HEADER, RUNS_HEADER, SUMMARY_HEADER,
};
