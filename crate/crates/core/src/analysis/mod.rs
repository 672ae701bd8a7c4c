//! Activation outliers, cross-modal alignment and run reporting.

mod alignment;
mod outliers;
mod report;

pub use alignment::{alignment_profile, cosine, cross_cosine_sum, mean_cross_cosine, AlignmentProfile};
pub use outliers::{
    capture_block_inputs, compare_activations, compare_modalities, outlier_stats, ActivationStats,
    DEFAULT_KAPPA,
};
pub use report::{
    bar_chart, line_chart, read_metrics_csv, write_alignment_csv, write_metrics_csv,
    write_outliers_csv, MetricsRecord, METRICS_HEADER,
};
