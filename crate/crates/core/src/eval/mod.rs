//! Masked-entry metrics, classical baselines and degradation curves.

mod baselines;
mod curve;
mod kalman;
mod metrics;

pub use baselines::{
    baseline_kalman, baseline_linear_interp, baseline_locf, kalman_fill, kalman_fill_with, kalman_filter_fill,
    column_options, linear_fill, locf_decay_fill, locf_fill,
};
pub use curve::{
    curve_svg, degradation_curve, per_seed_mae, read_curve, sign_test_p, summarize, summary_table, write_curve,
    Baseline, CurveRow, ImputationMethod, SummaryRow,
};
pub use kalman::{fit_local_level, FilterOutput, ScalarStateSpace, SmootherOutput};
pub use metrics::{masked_mae_rmse, masked_mae_rmse_z, write_reports, ChannelMetrics, MetricsReport};
