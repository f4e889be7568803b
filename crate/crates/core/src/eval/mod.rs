//! Trajectory metrics (ATE / RTE / RRE), least-squares alignment, and the
//! nearest-neighbor depth interpolation baseline.

mod align;
mod metrics;
mod nn_depth;

pub use align::umeyama_alignment;
pub use metrics::{
    ate_rmse, ate_with_series, metric_report, rte_rre_rmse, rte_rre_with_series, Alignment,
    MetricError, MetricReport, ASSOCIATION_WINDOW,
};
pub use nn_depth::{interpolate_depth_nn, InterpolationError, NN_SEARCH_RADIUS};
