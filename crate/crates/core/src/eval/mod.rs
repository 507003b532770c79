//! Evaluation: episode metrics with normal confidence intervals, post-shift
//! performance, preference–reward alignment, Pareto fronts and report files.

mod metrics;
mod pareto;
mod report;
mod rollout;

pub use metrics::{
    alignment, alignment_summary, mer, post_event_alignment, psk, psk_average, psk_episode, sr,
    EpisodeLog, MetricSummary, Z95,
};
pub use pareto::{dominates, jaccard, pareto_front};
pub use report::{
    svg_line_chart, write_alignment, write_curve, write_metrics, write_pareto, AlignmentRow,
    MetricRow, ParetoRow,
};
pub use rollout::{eval_points, run_episodes, CurveRow, EvalAgent};
