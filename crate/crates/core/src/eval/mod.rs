//! Metrics, distance oracles, reports, and the experiment harnesses: the
//! two-stage ablation grid, the data-size sweep, and the perturbation-mode
//! ablation.

mod distance;
mod harness;
mod metrics;
mod report;

pub use distance::{generate_batch, mean_preference, sliced_wasserstein, wasserstein_1d, win_rate};
pub use harness::{
    curate_pairs, data_size_sweep, perturbation_ablation, run_ablation, toy_context,
    ExperimentContext, HarnessBudget, ABLATION_ROWS,
};
pub use metrics::{laplacian_variance, prefix_contrast_score};
pub use report::{EvalReport, Expectation};
