//! Offline evaluation: ranking metrics, per-task evaluation, adoption rate,
//! ablations and parameter sweeps.

mod adoption;
mod evaluate;
mod metrics;

pub use adoption::{adoption_rate, AdoptionStats};
pub use evaluate::{
    evaluate, evaluate_all, mean_metrics, rank_for_user, sample_users, user_order, EvalOptions,
    EvalReport, Scorer, Task, TaskMetrics, TaskView,
};
pub use metrics::{ndcg_at_k, recall_at_k};
