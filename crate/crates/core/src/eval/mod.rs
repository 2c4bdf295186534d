//! Leave-one-out ranking metrics and task-level evaluation.

mod metrics;
mod rankers;
mod report;

pub use metrics::{first_rank, hit_rate_at_k, ndcg_at_k};
pub use rankers::{ModelRanker, OracleRanker, Ranker, UniformRanker};
pub use report::{
    beam_count_sweep, eval_cases, evaluate, evaluate_task, validation_ndcg10, write_sweep_csv,
    EvalCase, MetricsReport, SweepRow, Task, TaskMetrics, CUTOFFS,
};

#[cfg(test)]
mod tests;
