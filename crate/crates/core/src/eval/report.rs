use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{hit_rate_at_k, ndcg_at_k, ModelRanker, Ranker};
use crate::datamodel::{truncate_history, Event, InteractionDataset, Split};
use crate::inference::{BehaviorPrior, CodeTrie, RankedPrediction};
use crate::io::write_atomic;
use crate::seqmodel::Seq2Seq;
use crate::tokenizer::{encode_history, CodeAssignment, Vocabulary};
use crate::{Error, Result};

pub const CUTOFFS: [usize; 2] = [5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Users whose held-out interaction has the target behavior, prompted with it.
    Target,
    /// Every user, prompted with the held-out interaction's behavior.
    BehaviorSpecific,
    /// Joint decoding; a hit needs both behavior and item.
    BehaviorItem,
    /// Behavior-aware sampling, scored like `BehaviorItem`.
    BehaviorAware,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::Target,
        Task::BehaviorSpecific,
        Task::BehaviorItem,
        Task::BehaviorAware,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Target => "target",
            Task::BehaviorSpecific => "behavior-specific",
            Task::BehaviorItem => "behavior-item",
            Task::BehaviorAware => "behavior-aware",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }

    fn needs_behavior_match(self) -> bool {
        matches!(self, Task::BehaviorItem | Task::BehaviorAware)
    }
}

/// Encoded history and held-out interaction of one user.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub user: usize,
    pub encoder: Vec<u32>,
    pub target: Event,
}

/// Validation cases hold out the second-to-last interaction, test cases the last.
pub fn eval_cases(
    dataset: &InteractionDataset,
    codes: &CodeAssignment,
    vocab: &Vocabulary,
    split: Split,
    max_history: usize,
    users: Option<&[usize]>,
) -> Result<Vec<EvalCase>> {
    let all: Vec<usize> = (0..dataset.n_users()).collect();
    let users = users.unwrap_or(&all);
    users
        .iter()
        .map(|&u| {
            let (history, target) = dataset.eval_case(u, split).ok_or_else(|| {
                Error::Config("the training split has no held-out interaction".into())
            })?;
            let history = truncate_history(history, max_history);
            Ok(EvalCase {
                user: u,
                encoder: encode_history(vocab, codes, &dataset.users()[u].raw_id, history)?,
                target,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub users: usize,
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

fn score(task: Task, cases: &[&EvalCase], ranked: &[RankedPrediction]) -> TaskMetrics {
    let (mut hr, mut ndcg) = ([0.0; 2], [0.0; 2]);
    for (c, r) in cases.iter().zip(ranked) {
        let list: Vec<(u32, u32)> = if task.needs_behavior_match() {
            r.pairs()
        } else {
            r.items().into_iter().map(|i| (0, i)).collect()
        };
        let truth = if task.needs_behavior_match() {
            (c.target.behavior, c.target.item)
        } else {
            (0, c.target.item)
        };
        for (j, &k) in CUTOFFS.iter().enumerate() {
            hr[j] += hit_rate_at_k(&list, &truth, k);
            ndcg[j] += ndcg_at_k(&list, &truth, k);
        }
    }
    let n = cases.len() as f64;
    TaskMetrics {
        task,
        users: cases.len(),
        hr5: hr[0] / n,
        hr10: hr[1] / n,
        ndcg5: ndcg[0] / n,
        ndcg10: ndcg[1] / n,
    }
}

/// Metrics for one task; the target task keeps only cases whose held-out
/// behavior is `target_behavior`.
pub fn evaluate_task(
    ranker: &mut dyn Ranker,
    cases: &[EvalCase],
    task: Task,
    target_behavior: u32,
) -> Result<TaskMetrics> {
    let selected: Vec<&EvalCase> = cases
        .iter()
        .filter(|c| task != Task::Target || c.target.behavior == target_behavior)
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyEvaluation(format!(
            "no users to evaluate for the {} task",
            task.name()
        )));
    }
    let owned: Vec<EvalCase> = selected.iter().map(|c| (*c).clone()).collect();
    let ranked = ranker.rank(&owned, task, CUTOFFS[1])?;
    Ok(score(task, &selected, &ranked))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub evaluated_users: usize,
    pub n_beams: usize,
    pub next_behavior_accuracy: f64,
    pub tasks: Vec<TaskMetrics>,
    pub config_hash: String,
    pub dataset_hash: String,
}

impl MetricsReport {
    pub fn task(&self, task: Task) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("task,users,hr@5,hr@10,ndcg@5,ndcg@10\n");
        for t in &self.tasks {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                t.task.name(),
                t.users,
                t.hr5,
                t.hr10,
                t.ndcg5,
                t.ndcg10
            ));
        }
        s.push_str(&format!(
            "next-behavior-accuracy,{},{:.6},,,\n",
            self.evaluated_users, self.next_behavior_accuracy
        ));
        write_atomic(path, s.as_bytes())
    }
}

/// Runs every requested task plus next-behavior accuracy over all cases.
pub fn evaluate(
    ranker: &mut dyn Ranker,
    cases: &[EvalCase],
    tasks: &[Task],
    target_behavior: u32,
) -> Result<(f64, Vec<TaskMetrics>)> {
    if cases.is_empty() {
        return Err(Error::EmptyEvaluation("no users to evaluate".into()));
    }
    let predicted = ranker.next_behavior(cases)?;
    let correct = cases
        .iter()
        .zip(&predicted)
        .filter(|(c, &p)| c.target.behavior == p)
        .count();
    let accuracy = correct as f64 / cases.len() as f64;
    let metrics = tasks
        .iter()
        .map(|&t| evaluate_task(ranker, cases, t, target_behavior))
        .collect::<Result<_>>()?;
    Ok((accuracy, metrics))
}

/// Behavior-specific NDCG@10, the model-selection score during training.
pub fn validation_ndcg10(
    model: &Seq2Seq,
    trie: &CodeTrie,
    cases: &[EvalCase],
    n_beams: usize,
) -> Result<f64> {
    let mut ranker = ModelRanker {
        model,
        trie,
        n_beams,
        prior: BehaviorPrior::Model,
    };
    Ok(evaluate_task(&mut ranker, cases, Task::BehaviorSpecific, 0)?.ndcg10)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Task,
    pub beams: usize,
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

/// Joint-decoding and behavior-aware metrics at every beam count.
pub fn beam_count_sweep(
    model: &Seq2Seq,
    trie: &CodeTrie,
    cases: &[EvalCase],
    beams: &[usize],
    prior: &BehaviorPrior,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for mode in [Task::BehaviorItem, Task::BehaviorAware] {
        for &n_beams in beams {
            let mut ranker = ModelRanker {
                model,
                trie,
                n_beams,
                prior: prior.clone(),
            };
            let m = evaluate_task(&mut ranker, cases, mode, 0)?;
            rows.push(SweepRow {
                mode,
                beams: n_beams,
                hr5: m.hr5,
                hr10: m.hr10,
                ndcg5: m.ndcg5,
                ndcg10: m.ndcg10,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from("mode,beams,hr@5,hr@10,ndcg@5,ndcg@10\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.mode.name(),
            r.beams,
            r.hr5,
            r.hr10,
            r.ndcg5,
            r.ndcg10
        ));
    }
    write_atomic(path, s.as_bytes())
}
