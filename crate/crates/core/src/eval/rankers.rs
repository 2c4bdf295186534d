use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalCase, Task};
use crate::inference::{
    beam_search_many, behavior_aware_sampling_many, predict_next_behavior, BehaviorPrior, CodeTrie,
    Prediction, Prompt, RankedPrediction,
};
use crate::seqmodel::Seq2Seq;
use crate::Result;

/// Anything that produces ranked `(behavior, item)` lists for evaluation cases.
pub trait Ranker {
    /// Up to `n` predictions per case. Conditional tasks prompt with the
    /// case's true behavior.
    fn rank(&mut self, cases: &[EvalCase], task: Task, n: usize) -> Result<Vec<RankedPrediction>>;

    fn next_behavior(&mut self, cases: &[EvalCase]) -> Result<Vec<u32>>;
}

pub struct ModelRanker<'a> {
    pub model: &'a Seq2Seq,
    pub trie: &'a CodeTrie,
    pub n_beams: usize,
    pub prior: BehaviorPrior,
}

impl Ranker for ModelRanker<'_> {
    fn rank(&mut self, cases: &[EvalCase], task: Task, n: usize) -> Result<Vec<RankedPrediction>> {
        let encoders: Vec<Vec<u32>> = cases.iter().map(|c| c.encoder.clone()).collect();
        match task {
            Task::Target | Task::BehaviorSpecific => {
                let prompts: Vec<Prompt> = cases
                    .iter()
                    .map(|c| Prompt::Behavior(c.target.behavior))
                    .collect();
                beam_search_many(self.model, self.trie, &encoders, &prompts, self.n_beams, n)
            }
            Task::BehaviorItem => {
                let prompts = vec![Prompt::Joint; cases.len()];
                beam_search_many(self.model, self.trie, &encoders, &prompts, self.n_beams, n)
            }
            Task::BehaviorAware => behavior_aware_sampling_many(
                self.model,
                self.trie,
                &encoders,
                n,
                self.n_beams,
                &self.prior,
            ),
        }
    }

    fn next_behavior(&mut self, cases: &[EvalCase]) -> Result<Vec<u32>> {
        let encoders: Vec<Vec<u32>> = cases.iter().map(|c| c.encoder.clone()).collect();
        predict_next_behavior(self.model, &encoders)
    }
}

/// Always ranks the true next interaction first.
pub struct OracleRanker;

impl Ranker for OracleRanker {
    fn rank(
        &mut self,
        cases: &[EvalCase],
        _task: Task,
        _n: usize,
    ) -> Result<Vec<RankedPrediction>> {
        Ok(cases
            .iter()
            .map(|c| RankedPrediction {
                entries: vec![Prediction {
                    behavior: c.target.behavior,
                    item: c.target.item,
                    score: 0.0,
                }],
            })
            .collect())
    }

    fn next_behavior(&mut self, cases: &[EvalCase]) -> Result<Vec<u32>> {
        Ok(cases.iter().map(|c| c.target.behavior).collect())
    }
}

/// `n` distinct items drawn uniformly; behaviors are the prompted one for
/// conditional tasks and uniform otherwise.
pub struct UniformRanker {
    pub n_items: usize,
    pub n_behaviors: usize,
    pub rng: ChaCha8Rng,
}

impl UniformRanker {
    pub fn new(n_items: usize, n_behaviors: usize, seed: u64) -> Self {
        Self {
            n_items,
            n_behaviors,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Ranker for UniformRanker {
    fn rank(&mut self, cases: &[EvalCase], task: Task, n: usize) -> Result<Vec<RankedPrediction>> {
        let n = n.min(self.n_items);
        Ok(cases
            .iter()
            .map(|c| {
                let items = sample(&mut self.rng, self.n_items, n);
                let entries = items
                    .iter()
                    .enumerate()
                    .map(|(i, item)| Prediction {
                        behavior: match task {
                            Task::Target | Task::BehaviorSpecific => c.target.behavior,
                            _ => self.rng.random_range(0..self.n_behaviors as u32),
                        },
                        item: item as u32,
                        score: -(i as f64),
                    })
                    .collect();
                RankedPrediction { entries }
            })
            .collect())
    }

    fn next_behavior(&mut self, cases: &[EvalCase]) -> Result<Vec<u32>> {
        Ok(cases
            .iter()
            .map(|_| self.rng.random_range(0..self.n_behaviors as u32))
            .collect())
    }
}
