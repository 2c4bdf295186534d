use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::{Batch, Dropout, Seq2Seq, TrainConfig};
use crate::datamodel::{truncate_history, InteractionDataset};
use crate::numerics::{adamw_step, AdamState, AdamWConfig, Graph};
use crate::tokenizer::{build_model_sequence, CodeAssignment, ModelSequence};
use crate::{Error, Result};

/// Examples from each user's training region. By default one per user (the
/// last training interaction given everything before it); with
/// `sliding_window` every training interaction after the first is a target.
pub fn training_examples(
    dataset: &InteractionDataset,
    codes: &CodeAssignment,
    model: &Seq2Seq,
    max_history: usize,
    sliding_window: bool,
) -> Result<Vec<ModelSequence>> {
    let mut out = Vec::new();
    for (u, seq) in dataset.users().iter().enumerate() {
        let region = dataset.train_region(u);
        let first = if sliding_window {
            1
        } else {
            region.len().max(1) - 1
        };
        for j in first.max(1)..region.len() {
            let history = truncate_history(&region[..j], max_history);
            out.push(build_model_sequence(
                &model.vocab,
                codes,
                &seq.raw_id,
                history,
                region[j],
            )?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub val_ndcg10: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_step: Option<usize>,
    pub best_val_ndcg10: Option<f64>,
    pub log: Vec<LogRow>,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("step,loss,val_ndcg10\n");
        for r in &self.log {
            let v = r.val_ndcg10.map(|v| format!("{v:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{:.6},{}\n", r.step, r.loss, v));
        }
        crate::io::write_atomic(path, s.as_bytes())
    }
}

/// Validation callback: returns the model-selection score (higher is better).
pub type Validator<'a> = dyn FnMut(&Seq2Seq) -> Result<f64> + 'a;

/// Minibatch AdamW on next-token cross-entropy. When a validator is given the
/// parameters with the best validation score are restored at the end.
pub fn train(
    model: &mut Seq2Seq,
    examples: &[ModelSequence],
    cfg: &TrainConfig,
    mut validate: Option<&mut Validator<'_>>,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout = Dropout {
        p: model.config.dropout,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1b5_4a32_d192_ed03),
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut state = AdamState::new(&model.params);
    let mut report = TrainReport {
        steps: 0,
        initial_loss: f64::NAN,
        final_loss: f64::NAN,
        best_step: None,
        best_val_ndcg10: None,
        log: Vec::new(),
    };
    let mut best_params = None;
    let mut window = Vec::new();
    let mut blowups = 0;
    for step in 1..=cfg.steps {
        if cursor + cfg.batch_size > order.len() && cursor > 0 {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let picked: Vec<&ModelSequence> =
            order[cursor..end].iter().map(|&i| &examples[i]).collect();
        cursor = end;
        let batch = Batch::new(&picked)?;

        let mut g = Graph::new();
        let ce = model.loss(&mut g, &batch, Some(&mut dropout))?;
        let loss = g.value(ce.loss).data()[0];
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at step {step}")));
        }
        if report.initial_loss.is_nan() {
            report.initial_loss = loss;
        }
        let mut grads = g.backward(ce.loss)?.for_params(&model.params);
        if cfg.clip_norm > 0.0 {
            let norm = grads.global_norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
        }
        let lr = if cfg.warmup_steps > 0 && step <= cfg.warmup_steps {
            cfg.lr * step as f64 / cfg.warmup_steps as f64
        } else {
            cfg.lr
        };
        let opt = AdamWConfig {
            lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        };
        adamw_step(&mut model.params, &grads, &mut state, &opt)?;
        report.steps = step;
        window.push(loss);

        let log_now = cfg.log_every > 0 && step % cfg.log_every == 0;
        let eval_now = validate.is_some()
            && cfg.eval_every > 0
            && (step % cfg.eval_every == 0 || step == cfg.steps);
        if log_now || eval_now || step == cfg.steps {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            report.final_loss = mean;
            if mean > 10.0 * report.initial_loss {
                blowups += 1;
                if blowups >= 3 {
                    return Err(Error::Diverged(format!(
                        "loss {mean:.4} exceeds ten times the initial {:.4}",
                        report.initial_loss
                    )));
                }
            }
            let mut val = None;
            if eval_now {
                let score = (validate.as_mut().expect("checked above"))(model)?;
                if report.best_val_ndcg10.is_none_or(|b| score > b) {
                    report.best_val_ndcg10 = Some(score);
                    report.best_step = Some(step);
                    best_params = Some(model.params.clone());
                }
                val = Some(score);
            }
            info!(step, loss = mean, val_ndcg10 = ?val, "train");
            report.log.push(LogRow {
                step,
                loss: mean,
                val_ndcg10: val,
            });
        }
    }
    if let Some(p) = best_params {
        model.params = p;
    }
    Ok(report)
}
