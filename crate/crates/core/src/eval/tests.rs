use proptest::prelude::*;

use super::*;
use crate::datamodel::{generate_synthetic, Event, Split, SyntheticSpec};
use crate::inference::{BehaviorPrior, CodeTrie};
use crate::seqmodel::{ModelConfig, Seq2Seq};
use crate::tokenizer::{build_cid, Vocabulary};
use crate::Error;

#[test]
fn cutoff_metrics_follow_their_closed_forms() {
    let ranked = [4u32, 9, 2, 7, 1, 0, 3, 8, 5, 6, 11];
    assert_eq!(hit_rate_at_k(&ranked, &4, 5), 1.0);
    assert_eq!(hit_rate_at_k(&ranked, &3, 5), 0.0);
    assert_eq!(hit_rate_at_k(&ranked, &3, 10), 1.0);
    assert_eq!(hit_rate_at_k(&ranked, &42, 10), 0.0);
    assert_eq!(ndcg_at_k(&ranked, &4, 10), 1.0);
    assert_eq!(ndcg_at_k(&ranked, &2, 10), 0.5);
    assert_eq!(ndcg_at_k(&ranked, &11, 10), 0.0);
    assert_eq!(ndcg_at_k(&ranked, &42, 10), 0.0);
    assert_eq!(first_rank(&ranked, &7), Some(4));
}

proptest! {
    #[test]
    fn metric_identities(perm in Just((0u32..20).collect::<Vec<_>>()).prop_shuffle(), truth in 0u32..25) {
        let list = &perm[..12];
        prop_assert!(hit_rate_at_k(list, &truth, 5) <= hit_rate_at_k(list, &truth, 10));
        for k in [5, 10] {
            let n = ndcg_at_k(list, &truth, k);
            prop_assert!(n <= hit_rate_at_k(list, &truth, k));
            let allowed = n == 0.0 || (1..=k).any(|r| (n - 1.0 / ((1 + r) as f64).log2()).abs() < 1e-15);
            prop_assert!(allowed);
        }
    }
}

fn dummy_cases(n: usize, n_items: u32, n_behaviors: u32) -> Vec<EvalCase> {
    (0..n)
        .map(|u| EvalCase {
            user: u,
            encoder: Vec::new(),
            target: Event {
                item: (u as u32 * 7919) % n_items,
                behavior: u as u32 % n_behaviors,
                timestamp: 0,
            },
        })
        .collect()
}

#[test]
fn oracle_stub_scores_one_everywhere() {
    let cases = dummy_cases(50, 100, 4);
    let (acc, metrics) = evaluate(&mut OracleRanker, &cases, &Task::ALL, 3).unwrap();
    assert_eq!(acc, 1.0);
    for m in metrics {
        assert_eq!(
            (m.hr5, m.hr10, m.ndcg5, m.ndcg10),
            (1.0, 1.0, 1.0, 1.0),
            "{:?}",
            m.task
        );
    }
}

#[test]
fn uniform_ranker_stays_inside_binomial_bands() {
    let (n_items, n) = (200u32, 4000usize);
    let cases = dummy_cases(n, n_items, 4);
    let mut ranker = UniformRanker::new(n_items as usize, 4, 17);
    for (task, k_behaviors) in [(Task::BehaviorSpecific, 1.0), (Task::BehaviorItem, 4.0)] {
        let m = evaluate_task(&mut ranker, &cases, task, 0).unwrap();
        for (k, hr) in [(5.0, m.hr5), (10.0, m.hr10)] {
            let p = k / n_items as f64 / k_behaviors;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (hr - p).abs() <= 3.0 * sigma,
                "{task:?} HR@{k}: {hr} vs {p} ± {}",
                3.0 * sigma
            );
        }
    }
}

#[test]
fn empty_sets_are_errors_not_zeros() {
    let cases: Vec<EvalCase> = dummy_cases(8, 10, 3);
    // No held-out interaction carries behavior 3.
    let err = evaluate_task(&mut OracleRanker, &cases, Task::Target, 3).unwrap_err();
    assert!(matches!(err, Error::EmptyEvaluation(_)));
    assert!(matches!(
        evaluate(&mut OracleRanker, &[], &[Task::BehaviorItem], 0),
        Err(Error::EmptyEvaluation(_))
    ));
    let m = evaluate_task(&mut OracleRanker, &cases, Task::Target, 2).unwrap();
    assert_eq!(
        m.users,
        cases.iter().filter(|c| c.target.behavior == 2).count()
    );
}

#[test]
fn cases_hold_out_the_documented_interactions() {
    let data = generate_synthetic(&SyntheticSpec::planted(30, 3)).unwrap();
    let ds = &data.dataset;
    let codes = build_cid(ds.n_items(), 16, 3, 1).unwrap();
    let vocab = Vocabulary::new(8, 4, vec![16; 3]).unwrap();
    for split in [Split::Validation, Split::Test] {
        let cases = eval_cases(ds, &codes, &vocab, split, 50, None).unwrap();
        assert_eq!(cases.len(), ds.n_users());
        for c in &cases {
            let ev = &ds.users()[c.user].events;
            let pos = ev.iter().position(|e| *e == c.target).unwrap();
            assert_eq!(ds.split_of(c.user, pos), split);
            // The encoder sees exactly the interactions before the target.
            assert_eq!(c.encoder.len(), 2 + pos * vocab.tuple_len());
        }
    }
    let short = eval_cases(ds, &codes, &vocab, Split::Test, 2, Some(&[0, 5])).unwrap();
    assert_eq!(short.len(), 2);
    assert!(short
        .iter()
        .all(|c| c.encoder.len() == 2 + 2 * vocab.tuple_len()));
    assert!(eval_cases(ds, &codes, &vocab, Split::Train, 50, None).is_err());
}

#[test]
fn model_evaluation_is_deterministic_and_well_formed() {
    let data = generate_synthetic(&SyntheticSpec::planted(40, 4)).unwrap();
    let ds = &data.dataset;
    let codes = build_cid(ds.n_items(), 8, 3, 2).unwrap();
    let vocab = Vocabulary::new(8, 4, vec![8; 3]).unwrap();
    let cfg = ModelConfig {
        d_model: 16,
        d_inner: 32,
        heads: 2,
        head_dim: 8,
        encoder_layers: 1,
        decoder_layers: 1,
        n_bi: 1,
        d_beh: 4,
        ..ModelConfig::desk()
    };
    let model = Seq2Seq::new(cfg, vocab.clone()).unwrap();
    let trie = CodeTrie::new(&codes).unwrap();
    let cases = eval_cases(ds, &codes, &vocab, Split::Test, 50, None).unwrap();
    let run = || {
        let mut r = ModelRanker {
            model: &model,
            trie: &trie,
            n_beams: 10,
            prior: BehaviorPrior::Model,
        };
        evaluate(
            &mut r,
            &cases,
            &[
                Task::BehaviorSpecific,
                Task::BehaviorItem,
                Task::BehaviorAware,
            ],
            3,
        )
        .unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    for m in &a.1 {
        assert!(m.hr5 <= m.hr10 && m.ndcg5 <= m.ndcg10);
        assert!(m.ndcg10 <= m.hr10 && m.hr10 <= 1.0 && m.ndcg5 >= 0.0);
    }

    let rows = beam_count_sweep(
        &model,
        &trie,
        &cases[..10],
        &[10, 20],
        &BehaviorPrior::Model,
    )
    .unwrap();
    assert_eq!(rows.len(), 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("mode,beams,hr@5,hr@10,ndcg@5,ndcg@10\nbehavior-item,10,"));
}

#[test]
fn task_names_round_trip() {
    for t in Task::ALL {
        assert_eq!(Task::parse(t.name()).unwrap(), t);
    }
    assert!(Task::parse("bogus").is_err());
}
