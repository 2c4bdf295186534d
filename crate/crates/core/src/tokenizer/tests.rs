use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datamodel::{generate_features, Event, FeatureSpec};
use crate::numerics::Tensor;
use crate::Error;

fn quick_cfg(k: usize) -> TokenizerConfig {
    TokenizerConfig {
        k,
        hidden: vec![32],
        max_epochs: 60,
        seed: 7,
        ..Default::default()
    }
}

fn clustered(n: usize, clusters: usize, n_sub: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let spec = FeatureSpec {
        dim: 16,
        centroid_scale: 4.0,
        n_sub,
        sub_scale: if n_sub > 0 { 0.8 } else { 0.0 },
        noise: 0.05,
    };
    generate_features(n, clusters, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Fraction of items whose label matches the majority label of their digit.
fn agreement(digits: &[u32], truth: &[usize]) -> f64 {
    let mut table: HashMap<u32, HashMap<usize, usize>> = HashMap::new();
    for (&d, &t) in digits.iter().zip(truth) {
        *table.entry(d).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = table
        .values()
        .map(|m| m.values().copied().max().unwrap())
        .sum();
    hits as f64 / digits.len() as f64
}

#[test]
fn quantize_exact_entry_has_zero_residual() {
    let cb = Tensor::from_rows(&[
        vec![0.0, 0.0],
        vec![1.0, 1.0],
        vec![2.0, 0.0],
        vec![3.0, -1.0],
    ])
    .unwrap();
    let (r, res) = quantize_vector(&cb, &[3.0, -1.0]);
    assert_eq!(r, 3);
    assert!(res.iter().all(|&x| x == 0.0));
}

#[test]
fn quantize_picks_nearest_and_lowest_on_ties() {
    let cb = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    assert_eq!(quantize_vector(&cb, &[0.9, 0.1]).0, 1);
    assert_eq!(quantize_vector(&cb, &[0.5, 0.3]).0, 0);
}

#[test]
fn level1_recovers_separated_clusters() {
    let (x, truth) = clustered(256, 8, 0, 1);
    let l1 = fit_level1(&x, &quick_cfg(8)).unwrap();
    let a = agreement(&l1.first_digits, &truth);
    assert!(a >= 0.99, "agreement {a}");
    assert!(l1.report.loss_history.last().unwrap() < &l1.report.loss_history[0]);
}

#[test]
fn level2_single_item_group_gets_zero() {
    let res = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0], vec![5.0, 5.0]]).unwrap();
    let (second, groups) = fit_level2(&res, &[0, 1, 1], &quick_cfg(4)).unwrap();
    assert_eq!(second[0], 0);
    assert_eq!(groups.len(), 2);
    assert_ne!(second[1], second[2]);
}

#[test]
fn level2_splits_two_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::new();
    let mut blob = Vec::new();
    for i in 0..4 {
        let c = if i % 2 == 0 { -5.0 } else { 5.0 };
        rows.push(vec![
            c + rng.random::<f64>() * 0.1,
            rng.random::<f64>() * 0.1,
        ]);
        blob.push(i % 2);
    }
    let res = Tensor::from_rows(&rows).unwrap();
    let (second, _) = fit_level2(&res, &[0; 4], &quick_cfg(2)).unwrap();
    assert_eq!(second[0], second[2]);
    assert_eq!(second[1], second[3]);
    assert_ne!(second[0], second[1]);
}

#[test]
fn level2_is_local_and_deterministic() {
    let (x, _) = clustered(200, 4, 3, 2);
    let first: Vec<u32> = (0..200).map(|i| (i % 4) as u32).collect();
    let (a, groups) = fit_level2(&x, &first, &quick_cfg(8)).unwrap();
    let (b, _) = fit_level2(&x, &first, &quick_cfg(8)).unwrap();
    assert_eq!(a, b);
    assert!(groups.iter().all(|g| g.fitted_on_own_group));
    assert!(groups.iter().all(|g| g
        .members
        .iter()
        .all(|&i| first[i as usize] == g.first_digit)));
}

#[test]
fn level3_permutes_within_groups() {
    assert_eq!(assign_level3(&[2], &[5], 4, 0).unwrap(), vec![0]);
    let first = vec![1; 6];
    let second = vec![0; 6];
    let mut third = assign_level3(&first, &second, 6, 9).unwrap();
    third.sort_unstable();
    assert_eq!(third, (0..6).collect::<Vec<_>>());
}

#[test]
fn level3_overflow_names_group() {
    match assign_level3(&[3; 5], &[1; 5], 4, 0) {
        Err(Error::GroupOverflow {
            group,
            size,
            capacity,
        }) => {
            assert_eq!((group, size, capacity), (vec![3, 1], 5, 4));
        }
        other => panic!("expected overflow, got {other:?}"),
    }
}

#[test]
fn sid_pipeline_is_injective_and_seeded() {
    let (x, _) = clustered(500, 16, 4, 5);
    let cfg = quick_cfg(16);
    let fit = fit_sid(&x, &cfg).unwrap();
    assert_eq!(fit.codes.n_items(), 500);
    assert!(fit.codes.is_injective());
    let again = fit_sid(&x, &cfg).unwrap();
    assert_eq!(fit.codes, again.codes);
}

#[test]
fn base_digit_examples() {
    assert_eq!(to_base_digits(0, 64, 3), vec![0, 0, 0]);
    assert_eq!(to_base_digits(4097, 64, 3), vec![1, 0, 1]);
    assert_eq!(from_base_digits(&[1, 0, 1], 64), 4097);
}

#[test]
fn cid_round_trip_and_balance() {
    let codes = build_cid(1000, 16, 3, 42).unwrap();
    let ints = cid_integers(1000, 16, 3, 42).unwrap();
    let inv = codes.inverse().unwrap();
    for v in 0..1000u32 {
        let code = codes.code(v);
        assert_eq!(from_base_digits(code, 16), ints[v as usize]);
        assert_eq!(inv[code], v);
    }
    let stats = code_distribution_stats(&codes, 3);
    for l in &stats.levels {
        assert!(
            (l.variance - minimal_variance(1000, l.bins)).abs() < 1e-9,
            "{l:?}"
        );
    }
}

#[test]
fn cid_full_capacity_has_zero_variance() {
    let codes = build_cid(64, 4, 3, 1).unwrap();
    let stats = code_distribution_stats(&codes, 3);
    assert!(stats.levels.iter().all(|l| l.variance == 0.0));
    assert_eq!(stats.collisions, 0);
}

#[test]
fn cid_capacity_error() {
    assert!(matches!(build_cid(1001, 10, 3, 0), Err(Error::Capacity(_))));
}

#[test]
fn rqvae_single_item_is_all_zero() {
    let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap();
    let fit = fit_rqvae_baseline(&x, &quick_cfg(4), 3).unwrap();
    assert_eq!(fit.codes.code(0), &[0, 0, 0, 0]);
}

#[test]
fn rqvae_identical_items_collide_then_disambiguate() {
    let x = Tensor::from_rows(&vec![vec![1.0, 2.0, 3.0]; 6]).unwrap();
    let fit = fit_rqvae_baseline(&x, &quick_cfg(4), 3).unwrap();
    assert_eq!(fit.stats.collisions, 6);
    assert!(fit.codes.is_injective());
    let extra: Vec<u32> = fit.codes.iter().map(|c| c[3]).collect();
    assert_eq!(extra, vec![0, 1, 2, 3, 4, 5]);
}

#[test]
fn rqvae_is_less_balanced_than_sid_at_level_two() {
    let (x, _) = clustered(400, 16, 4, 11);
    let cfg = quick_cfg(16);
    let sid = fit_sid(&x, &cfg).unwrap();
    let rq = fit_rqvae_baseline(&x, &cfg, 3).unwrap();
    let s = code_distribution_stats(&sid.codes, 3);
    assert!(
        rq.stats.levels[1].variance > s.levels[1].variance,
        "{:?} vs {:?}",
        rq.stats,
        s
    );
}

#[test]
fn uniform_codes_have_zero_variance() {
    let codes: Vec<Vec<u32>> = (0..27).map(|i| to_base_digits(i, 3, 3)).collect();
    let c = CodeAssignment::new(vec![3; 3], &codes).unwrap();
    let s = code_distribution_stats(&c, 3);
    assert!(s.levels.iter().all(|l| l.variance == 0.0));
}

#[test]
fn shared_prefix_gives_closed_form_variance() {
    let codes: Vec<Vec<u32>> = (0..20).map(|i| vec![2, i % 5, i / 5]).collect();
    let c = CodeAssignment::new(vec![5; 3], &codes).unwrap();
    let s = code_distribution_stats(&c, 1);
    let (n, k) = (20.0f64, 5.0f64);
    assert!((s.levels[0].variance - n * n * (k - 1.0) / (k * k)).abs() < 1e-12);
}

fn vocab() -> Vocabulary {
    Vocabulary::new(10, 4, vec![16; 3]).unwrap()
}

#[test]
fn tokenize_first_behavior_zero_code() {
    let v = vocab();
    let t = v.tokenize_interaction(0, &[0, 0, 0]).unwrap();
    assert_eq!(
        t,
        vec![
            v.behavior_range().start,
            v.digit_range(0).start,
            v.digit_range(1).start,
            v.digit_range(2).start
        ]
    );
    let roles: Vec<Role> = t.iter().map(|&x| v.role(x).unwrap()).collect();
    assert_eq!(
        roles,
        vec![
            Role::Behavior(0),
            Role::Digit(0, 0),
            Role::Digit(1, 0),
            Role::Digit(2, 0)
        ]
    );
    assert!(v.tokenize_interaction(0, &[0, 16, 0]).is_err());
    assert!(v.tokenize_interaction(4, &[0, 0, 0]).is_err());
}

#[test]
fn detokenize_inverts_tokenize() {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for b in 0..4 {
        for _ in 0..100 {
            let code: Vec<u32> = (0..3).map(|_| rng.random_range(0..16)).collect();
            let t = v.tokenize_interaction(b, &code).unwrap();
            assert_eq!(v.detokenize(&t).unwrap(), (b, code));
        }
    }
}

#[test]
fn vocabulary_is_a_partition() {
    let v = vocab();
    assert_eq!(v.size(), 3 + 10 + 4 + 3 * 16);
    let mut seen = HashSet::new();
    for t in 0..v.size() as u32 {
        let r = v.role(t).unwrap();
        assert!(seen.insert(r));
        assert_eq!(v.token(r).unwrap(), t);
    }
    assert!(v.role(v.size() as u32).is_err());
}

#[test]
fn model_sequence_layout() {
    let v = vocab();
    let codes =
        CodeAssignment::new(vec![16; 3], &[vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]).unwrap();
    let ev = |item, behavior| Event {
        item,
        behavior,
        timestamp: 0,
    };
    let s = build_model_sequence(&v, &codes, "alice", &[ev(0, 1), ev(1, 2)], ev(2, 3)).unwrap();
    assert_eq!(s.encoder.len(), 10);
    assert_eq!(s.encoder[0], v.user_token("alice"));
    assert_eq!(*s.encoder.last().unwrap(), EOS);
    let tuple = v.tokenize_interaction(3, &[7, 8, 9]).unwrap();
    assert_eq!(s.decoder_input[0], BOS);
    assert_eq!(&s.decoder_input[1..], tuple.as_slice());
    assert_eq!(&s.decoder_target[..4], tuple.as_slice());
    assert_eq!(s.decoder_target[4], EOS);
    assert!(build_model_sequence(&v, &codes, "alice", &[], ev(0, 0)).is_err());
}

#[test]
fn user_hash_is_stable_and_spread() {
    let v = Vocabulary::new(16, 1, vec![2, 2]).unwrap();
    assert_eq!(v.user_token("user-42"), v.user_token("user-42"));
    let mut load = [0usize; 16];
    for i in 0..10_000 {
        load[hash_user(&format!("user-{i}"), 16) as usize] += 1;
    }
    let mean = 10_000.0 / 16.0;
    assert!(*load.iter().max().unwrap() as f64 <= 3.0 * mean);
}

#[test]
fn artifact_round_trip() {
    let codes = build_cid(50, 4, 3, 3).unwrap();
    let art = TokenizerArtifact {
        kind: TokenizerKind::Cid,
        config: TokenizerConfig::default(),
        codes,
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("tok.ckpt");
    art.to_checkpoint().save(&p).unwrap();
    assert_eq!(TokenizerArtifact::load(&p).unwrap(), art);
}

proptest! {
    #[test]
    fn cid_is_balanced_for_any_size(n in 1usize..600, seed in 0u64..1000) {
        let codes = build_cid(n, 9, 3, seed).unwrap();
        prop_assert!(codes.is_injective());
        for l in code_distribution_stats(&codes, 3).levels {
            prop_assert!((l.variance - minimal_variance(n, l.bins)).abs() < 1e-9);
        }
    }
}
