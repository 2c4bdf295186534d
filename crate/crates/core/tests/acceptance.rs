//! Acceptance harness: one check per acceptance criterion, each printing a
//! single PASS/FAIL line. Runs every criterion by default; pass criterion
//! numbers as arguments to run a subset (`cargo test --test acceptance -- 3 4`).
//!
//! Criteria 5-7 train desk-size models and take several minutes together.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{exhaustive_ranking, micro_config, random_codes, random_encoder, rng};
use mbgen_core::datamodel::{
    generate_features, generate_synthetic, Event, FeatureSpec, Split, SyntheticSpec,
};
use mbgen_core::eval::{
    eval_cases, evaluate, evaluate_task, EvalCase, ModelRanker, OracleRanker, Task, UniformRanker,
};
use mbgen_core::inference::{
    allocate_slots, beam_search, beam_search_many, BehaviorPrior, CodeTrie, Prompt,
};
use mbgen_core::numerics::gradcheck::check_gradients;
use mbgen_core::numerics::{Graph, Tensor};
use mbgen_core::seqmodel::{
    count_params_flops, train, training_examples, Batch, ModelConfig, Seq2Seq, TrainConfig,
};
use mbgen_core::tokenizer::{
    build_cid, code_distribution_stats, fit_rqvae_baseline, fit_sid, minimal_variance,
    ModelSequence, TokenizerConfig, Vocabulary, BOS, EOS,
};
use mbgen_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

const H: f64 = 1e-5;

fn op_checks() -> Vec<(&'static str, f64)> {
    let mut r = rng(101);
    let mut out = Vec::new();
    let mut push = |name: &'static str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[mbgen_core::numerics::Var]) -> mbgen_core::Result<mbgen_core::numerics::Var>| {
        let c = check_gradients(&inputs, H, f).expect("op evaluates");
        out.push((name, c.max_rel_error()));
    };
    let w = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|i| (i as f64 * s).sin() + 0.3).collect() };

    push(
        "matmul",
        vec![Tensor::randn(&[3, 4], 1.0, &mut r), Tensor::randn(&[4, 5], 1.0, &mut r)],
        &|g, v| {
            let y = g.matmul(v[0], v[1])?;
            let y = g.mul_const(y, w(15, 0.7))?;
            Ok(g.sum(y))
        },
    );
    push(
        "matmul (transposed rhs)",
        vec![Tensor::randn(&[3, 4], 1.0, &mut r), Tensor::randn(&[5, 4], 1.0, &mut r)],
        &|g, v| {
            let y = g.matmul_ext(v[0], v[1], true)?;
            let y = g.mul_const(y, w(15, 1.1))?;
            Ok(g.sum(y))
        },
    );
    push(
        "batch_matmul",
        vec![Tensor::randn(&[2, 3, 4], 1.0, &mut r), Tensor::randn(&[2, 4, 2], 1.0, &mut r)],
        &|g, v| {
            let y = g.batch_matmul(v[0], v[1], false)?;
            let y = g.mul_const(y, w(12, 0.5))?;
            Ok(g.sum(y))
        },
    );
    push(
        "batch_matmul (transposed rhs)",
        vec![Tensor::randn(&[2, 3, 4], 1.0, &mut r), Tensor::randn(&[2, 5, 4], 1.0, &mut r)],
        &|g, v| {
            let y = g.batch_matmul(v[0], v[1], true)?;
            let y = g.mul_const(y, w(30, 0.3))?;
            Ok(g.sum(y))
        },
    );
    push(
        "add / add_bias / scale",
        vec![
            Tensor::randn(&[4, 3], 1.0, &mut r),
            Tensor::randn(&[4, 3], 1.0, &mut r),
            Tensor::randn(&[3], 1.0, &mut r),
        ],
        &|g, v| {
            let y = g.add(v[0], v[1])?;
            let y = g.add_bias(y, v[2])?;
            let y = g.scale(y, -1.3);
            let y = g.mul_const(y, w(12, 0.9))?;
            Ok(g.sum(y))
        },
    );
    push("relu", vec![Tensor::randn(&[5, 4], 1.0, &mut r)], &|g, v| {
        let y = g.relu(v[0]);
        let y = g.mul_const(y, w(20, 0.4))?;
        Ok(g.sum(y))
    });
    push(
        "layer_norm",
        vec![
            Tensor::randn(&[3, 6], 1.0, &mut r),
            Tensor::randn(&[6], 1.0, &mut r),
            Tensor::randn(&[6], 1.0, &mut r),
        ],
        &|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2])?;
            let y = g.mul_const(y, w(18, 0.8))?;
            Ok(g.sum(y))
        },
    );
    push("softmax", vec![Tensor::randn(&[3, 5], 1.0, &mut r)], &|g, v| {
        let y = g.softmax(v[0]);
        let y = g.mul_const(y, w(15, 1.3))?;
        Ok(g.sum(y))
    });
    let mask: Vec<bool> = (0..12).map(|i| i % 5 != 3).collect();
    push("masked_softmax", vec![Tensor::randn(&[2, 3, 4], 1.0, &mut r)], &|g, v| {
        let y = g.masked_softmax(v[0], &mask, 2)?;
        let y = g.mul_const(y, w(24, 0.6))?;
        Ok(g.sum(y))
    });
    push(
        "gather_rows / scatter_rows / concat_cols",
        vec![Tensor::randn(&[5, 2], 1.0, &mut r), Tensor::randn(&[4, 3], 1.0, &mut r)],
        &|g, v| {
            let rows = g.gather_rows(v[0], &[4, 0, 4, 1])?;
            let cat = g.concat_cols(v[1], rows)?;
            let sc = g.scatter_rows(cat, &[2, 0, 2, 1], 3)?;
            let y = g.mul_const(sc, w(15, 0.91))?;
            Ok(g.sum(y))
        },
    );
    push("reshape / swap_axes", vec![Tensor::randn(&[6, 4], 1.0, &mut r)], &|g, v| {
        let y = g.reshape(v[0], &[2, 3, 2, 2])?;
        let y = g.swap_axes_12(y, [2, 3, 2, 2])?;
        let y = g.mul_const(y, w(24, 0.37))?;
        Ok(g.sum(y))
    });
    let targets = [3, 0, usize::MAX, 6];
    push("softmax_cross_entropy", vec![Tensor::randn(&[4, 7], 1.0, &mut r)], &|g, v| {
        Ok(g.softmax_cross_entropy(v[0], &targets, usize::MAX)?.loss)
    });
    let target = Tensor::randn(&[3, 4], 1.0, &mut r);
    push("mean_squared_rows", vec![Tensor::randn(&[3, 4], 1.0, &mut r)], &|g, v| {
        g.mean_squared_rows(v[0], &target)
    });
    out
}

/// Central differences on every parameter entry of a micro model, one relative
/// error (norm over the tensor) per parameter.
fn end_to_end_check() -> (String, f64) {
    let cfg = ModelConfig {
        d_model: 8,
        d_inner: 12,
        heads: 2,
        head_dim: 4,
        max_encoder_len: 8,
        ..micro_config(3)
    };
    let v = Vocabulary::new(3, 3, vec![3, 3, 3]).unwrap();
    let mut model = Seq2Seq::new(cfg, v.clone()).unwrap();
    let seq = |user: u32, hist: &[(u32, [u32; 3])], next: (u32, [u32; 3])| {
        let mut enc = vec![v.user_token_for_bucket(user)];
        for (b, c) in hist {
            enc.extend(v.tokenize_interaction(*b, c).unwrap());
        }
        enc.push(EOS);
        let t = v.tokenize_interaction(next.0, &next.1).unwrap();
        let mut dec_in = vec![BOS];
        dec_in.extend(&t);
        let mut dec_tgt = t;
        dec_tgt.push(EOS);
        ModelSequence {
            encoder: enc,
            decoder_input: dec_in,
            decoder_target: dec_tgt,
        }
    };
    // Two-token encoders, plus one with a history tuple so the encoder-side
    // behavior path is exercised.
    let ex = [
        seq(0, &[], (1, [2, 0, 1])),
        seq(2, &[], (0, [1, 1, 2])),
        seq(1, &[(2, [0, 2, 1])], (2, [2, 2, 0])),
    ];
    let batch = Batch::new(&ex.iter().collect::<Vec<_>>()).unwrap();
    let loss_of = |m: &Seq2Seq| {
        let mut g = Graph::new();
        let ce = m.loss(&mut g, &batch, None).unwrap();
        g.value(ce.loss).data()[0]
    };
    let mut g = Graph::new();
    let ce = model.loss(&mut g, &batch, None).unwrap();
    let grads = g.backward(ce.loss).unwrap().for_params(&model.params);
    let ids: Vec<_> = model
        .params
        .iter()
        .map(|(id, name, _)| (id, name.to_string()))
        .collect();
    let mut worst = (String::new(), 0.0);
    for (id, name) in ids {
        let len = model.params.get(id).len();
        let analytic = grads
            .get(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; len]);
        let mut numeric = vec![0.0; len];
        for (j, n) in numeric.iter_mut().enumerate() {
            let orig = model.params.get(id).data()[j];
            model.params.get_mut(id).data_mut()[j] = orig + H;
            let up = loss_of(&model);
            model.params.get_mut(id).data_mut()[j] = orig - H;
            let down = loss_of(&model);
            model.params.get_mut(id).data_mut()[j] = orig;
            *n = (up - down) / (2.0 * H);
        }
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        if rel > worst.1 {
            worst = (name, rel);
        }
    }
    worst
}

fn criterion_1() -> Outcome {
    let ops = op_checks();
    let (op_name, op_err) = ops
        .iter()
        .copied()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let (param, e2e) = end_to_end_check();
    outcome(
        op_err < 1e-4 && e2e < 1e-3,
        format!(
            "{} ops, worst {op_name} {op_err:.1e} (< 1e-4); end-to-end worst {param} {e2e:.1e} (< 1e-3)",
            ops.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Tokenizer injectivity and balance

fn criterion_2() -> Outcome {
    let n = 1000;
    let (features, _) = generate_features(
        n,
        16,
        &FeatureSpec::default(),
        &mut ChaCha8Rng::seed_from_u64(2024),
    )
    .unwrap();
    let cfg = TokenizerConfig {
        seed: 5,
        ..TokenizerConfig::default()
    };
    let sid = fit_sid(&features, &cfg).unwrap();
    let cid = build_cid(n, cfg.k, cfg.m, cfg.seed).unwrap();
    let rq = fit_rqvae_baseline(&features, &cfg, 3).unwrap();

    let cid_stats = code_distribution_stats(&cid, 3);
    let cid_minimal = cid_stats
        .levels
        .iter()
        .all(|l| (l.variance - minimal_variance(n, l.bins)).abs() < 1e-9);
    let sid_stats = code_distribution_stats(&sid.codes, 3);
    let sid_le_rq = sid_stats
        .levels
        .iter()
        .zip(&rq.stats.levels)
        .all(|(s, q)| s.variance <= q.variance + 1e-9);
    let fmt = |s: &mbgen_core::tokenizer::CodeStats| {
        s.levels
            .iter()
            .map(|l| format!("{:.3}", l.variance))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        sid.codes.is_injective() && cid.is_injective() && cid_minimal && sid_le_rq,
        format!(
            "injective SID {} CID {}; CID minimal {cid_minimal}; variance L1/L2/L3 SID {} <= RQ-VAE {} ({} RQ collisions)",
            sid.codes.is_injective(),
            cid.is_injective(),
            fmt(&sid_stats),
            fmt(&rq.stats),
            rq.stats.collisions
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Beam-search oracle equivalence

fn compare_full_width(model: &Seq2Seq, codes: &mbgen_core::tokenizer::CodeAssignment, enc: &[u32], prompt: Prompt) -> (bool, f64) {
    let trie = CodeTrie::new(codes).unwrap();
    let b = match prompt {
        Prompt::Joint => None,
        Prompt::Behavior(b) => Some(b),
    };
    let oracle = exhaustive_ranking(model, codes, enc, b);
    let width = oracle.len();
    let got = beam_search(model, enc, prompt, width, &trie, width).unwrap();
    let mut same = got.len() == oracle.len();
    let mut worst = 0.0f64;
    for (g, o) in got.entries.iter().zip(&oracle) {
        same &= (g.behavior, g.item) == (o.1, o.2);
        worst = worst.max((g.score - o.3).abs());
    }
    (same, worst)
}

fn criterion_3() -> Outcome {
    let mut cases = 0;
    let mut all_same = true;
    let mut worst = 0.0f64;
    let shapes = [(2, 1), (16, 4), (64, 1), (21, 3), (32, 2), (12, 5)];
    for (i, &(n_items, nb)) in shapes.iter().enumerate() {
        for rep in 0..3u64 {
            let seed = 300 + 10 * i as u64 + rep;
            let mut r = rng(seed);
            let codes = random_codes(n_items, 4, &mut r);
            let vocab = Vocabulary::new(8, nb, vec![4, 4, 4]).unwrap();
            let model = Seq2Seq::new(micro_config(seed), vocab.clone()).unwrap();
            let enc = random_encoder(&vocab, &codes, 1 + rep as usize, &mut r);
            for prompt in [Prompt::Joint, Prompt::Behavior(nb as u32 - 1)] {
                let (same, err) = compare_full_width(&model, &codes, &enc, prompt);
                all_same &= same;
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    // A zero output layer makes every completion score exactly the same, so
    // the order is decided by the tie-break alone.
    let mut r = rng(399);
    let codes = random_codes(16, 4, &mut r);
    let vocab = Vocabulary::new(8, 4, vec![4, 4, 4]).unwrap();
    let mut model = Seq2Seq::new(micro_config(399), vocab.clone()).unwrap();
    for name in ["out.w", "out.b"] {
        let id = model.params.id(name).unwrap();
        model.params.get_mut(id).data_mut().fill(0.0);
    }
    let enc = random_encoder(&vocab, &codes, 2, &mut r);
    let (tie_same, tie_err) = compare_full_width(&model, &codes, &enc, Prompt::Joint);
    let oracle = exhaustive_ranking(&model, &codes, &enc, None);
    let all_tied = oracle.iter().all(|o| o.3 == oracle[0].3);
    cases += 1;
    outcome(
        all_same && worst < 1e-9 && tie_same && tie_err < 1e-9 && all_tied,
        format!(
            "{cases} searches at full width (<= 64 completions): identical order {}, max score error {:.1e}; all-tied case ordered by tokens {}",
            all_same, worst.max(tie_err), tie_same && all_tied
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Behavior-aware allocation

fn criterion_4() -> Outcome {
    let example = allocate_slots(&[0.3, 0.42, 0.18, 0.1], 10).unwrap();
    let mut r = rng(404);
    let mut violations = 0;
    for _ in 0..1000 {
        let k = r.random_range(1..=8);
        let mut p: Vec<f64> = (0..k).map(|_| r.random::<f64>()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        let n = r.random_range(0..=50);
        let a = allocate_slots(&p, n).unwrap();
        let quota: Vec<f64> = p.iter().map(|x| x * n as f64).collect();
        let ok_sum = a.iter().sum::<usize>() == n;
        // Largest remainder: every count is the floor or one more, and a slot
        // never goes to a smaller remainder while a larger one is left out.
        let ok_floor = a
            .iter()
            .zip(&quota)
            .all(|(&c, q)| c as f64 >= (q - 1e-9).floor() && c as f64 <= (q - 1e-9).floor() + 1.0);
        let rem = |i: usize| quota[i] - (quota[i] + 1e-9).floor();
        let bumped: Vec<usize> = (0..k)
            .filter(|&i| a[i] as f64 > (quota[i] + 1e-9).floor())
            .collect();
        let skipped: Vec<usize> = (0..k)
            .filter(|&i| a[i] as f64 <= (quota[i] + 1e-9).floor())
            .collect();
        let ok_order = bumped
            .iter()
            .all(|&i| skipped.iter().all(|&j| rem(i) >= rem(j) - 1e-9));
        if !(ok_sum && ok_floor && ok_order) {
            violations += 1;
        }
    }
    outcome(
        example == vec![3, 4, 2, 1] && violations == 0,
        format!("p=[0.3,0.42,0.18,0.1], N=10 -> {example:?}; 1000 random p: {violations} violations"),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6. Planted-data learning and conditioning

const PLANTED_SEEDS: [u64; 3] = [1, 2, 3];
const EVAL_USERS: usize = 300;

struct SeedRun {
    seed: u64,
    bayes_accuracy: f64,
    accuracy: f64,
    specific_hr10: f64,
    specific_ndcg10: f64,
    joint_ndcg10: f64,
    /// Users whose top-1 item is not the same under every behavior prompt.
    top1_varies: f64,
    /// Users whose top-1 items are pairwise distinct across behaviors.
    top1_distinct: f64,
}

fn desk_train_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 64,
        lr: 2e-3,
        warmup_steps: 50,
        sliding_window: true,
        eval_every: 0,
        log_every: 100,
        seed,
        ..TrainConfig::default()
    }
}

fn fit_desk_model(spec: &SyntheticSpec, steps: usize) -> (mbgen_core::datamodel::SyntheticData, mbgen_core::tokenizer::CodeAssignment, Seq2Seq) {
    let data = generate_synthetic(spec).unwrap();
    let tc = TokenizerConfig {
        seed: spec.seed,
        ..TokenizerConfig::default()
    };
    let codes = fit_sid(&data.features, &tc).unwrap().codes;
    let vocab = Vocabulary::new(2000, spec.n_behaviors(), codes.cardinalities().to_vec()).unwrap();
    let mc = ModelConfig {
        init_seed: spec.seed,
        ..ModelConfig::desk()
    };
    let mut model = Seq2Seq::new(mc, vocab).unwrap();
    let tc = desk_train_config(steps, spec.seed);
    let examples =
        training_examples(&data.dataset, &codes, &model, tc.max_history, tc.sliding_window).unwrap();
    train(&mut model, &examples, &tc, None).unwrap();
    (data, codes, model)
}

fn planted_run(seed: u64) -> SeedRun {
    let spec = SyntheticSpec::planted(2000, seed);
    let (data, codes, model) = fit_desk_model(&spec, 500);
    let users: Vec<usize> = (0..EVAL_USERS).collect();
    let cases = eval_cases(&data.dataset, &codes, &model.vocab, Split::Test, 50, Some(&users)).unwrap();
    let trie = CodeTrie::new(&codes).unwrap();
    let mut ranker = ModelRanker {
        model: &model,
        trie: &trie,
        n_beams: 50,
        prior: BehaviorPrior::Model,
    };
    let target = data.dataset.behaviors().target();
    let (accuracy, m) = evaluate(
        &mut ranker,
        &cases,
        &[Task::BehaviorSpecific, Task::BehaviorItem],
        target,
    )
    .unwrap();

    let encoders: Vec<Vec<u32>> = cases.iter().map(|c| c.encoder.clone()).collect();
    let nb = spec.n_behaviors() as u32;
    let per_b: Vec<Vec<u32>> = (0..nb)
        .map(|b| {
            let prompts = vec![Prompt::Behavior(b); encoders.len()];
            beam_search_many(&model, &trie, &encoders, &prompts, 10, 1)
                .unwrap()
                .iter()
                .map(|r| r.entries[0].item)
                .collect()
        })
        .collect();
    let (mut varies, mut distinct) = (0, 0);
    for u in 0..encoders.len() {
        let mut tops: Vec<u32> = per_b.iter().map(|t| t[u]).collect();
        tops.sort_unstable();
        tops.dedup();
        varies += usize::from(tops.len() > 1);
        distinct += usize::from(tops.len() == nb as usize);
    }
    let n = encoders.len() as f64;
    SeedRun {
        seed,
        bayes_accuracy: data.bayes.next_behavior_accuracy,
        accuracy,
        specific_hr10: m[0].hr10,
        specific_ndcg10: m[0].ndcg10,
        joint_ndcg10: m[1].ndcg10,
        top1_varies: varies as f64 / n,
        top1_distinct: distinct as f64 / n,
    }
}

fn planted_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| PLANTED_SEEDS.iter().map(|&s| planted_run(s)).collect())
}

fn criterion_5() -> Outcome {
    let uniform = 10.0 / 512.0;
    let mut passed = 0;
    let mut parts = Vec::new();
    for r in planted_runs() {
        let ok = r.accuracy >= 0.9 * r.bayes_accuracy && r.specific_hr10 >= 5.0 * uniform;
        passed += usize::from(ok);
        parts.push(format!(
            "seed {}: acc {:.3} vs 0.9x{:.3}, HR@10 {:.3} vs {:.3} {}",
            r.seed,
            r.accuracy,
            r.bayes_accuracy,
            r.specific_hr10,
            5.0 * uniform,
            if ok { "ok" } else { "miss" }
        ));
    }
    outcome(passed >= 2, format!("{passed}/3 seeds; {}", parts.join("; ")))
}

fn criterion_6() -> Outcome {
    let runs = planted_runs();
    let ok = runs
        .iter()
        .all(|r| r.top1_varies >= 0.5 && r.joint_ndcg10 <= r.specific_ndcg10);
    let parts: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: top-1 differs {:.2} (pairwise distinct {:.2}), NDCG@10 behavior-item {:.3} <= behavior-specific {:.3}",
                r.seed, r.top1_varies, r.top1_distinct, r.joint_ndcg10, r.specific_ndcg10
            )
        })
        .collect();
    outcome(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 7. Beam sweep direction

fn criterion_7() -> Outcome {
    let spec = SyntheticSpec::skewed(2000, 1);
    let (data, codes, model) = fit_desk_model(&spec, 1000);
    let users: Vec<usize> = (0..400).collect();
    let cases = eval_cases(&data.dataset, &codes, &model.vocab, Split::Test, 50, Some(&users)).unwrap();
    let trie = CodeTrie::new(&codes).unwrap();
    let metric = |task: Task, n_beams: usize| {
        let mut ranker = ModelRanker {
            model: &model,
            trie: &trie,
            n_beams,
            prior: BehaviorPrior::Model,
        };
        evaluate_task(&mut ranker, &cases, task, 0).unwrap().ndcg10
    };
    let beams = [10, 20, 30, 50];
    let joint: Vec<f64> = beams.iter().map(|&b| metric(Task::BehaviorItem, b)).collect();
    let aware = metric(Task::BehaviorAware, 10);
    let monotone = joint.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        monotone && aware > joint[0],
        format!(
            "behavior-item NDCG@10 at {beams:?} beams: {}; behavior-aware@10 {aware:.4} vs joint@10 {:.4}",
            joint.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "),
            joint[0]
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Overfit sanity

fn random_sequence(v: &Vocabulary, r: &mut ChaCha8Rng, hist: usize) -> ModelSequence {
    let nb = v.n_behaviors() as u32;
    let k = v.digit_cards()[0] as u32;
    let tuple = |r: &mut ChaCha8Rng| {
        let code = [r.random_range(0..k), r.random_range(0..k), r.random_range(0..k)];
        v.tokenize_interaction(r.random_range(0..nb), &code).unwrap()
    };
    let mut enc = vec![v.user_token_for_bucket(r.random_range(0..v.n_users() as u32))];
    for _ in 0..hist {
        enc.extend(tuple(r));
    }
    enc.push(EOS);
    let t = tuple(r);
    let mut dec_in = vec![BOS];
    dec_in.extend(&t);
    let mut dec_tgt = t;
    dec_tgt.push(EOS);
    ModelSequence {
        encoder: enc,
        decoder_input: dec_in,
        decoder_target: dec_tgt,
    }
}

fn batch_loss(model: &Seq2Seq, ex: &[ModelSequence]) -> f64 {
    let batch = Batch::new(&ex.iter().collect::<Vec<_>>()).unwrap();
    let mut g = Graph::new();
    let ce = model.loss(&mut g, &batch, None).unwrap();
    g.value(ce.loss).data()[0]
}

fn criterion_8() -> Outcome {
    let mut r = rng(808);
    let v = Vocabulary::new(16, 4, vec![16, 16, 16]).unwrap();
    let probe: Vec<ModelSequence> = (0..64).map(|_| random_sequence(&v, &mut r, 4)).collect();
    let fresh = Seq2Seq::new(ModelConfig::desk(), v.clone()).unwrap();
    let initial = batch_loss(&fresh, &probe);
    let ln_v = (v.size() as f64).ln();
    let init_ok = (initial - ln_v).abs() / ln_v < 0.05;

    let small = Vocabulary::new(4, 3, vec![4, 4, 4]).unwrap();
    let set: Vec<ModelSequence> = (0..32).map(|_| random_sequence(&small, &mut r, 3)).collect();
    let cfg = ModelConfig {
        d_model: 32,
        d_inner: 64,
        heads: 2,
        head_dim: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        n_bi: 1,
        d_beh: 8,
        max_encoder_len: 30,
        ..micro_config(10)
    };
    let mut model = Seq2Seq::new(cfg, small).unwrap();
    let tc = TrainConfig {
        steps: 2000,
        batch_size: 32,
        lr: 3e-3,
        weight_decay: 0.0,
        eval_every: 0,
        log_every: 0,
        ..TrainConfig::default()
    };
    train(&mut model, &set, &tc, None).unwrap();
    let final_loss = batch_loss(&model, &set);
    outcome(
        init_ok && final_loss < 0.1,
        format!(
            "initial loss {initial:.4} vs ln V {ln_v:.4} ({:.2}% off); 32-sequence loss after 2000 steps {final_loss:.4} (< 0.1)",
            100.0 * (initial - ln_v).abs() / ln_v
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Expert accounting

fn criterion_9() -> Outcome {
    // Hand count for d=4, inner 6, one 4-wide head, one layer per stack, no
    // behavior injection, V = 3 + 2 + 2 + 6 = 13, position tables for 3
    // encoder and 5 decoder tokens; run on a 2-token encoder:
    //   params = embeddings 52 + 12 + 20, encoder layer 16 + 64 + 58, decoder
    //            layer 24 + 128 + 58e, final norms 16, output 52 + 13
    //          = 455 + 58e
    //   MACs   = encoder 128 + 32 + 96, decoder 320 + 200 + 160 + 64 + 80 +
    //            240, output 260 = 1580; sparse FFN per token 4*6 + 6*4 = 48
    let vocab = Vocabulary::new(2, 2, vec![2, 2, 2]).unwrap();
    let tiny = |experts: usize| ModelConfig {
        d_model: 4,
        d_inner: 6,
        heads: 1,
        head_dim: 4,
        encoder_layers: 1,
        decoder_layers: 1,
        experts,
        n_bi: 0,
        d_beh: 0,
        dropout: 0.0,
        max_encoder_len: 3,
        init_seed: 0,
    };
    let seq = ModelSequence {
        encoder: vec![vocab.user_token_for_bucket(1), EOS],
        decoder_input: vec![BOS, 5, 7, 9, 11],
        decoder_target: vec![5, 7, 9, 11, EOS],
    };
    let mut hand_ok = true;
    let mut reports = Vec::new();
    for e in [1usize, 5] {
        let cfg = tiny(e);
        let r = count_params_flops(&cfg, vocab.size(), 2, 5, 2);
        let model = Seq2Seq::new(cfg, vocab.clone()).unwrap();
        let mut g = Graph::new();
        model
            .forward(&mut g, &Batch::new(&[&seq]).unwrap(), None)
            .unwrap();
        hand_ok &= r.params == 455 + 58 * e as u64
            && r.forward_macs == 1580
            && r.ffn_macs_per_token == 48
            && r.params == model.params.num_elements() as u64
            && r.forward_macs == g.macs();
        reports.push(r);
    }
    // Desk config: one extra set of experts per step from 1 to 5.
    let desk_vocab = Vocabulary::new(2000, 4, vec![16, 16, 16]).unwrap();
    let desk: Vec<_> = (1..=5)
        .map(|e| {
            let cfg = ModelConfig {
                experts: e,
                ..ModelConfig::desk()
            };
            count_params_flops(&cfg, desk_vocab.size(), 4, 5, 202)
        })
        .collect();
    let step = desk[1].params - desk[0].params;
    let linear = desk.windows(2).all(|w| w[1].params - w[0].params == step);
    let flat = desk
        .iter()
        .all(|r| r.forward_macs == desk[0].forward_macs && r.ffn_macs_per_token == desk[0].ffn_macs_per_token);
    outcome(
        hand_ok && linear && flat,
        format!(
            "tiny config params {} / {} for 1 / 5 experts, forward MACs {} / {} (hand count and executed graph agree {hand_ok}); desk params +{step} per expert, MACs constant {flat}",
            reports[0].params, reports[1].params, reports[0].forward_macs, reports[1].forward_macs
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Protocol fidelity

fn synthetic_cases(n: usize, n_items: u32, n_behaviors: u32) -> Vec<EvalCase> {
    (0..n)
        .map(|u| EvalCase {
            user: u,
            encoder: Vec::new(),
            target: Event {
                item: (u as u32).wrapping_mul(7919) % n_items,
                behavior: u as u32 % n_behaviors,
                timestamp: 0,
            },
        })
        .collect()
}

fn criterion_10() -> Outcome {
    let cases = synthetic_cases(200, 100, 4);
    let (acc, metrics) = evaluate(&mut OracleRanker, &cases, &Task::ALL, 3).unwrap();
    let oracle_ok = acc == 1.0
        && metrics
            .iter()
            .all(|m| (m.hr5, m.hr10, m.ndcg5, m.ndcg10) == (1.0, 1.0, 1.0, 1.0));

    let (n_items, n) = (200usize, 4000usize);
    let cases = synthetic_cases(n, n_items as u32, 4);
    let mut ranker = UniformRanker::new(n_items, 4, 1010);
    let mut band_ok = true;
    let mut worst_z = 0.0f64;
    for (task, behaviors) in [(Task::BehaviorSpecific, 1.0), (Task::BehaviorItem, 4.0)] {
        let m = evaluate_task(&mut ranker, &cases, task, 0).unwrap();
        for (k, hr) in [(5.0, m.hr5), (10.0, m.hr10)] {
            let p = k / n_items as f64 / behaviors;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let z = (hr - p).abs() / sigma;
            worst_z = worst_z.max(z);
            band_ok &= z <= 3.0;
        }
    }

    let few = synthetic_cases(8, 10, 3);
    let empty_ok = matches!(
        evaluate_task(&mut OracleRanker, &few, Task::Target, 3),
        Err(Error::EmptyEvaluation(_))
    ) && matches!(
        evaluate(&mut OracleRanker, &[], &[Task::BehaviorItem], 0),
        Err(Error::EmptyEvaluation(_))
    );
    outcome(
        oracle_ok && band_ok && empty_ok,
        format!(
            "oracle scores 1.0 on all tasks {oracle_ok}; uniform ranker worst |z| {worst_z:.2} (<= 3); empty sets raise errors {empty_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(usize, &str, Option<Duration>, fn() -> Outcome); 10] = [
        (1, "gradient correctness", Some(Duration::from_secs(60)), criterion_1),
        (2, "tokenizer injectivity and balance", Some(Duration::from_secs(120)), criterion_2),
        (3, "beam-search oracle equivalence", Some(Duration::from_secs(60)), criterion_3),
        (4, "behavior-aware allocation", Some(Duration::from_secs(1)), criterion_4),
        (5, "two-step learning on planted data", Some(Duration::from_secs(30 * 60)), criterion_5),
        (6, "conditioning effect", None, criterion_6),
        (7, "beam sweep direction", Some(Duration::from_secs(10 * 60)), criterion_7),
        (8, "overfit sanity", Some(Duration::from_secs(120)), criterion_8),
        (9, "expert accounting", None, criterion_9),
        (10, "protocol fidelity", None, criterion_10),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (id, name, budget, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let pass = pass && in_time;
        let timing = match budget {
            Some(b) => format!("{:.1}s of {}s", elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.1}s", elapsed.as_secs_f64()),
        };
        println!(
            "criterion {id:>2} {} {name}: {detail} [{timing}]",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
