use std::path::{Path, PathBuf};

use mbgen_core::datamodel::{
    generate_synthetic, ingest as ingest_log, load_item_features, write_item_features,
    BayesReference, BehaviorVocab, IngestOptions, InteractionDataset, SyntheticSpec,
};
use mbgen_core::eval::{
    beam_count_sweep, eval_cases, evaluate as run_eval, validation_ndcg10, write_sweep_csv,
    EvalCase, MetricsReport, ModelRanker, Ranker, Task,
};
use mbgen_core::inference::{write_predictions, BehaviorPrior, CodeTrie};
use mbgen_core::numerics::Tensor;
use mbgen_core::seqmodel::{count_params_flops, train as fit_model, training_examples, Seq2Seq};
use mbgen_core::tokenizer::{
    build_cid, code_distribution_stats, fit_rqvae_baseline, fit_sid, minimal_variance,
    TokenizerArtifact, TokenizerKind, Vocabulary,
};
use mbgen_core::Error;
use serde::Serialize;
use serde_json::json;
use tracing::info;

use crate::config::RunConfig;
use crate::run::{CliError, CliResult, Run};
use crate::{
    EvaluateArgs, FlopsArgs, Global, IngestArgs, Kind, Preset, PredictArgs, SweepArgs, SynthArgs,
    TaskArg, TokenizerArgs, TrainArgs,
};

fn args_json<T: Serialize>(a: &T) -> serde_json::Value {
    serde_json::to_value(a).expect("arguments serialize")
}

fn json_bytes<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v).map_err(Error::from)?;
    b.push(b'\n');
    Ok(b)
}

fn dataset_path(g: &Global) -> PathBuf {
    g.dataset.clone().unwrap_or_else(|| g.out.join("dataset.json"))
}

fn tokenizer_path(g: &Global) -> PathBuf {
    g.tokenizer.clone().unwrap_or_else(|| g.out.join("tokenizer.ckpt"))
}

fn checkpoint_path(g: &Global) -> PathBuf {
    g.checkpoint.clone().unwrap_or_else(|| g.out.join("model.ckpt"))
}

fn load_dataset(run: &mut Run, path: &Path) -> CliResult<InteractionDataset> {
    run.input(path, "dataset")?;
    let bytes = std::fs::read(path).map_err(Error::from)?;
    Ok(serde_json::from_slice(&bytes).map_err(Error::from)?)
}

fn load_tokenizer(run: &mut Run, path: &Path, ds: &InteractionDataset) -> CliResult<TokenizerArtifact> {
    run.input(path, "tokenizer checkpoint")?;
    let tok = TokenizerArtifact::load(path)?;
    if tok.codes.n_items() != ds.n_items() {
        return Err(CliError::Usage(format!(
            "tokenizer covers {} items but the dataset has {}",
            tok.codes.n_items(),
            ds.n_items()
        )));
    }
    Ok(tok)
}

fn load_model(run: &mut Run, path: &Path, tok: &TokenizerArtifact) -> CliResult<Seq2Seq> {
    run.input(path, "model checkpoint")?;
    let model = Seq2Seq::load(path)?;
    if model.vocab.digit_cards() != tok.codes.cardinalities() {
        return Err(CliError::Usage(format!(
            "model digit ranges {:?} do not match the tokenizer's {:?}",
            model.vocab.digit_cards(),
            tok.codes.cardinalities()
        )));
    }
    Ok(model)
}

fn write_dataset(run: &mut Run, ds: &InteractionDataset, features: &Tensor) -> CliResult<()> {
    run.write("dataset.json", &serde_json::to_vec(ds).map_err(Error::from)?)?;
    let csv = run.path("interactions.csv");
    ds.export(&csv)?;
    run.artifact(&csv)?;
    let f = run.path("features.csv");
    write_item_features(&f, ds.item_labels(), features)?;
    run.artifact(&f)?;
    Ok(())
}

fn user_subset(ds: &InteractionDataset, limit: usize) -> Vec<usize> {
    let n = if limit == 0 { ds.n_users() } else { limit.min(ds.n_users()) };
    (0..n).collect()
}

pub fn synth_data(g: &Global, cfg: RunConfig, a: &SynthArgs) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "synth-data", args_json(a));
    let seed = run.config.seed;
    let spec = match &a.spec {
        Some(p) => {
            run.input(p, "generator spec")?;
            let text = std::fs::read_to_string(p).map_err(Error::from)?;
            let mut table: toml::Table = toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
            table
                .try_into::<SyntheticSpec>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => match a.preset {
            Preset::Planted => SyntheticSpec::planted(a.users, seed),
            Preset::Skewed => SyntheticSpec::skewed(a.users, seed),
        },
    };
    let data = generate_synthetic(&spec)?;
    info!(
        users = data.dataset.n_users(),
        items = data.dataset.n_items(),
        "generated"
    );
    write_dataset(&mut run, &data.dataset, &data.features)?;
    let spec_toml = toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?;
    run.write("spec.toml", spec_toml.as_bytes())?;
    run.write("bayes.json", &json_bytes(&data.bayes)?)?;
    println!(
        "{} users, {} items, {} interactions; Bayes next-behavior accuracy {:.4}",
        data.dataset.n_users(),
        data.dataset.n_items(),
        data.dataset.n_interactions(),
        data.bayes.next_behavior_accuracy
    );
    run.finish()
}

pub fn ingest(g: &Global, cfg: RunConfig, a: &IngestArgs) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "ingest", args_json(a));
    run.input(&a.input, "interaction log")?;
    let behaviors = BehaviorVocab::with_target_name(a.behaviors.clone(), &a.target)?;
    let mut opts = IngestOptions::new(behaviors);
    opts.min_item_count = a.min_count;
    let ds = ingest_log(&a.input, &opts)?;
    run.write("dataset.json", &serde_json::to_vec(&ds).map_err(Error::from)?)?;
    let csv = run.path("interactions.csv");
    ds.export(&csv)?;
    run.artifact(&csv)?;
    if let Some(fp) = &a.features {
        run.input(fp, "item features")?;
        let features = load_item_features(fp, ds.item_labels())?;
        let f = run.path("features.csv");
        write_item_features(&f, ds.item_labels(), &features)?;
        run.artifact(&f)?;
    }
    println!(
        "{} users, {} items, {} interactions",
        ds.n_users(),
        ds.n_items(),
        ds.n_interactions()
    );
    run.finish()
}

pub fn fit_tokenizer(g: &Global, cfg: RunConfig, a: &TokenizerArgs) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "fit-tokenizer", args_json(a));
    let tc = &mut run.config.tokenizer;
    if let Some(k) = a.k {
        tc.k = k;
    }
    if let Some(m) = a.m {
        tc.m = m;
    }
    if let Some(e) = a.max_epochs {
        tc.max_epochs = e;
    }
    let kind = if a.cid {
        Kind::Cid
    } else if a.rqvae {
        Kind::Rqvae
    } else {
        Kind::Sid
    };
    let ds = load_dataset(&mut run, &dataset_path(g))?;
    let tc = run.config.tokenizer.clone();
    tc.validate()?;
    let features = || -> CliResult<Tensor> {
        let p = g.out.join("features.csv");
        if !p.is_file() {
            return Err(CliError::Usage(format!(
                "item features not found at {}; SID and the baseline need them",
                p.display()
            )));
        }
        Ok(load_item_features(&p, ds.item_labels())?)
    };
    let (artifact, state): (TokenizerArtifact, Box<dyn Fn(&mut mbgen_core::numerics::Checkpoint)>) =
        match kind {
            Kind::Sid => {
                run.input(&g.out.join("features.csv"), "item features")?;
                let fit = fit_sid(&features()?, &tc)?;
                let art = TokenizerArtifact {
                    kind: TokenizerKind::Sid,
                    config: tc.clone(),
                    codes: fit.codes.clone(),
                };
                (art, Box::new(move |c| fit.write_state(c)))
            }
            Kind::Cid => {
                let codes = build_cid(ds.n_items(), tc.k, tc.m, tc.seed)?;
                let art = TokenizerArtifact {
                    kind: TokenizerKind::Cid,
                    config: tc.clone(),
                    codes,
                };
                (art, Box::new(|_| {}))
            }
            Kind::Rqvae => {
                run.input(&g.out.join("features.csv"), "item features")?;
                let levels = a.levels.unwrap_or(tc.m);
                let fit = fit_rqvae_baseline(&features()?, &tc, levels)?;
                let art = TokenizerArtifact {
                    kind: TokenizerKind::RqVae,
                    config: tc.clone(),
                    codes: fit.codes.clone(),
                };
                (art, Box::new(move |c| fit.write_state(c)))
            }
        };
    let mut ckpt = artifact.to_checkpoint();
    state(&mut ckpt);
    let path = tokenizer_path(g);
    ckpt.save(&path)?;
    run.artifact(&path)?;
    let codes_csv = run.path("codes.csv");
    artifact.codes.export(&codes_csv, Some(ds.item_labels()))?;
    run.artifact(&codes_csv)?;
    let report = code_report(&artifact);
    run.write("code_stats.json", &json_bytes(&report)?)?;
    print_code_report(&report);
    run.finish()
}

#[derive(Serialize)]
struct LevelRow {
    level: usize,
    bins: f64,
    occupied: usize,
    max_count: usize,
    variance: f64,
    minimal_variance: f64,
}

#[derive(Serialize)]
struct CodeReport {
    kind: TokenizerKind,
    items: usize,
    cardinalities: Vec<usize>,
    injective: bool,
    collisions_before_last_digit: usize,
    levels: Vec<LevelRow>,
}

fn code_report(t: &TokenizerArtifact) -> CodeReport {
    let codes = &t.codes;
    let stats = code_distribution_stats(codes, codes.m());
    let prefix = code_distribution_stats(codes, codes.m() - 1);
    CodeReport {
        kind: t.kind,
        items: codes.n_items(),
        cardinalities: codes.cardinalities().to_vec(),
        injective: codes.is_injective(),
        collisions_before_last_digit: prefix.collisions,
        levels: stats
            .levels
            .iter()
            .map(|l| LevelRow {
                level: l.level,
                bins: l.bins,
                occupied: l.occupied,
                max_count: l.max_count,
                variance: l.variance,
                minimal_variance: minimal_variance(codes.n_items(), l.bins),
            })
            .collect(),
    }
}

fn print_code_report(r: &CodeReport) {
    println!(
        "{:?} codes for {} items, cardinalities {:?}, injective {}",
        r.kind, r.items, r.cardinalities, r.injective
    );
    println!("level  occupied  max  variance  minimal");
    for l in &r.levels {
        println!(
            "{:>5}  {:>8}  {:>3}  {:>8.4}  {:>7.4}",
            l.level, l.occupied, l.max_count, l.variance, l.minimal_variance
        );
    }
}

pub fn analyze_codes(g: &Global, cfg: RunConfig) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "analyze-codes", json!({}));
    let path = tokenizer_path(g);
    run.input(&path, "tokenizer checkpoint")?;
    let tok = TokenizerArtifact::load(&path)?;
    let report = code_report(&tok);
    run.write("code_stats.json", &json_bytes(&report)?)?;
    print_code_report(&report);
    run.finish()
}

pub fn train(g: &Global, cfg: RunConfig, a: &TrainArgs) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "train", args_json(a));
    let tc = &mut run.config.train;
    if let Some(v) = a.steps {
        tc.steps = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.warmup_steps {
        tc.warmup_steps = v;
    }
    if let Some(v) = a.eval_every {
        tc.eval_every = v;
    }
    if a.sliding_window {
        tc.sliding_window = true;
    }
    if let Some(e) = a.experts {
        run.config.model.experts = e;
    }
    let ds = load_dataset(&mut run, &dataset_path(g))?;
    let tok = load_tokenizer(&mut run, &tokenizer_path(g), &ds)?;
    let cfg = run.config.clone();
    let vocab = Vocabulary::new(
        cfg.user_buckets,
        ds.behaviors().len(),
        tok.codes.cardinalities().to_vec(),
    )?;
    let mut model = Seq2Seq::new(cfg.model.clone(), vocab)?;
    let examples = training_examples(
        &ds,
        &tok.codes,
        &model,
        cfg.train.max_history,
        cfg.train.sliding_window,
    )?;
    info!(examples = examples.len(), "training");
    let trie = CodeTrie::new(&tok.codes)?;
    let val_users = user_subset(&ds, cfg.decode.val_users);
    let val_cases = eval_cases(
        &ds,
        &tok.codes,
        &model.vocab,
        mbgen_core::datamodel::Split::Validation,
        cfg.train.max_history,
        Some(&val_users),
    )?;
    let mut validate =
        |m: &Seq2Seq| validation_ndcg10(m, &trie, &val_cases, cfg.decode.val_beams);
    let use_val = cfg.train.eval_every > 0;
    let report = fit_model(
        &mut model,
        &examples,
        &cfg.train,
        if use_val { Some(&mut validate) } else { None },
    )?;
    let path = checkpoint_path(g);
    model.save(
        &path,
        json!({
            "dataset_hash": ds.content_hash(),
            "tokenizer_hash": tok.config_hash(),
            "train": cfg.train,
        }),
    )?;
    run.artifact(&path)?;
    let log = run.path("train_log.csv");
    report.write_csv(&log)?;
    run.artifact(&log)?;
    run.write("train_report.json", &json_bytes(&report)?)?;
    println!(
        "{} steps, loss {:.4} -> {:.4}{}",
        report.steps,
        report.initial_loss,
        report.final_loss,
        match (report.best_step, report.best_val_ndcg10) {
            (Some(s), Some(v)) => format!(", best validation NDCG@10 {v:.4} at step {s}"),
            _ => String::new(),
        }
    );
    run.finish()
}

struct Loaded {
    ds: InteractionDataset,
    tok: TokenizerArtifact,
    model: Seq2Seq,
}

fn load_all(run: &mut Run, g: &Global) -> CliResult<Loaded> {
    // The checkpoint is checked first so a missing model is reported as such.
    let ckpt = checkpoint_path(g);
    if !ckpt.is_file() {
        return Err(CliError::Usage(format!(
            "model checkpoint not found at {}; run `mbgen train` first",
            ckpt.display()
        )));
    }
    let ds = load_dataset(run, &dataset_path(g))?;
    let tok = load_tokenizer(run, &tokenizer_path(g), &ds)?;
    let model = load_model(run, &ckpt, &tok)?;
    Ok(Loaded { ds, tok, model })
}

fn cases_for(run: &Run, l: &Loaded, split: mbgen_core::datamodel::Split) -> CliResult<Vec<EvalCase>> {
    let users = user_subset(&l.ds, run.config.decode.users);
    Ok(eval_cases(
        &l.ds,
        &l.tok.codes,
        &l.model.vocab,
        split,
        run.config.train.max_history,
        Some(&users),
    )?)
}

fn apply_decode(run: &mut Run, n_beams: Option<usize>, users: Option<usize>) {
    if let Some(b) = n_beams {
        run.config.decode.n_beams = b;
    }
    if let Some(u) = users {
        run.config.decode.users = u;
    }
}

pub fn predict(g: &Global, cfg: RunConfig, a: &PredictArgs) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "predict", args_json(a));
    apply_decode(&mut run, a.decode.n_beams, a.decode.users);
    if let Some(n) = a.n {
        run.config.decode.n = n;
    }
    let l = load_all(&mut run, g)?;
    let mut cases = cases_for(&run, &l, a.decode.split.split())?;
    let behaviors = l.ds.behaviors();
    // Conditional prompts are carried in the case's behavior field.
    let prompt = match (a.task, &a.behavior) {
        (TaskArg::Target, _) => Some(behaviors.target()),
        (TaskArg::BehaviorSpecific, Some(name)) => Some(behaviors.index_of(name)?),
        _ => None,
    };
    if let Some(b) = prompt {
        for c in &mut cases {
            c.target.behavior = b;
        }
    }
    let task = match a.task {
        TaskArg::Target => Task::BehaviorSpecific,
        t => t.task(),
    };
    let trie = CodeTrie::new(&l.tok.codes)?;
    let mut ranker = ModelRanker {
        model: &l.model,
        trie: &trie,
        n_beams: run.config.decode.n_beams,
        prior: BehaviorPrior::Model,
    };
    let ranked = ranker.rank(&cases, task, run.config.decode.n)?;
    let queries: Vec<String> = cases
        .iter()
        .map(|c| l.ds.users()[c.user].raw_id.clone())
        .collect();
    let path = run.path("predictions.csv");
    write_predictions(&path, &queries, &ranked, behaviors, l.ds.item_labels())?;
    run.artifact(&path)?;
    println!("{} users ranked into {}", cases.len(), path.display());
    run.finish()
}

/// Thresholds for `--check`, taken from the planted-data acceptance targets.
fn check_report(report: &MetricsReport, n_items: usize, bayes: Option<&BayesReference>) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    if let Some(b) = bayes {
        let need = 0.9 * b.next_behavior_accuracy;
        out.push((
            format!(
                "next-behavior accuracy {:.4} >= 0.9 x Bayes {:.4}",
                report.next_behavior_accuracy, b.next_behavior_accuracy
            ),
            report.next_behavior_accuracy >= need,
        ));
    }
    let spec = report.task(Task::BehaviorSpecific);
    if let Some(t) = spec {
        let need = 5.0 * 10.0 / n_items as f64;
        out.push((
            format!("behavior-specific HR@10 {:.4} >= {need:.4}", t.hr10),
            t.hr10 >= need,
        ));
    }
    if let (Some(s), Some(j)) = (spec, report.task(Task::BehaviorItem)) {
        out.push((
            format!(
                "behavior-item NDCG@10 {:.4} <= behavior-specific NDCG@10 {:.4}",
                j.ndcg10, s.ndcg10
            ),
            j.ndcg10 <= s.ndcg10,
        ));
    }
    out
}

pub fn evaluate(g: &Global, cfg: RunConfig, a: &EvaluateArgs) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "evaluate", args_json(a));
    apply_decode(&mut run, a.decode.n_beams, a.decode.users);
    let l = load_all(&mut run, g)?;
    let split = a.decode.split.split();
    let cases = cases_for(&run, &l, split)?;
    let tasks: Vec<Task> = if a.task.is_empty() {
        Task::ALL.to_vec()
    } else {
        a.task.iter().map(|t| t.task()).collect()
    };
    let trie = CodeTrie::new(&l.tok.codes)?;
    let mut ranker = ModelRanker {
        model: &l.model,
        trie: &trie,
        n_beams: run.config.decode.n_beams,
        prior: BehaviorPrior::Model,
    };
    let (accuracy, metrics) = run_eval(&mut ranker, &cases, &tasks, l.ds.behaviors().target())?;
    let report = MetricsReport {
        split: format!("{split:?}").to_lowercase(),
        evaluated_users: cases.len(),
        n_beams: run.config.decode.n_beams,
        next_behavior_accuracy: accuracy,
        tasks: metrics,
        config_hash: l.model.config_hash(),
        dataset_hash: l.ds.content_hash(),
    };
    let json_path = run.path("metrics.json");
    report.write_json(&json_path)?;
    run.artifact(&json_path)?;
    let csv_path = run.path("metrics.csv");
    report.write_csv(&csv_path)?;
    run.artifact(&csv_path)?;

    println!(
        "{} users, split {}, {} beams; next-behavior accuracy {:.4}",
        report.evaluated_users, report.split, report.n_beams, report.next_behavior_accuracy
    );
    println!("{:<18} {:>6} {:>7} {:>7} {:>7} {:>7}", "task", "users", "HR@5", "HR@10", "NDCG@5", "NDCG@10");
    for t in &report.tasks {
        println!(
            "{:<18} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            t.task.name(),
            t.users,
            t.hr5,
            t.hr10,
            t.ndcg5,
            t.ndcg10
        );
    }

    if a.check {
        let bayes_path = g.out.join("bayes.json");
        let bayes: Option<BayesReference> = if bayes_path.is_file() {
            run.input(&bayes_path, "Bayes reference")?;
            let bytes = std::fs::read(&bayes_path).map_err(Error::from)?;
            Some(serde_json::from_slice(&bytes).map_err(Error::from)?)
        } else {
            None
        };
        let checks = check_report(&report, l.ds.n_items(), bayes.as_ref());
        let mut failed = Vec::new();
        for (what, ok) in &checks {
            println!("{} {what}", if *ok { "PASS" } else { "FAIL" });
            if !ok {
                failed.push(what.clone());
            }
        }
        let hash = run.finish()?;
        if !failed.is_empty() {
            println!("manifest {hash}");
            return Err(CliError::CheckFailed(failed));
        }
        return Ok(hash);
    }
    run.finish()
}

pub fn sweep_beams(g: &Global, cfg: RunConfig, a: &SweepArgs) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "sweep-beams", args_json(a));
    apply_decode(&mut run, a.decode.n_beams, a.decode.users);
    if a.beams.iter().any(|&b| b < run.config.decode.n) {
        return Err(CliError::Usage(format!(
            "every beam count must be at least N = {}",
            run.config.decode.n
        )));
    }
    let l = load_all(&mut run, g)?;
    let cases = cases_for(&run, &l, a.decode.split.split())?;
    let trie = CodeTrie::new(&l.tok.codes)?;
    let rows = beam_count_sweep(&l.model, &trie, &cases, &a.beams, &BehaviorPrior::Model)?;
    let path = run.path("sweep.csv");
    write_sweep_csv(&path, &rows)?;
    run.artifact(&path)?;
    println!("{:<15} {:>5} {:>7} {:>7}", "mode", "beams", "HR@10", "NDCG@10");
    for r in &rows {
        println!(
            "{:<15} {:>5} {:>7.4} {:>7.4}",
            r.mode.name(),
            r.beams,
            r.hr10,
            r.ndcg10
        );
    }
    run.finish()
}

#[derive(Serialize)]
struct FlopsRow {
    experts: usize,
    vocab_size: usize,
    encoder_len: usize,
    decoder_len: usize,
    params: u64,
    sparse_ffn_params: u64,
    forward_macs: u64,
    ffn_macs_per_token: u64,
}

pub fn count_flops(g: &Global, cfg: RunConfig, a: &FlopsArgs) -> CliResult<String> {
    let mut run = Run::new(g.out.clone(), cfg, "count-flops", args_json(a));
    // Vocabulary from the fitted tokenizer when present, otherwise from the
    // configured K and m with four behaviors.
    let tok_path = tokenizer_path(g);
    let ds_path = dataset_path(g);
    let (n_behaviors, cards) = if tok_path.is_file() && ds_path.is_file() {
        let ds = load_dataset(&mut run, &ds_path)?;
        let tok = load_tokenizer(&mut run, &tok_path, &ds)?;
        (ds.behaviors().len(), tok.codes.cardinalities().to_vec())
    } else {
        let t = &run.config.tokenizer;
        (4, vec![t.k; t.m])
    };
    let vocab = Vocabulary::new(run.config.user_buckets, n_behaviors, cards)?;
    let encoder_len = a.encoder_len.unwrap_or(run.config.model.max_encoder_len);
    let decoder_len = 1 + vocab.tuple_len();
    let mut rows = Vec::new();
    for &e in &a.experts {
        let mut mc = run.config.model.clone();
        mc.experts = e;
        mc.validate()?;
        let c = count_params_flops(&mc, vocab.size(), n_behaviors, decoder_len, encoder_len);
        rows.push(FlopsRow {
            experts: e,
            vocab_size: vocab.size(),
            encoder_len,
            decoder_len,
            params: c.params,
            sparse_ffn_params: c.sparse_ffn_params,
            forward_macs: c.forward_macs,
            ffn_macs_per_token: c.ffn_macs_per_token,
        });
    }
    run.write("flops.json", &json_bytes(&rows)?)?;
    println!("{:>7} {:>12} {:>12} {:>14} {:>10}", "experts", "params", "sparse", "forward MACs", "FFN/token");
    for r in &rows {
        println!(
            "{:>7} {:>12} {:>12} {:>14} {:>10}",
            r.experts, r.params, r.sparse_ffn_params, r.forward_macs, r.ffn_macs_per_token
        );
    }
    run.finish()
}
