use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use faser_core::corpus::CorpusIndex;
use faser_core::dedup::dedup;
use faser_core::encoder::{fingerprint, EmbeddingVector, Encoder};
use faser_core::evaluate::{build_pools, evaluate_pools, vuln_search, zero_shot_pools, EvalSummary, RankResult, VulnQuery};
use faser_core::fixtures::generate;
use faser_core::index::{build_index, top_k, EmbeddingStore};
use faser_core::ingest::{parse_corpus, to_function_string, write_corpus, write_function_strings, FunctionString};
use faser_core::normalize::{NormalizationMode, NormalizedFunction, Normalizer, RegisterTable};
use faser_core::tokenize::{build_vocab, encode, EncodedFunction, GlobalPolicy, Vocabulary};
use faser_core::train::{fit, TrainConfig, Trainer};
use rayon::prelude::*;
use serde_json::json;

use crate::config::FileConfig;
use crate::io::{create, open, read_encoder, read_jsonl, read_vocab, write_jsonl};
use crate::manifest::{beside, ManifestBuilder};
use crate::*;

struct Ctx {
    cfg: FileConfig,
    quiet: bool,
}

impl Ctx {
    fn event(&self, event: &str, fields: serde_json::Value) {
        if self.quiet {
            return;
        }
        let mut obj = json!({ "event": event });
        if let (Some(o), serde_json::Value::Object(f)) = (obj.as_object_mut(), fields) {
            o.extend(f);
        }
        eprintln!("{obj}");
    }

    fn policy(&self) -> GlobalPolicy {
        policy(self.cfg.vocab.global_every)
    }
}

fn policy(every: usize) -> GlobalPolicy {
    match every {
        0 => GlobalPolicy::ClsOnly,
        k => GlobalPolicy::EveryK { k },
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = Ctx {
        cfg: FileConfig::load(cli.config.as_deref())?,
        quiet: cli.quiet,
    };
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(c) = &cli.config {
        inputs.push(c);
    }
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a, &inputs),
        Command::Normalize(a) => normalize(&ctx, a, &inputs),
        Command::Dedup(a) => dedup_cmd(&ctx, a, &inputs),
        Command::Vocab(VocabCommand::Build(a)) => vocab_build(&ctx, a, &inputs),
        Command::Vocab(VocabCommand::Encode(a)) => vocab_encode(&ctx, a, &inputs),
        Command::Train(a) => train(&ctx, a, &inputs),
        Command::Index(IndexCommand::Build(a)) => index_build(&ctx, a, &inputs),
        Command::Index(IndexCommand::Search(a)) => index_search(&ctx, a),
        Command::Eval(EvalCommand::Pools(a)) => eval_pools(&ctx, a, &inputs),
        Command::Eval(EvalCommand::Vuln(a)) => eval_vuln(&ctx, a, &inputs),
        Command::Eval(EvalCommand::ZeroShot(a)) => eval_zero_shot(&ctx, a, &inputs),
        Command::Fixtures(FixturesCommand::Generate(a)) => fixtures(&ctx, a, &inputs),
    }
}

fn manifest(config: serde_json::Value, seed: Option<u64>, inputs: &[&Path]) -> anyhow::Result<ManifestBuilder> {
    let mut m = ManifestBuilder::start(config, seed);
    for p in inputs {
        m.input(p)?;
    }
    Ok(m)
}

fn ingest(ctx: &Ctx, a: &IngestArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let m = manifest(json!({}), None, &[extra, &[a.input.as_path()]].concat())?;
    let raw = parse_corpus(open(&a.input)?).with_context(|| format!("{}", a.input.display()))?;
    let strings: Vec<FunctionString> = raw.iter().map(to_function_string).collect();
    let mut w = create(&a.out)?;
    write_function_strings(&mut w, &strings)?;
    w.flush()?;
    ctx.event("ingest", json!({ "functions": strings.len(), "out": a.out }));
    m.finish(std::slice::from_ref(&a.out), &beside(&a.out))
}

fn normalize(ctx: &Ctx, a: &NormalizeArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let mut section = ctx.cfg.normalize.clone();
    section.register_norm |= a.register_norm;
    section.addr_min = a.addr_min.unwrap_or(section.addr_min);
    section.reg_table = a.reg_table.clone().or(section.reg_table);
    let mut inputs = [extra, &[a.input.as_path()]].concat();
    let mut registers = RegisterTable::builtin();
    if let Some(path) = &section.reg_table {
        let table = RegisterTable::from_json(open(path)?).with_context(|| format!("{}", path.display()))?;
        registers.override_with(table);
        inputs.push(path);
    }
    let m = manifest(serde_json::to_value(&section)?, None, &inputs)?;
    let mode = if section.register_norm {
        NormalizationMode::RN
    } else {
        NormalizationMode::NRM
    };
    let normalizer = Normalizer::new(mode)
        .with_addr_min(section.addr_min)
        .with_registers(registers);
    let strings: Vec<FunctionString> = read_jsonl(&a.input)?;
    let out = strings
        .par_iter()
        .map(|fs| normalizer.normalize_function(fs))
        .collect::<faser_core::Result<Vec<NormalizedFunction>>>()?;
    write_jsonl(&a.out, &out)?;
    ctx.event("normalize", json!({ "functions": out.len(), "register_norm": section.register_norm }));
    m.finish(std::slice::from_ref(&a.out), &beside(&a.out))
}

fn dedup_cmd(ctx: &Ctx, a: &DedupArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let m = manifest(json!({}), None, &[extra, &[a.input.as_path()]].concat())?;
    let fns: Vec<NormalizedFunction> = read_jsonl(&a.input)?;
    let (kept, report) = dedup(fns);
    write_jsonl(&a.out, &kept)?;
    let text = serde_json::to_string(&report)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.report {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path.clone());
    }
    println!("{text}");
    ctx.event("dedup", json!({ "kept": kept.len() }));
    m.finish(&outputs, &beside(&a.out))
}

fn vocab_build(ctx: &Ctx, a: &VocabBuildArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let min_frequency = a.min_frequency.unwrap_or(ctx.cfg.vocab.min_frequency);
    let m = manifest(json!({ "min_frequency": min_frequency }), None, &[extra, &[a.input.as_path()]].concat())?;
    let fns: Vec<NormalizedFunction> = read_jsonl(&a.input)?;
    let vocab = build_vocab(&fns, min_frequency)?;
    let mut w = create(&a.out)?;
    vocab.write(&mut w)?;
    w.flush()?;
    ctx.event("vocab", json!({ "size": vocab.len() }));
    m.finish(std::slice::from_ref(&a.out), &beside(&a.out))
}

fn vocab_encode(ctx: &Ctx, a: &VocabEncodeArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let input_len = a.input_len.unwrap_or(ctx.cfg.encoder.input_len);
    if input_len < 2 {
        bail!("input length must be at least 2, got {input_len}");
    }
    let policy = policy(a.global_every.unwrap_or(ctx.cfg.vocab.global_every));
    let m = manifest(
        json!({ "input_len": input_len, "policy": policy }),
        None,
        &[extra, &[a.input.as_path(), a.vocab.as_path()]].concat(),
    )?;
    let fns: Vec<NormalizedFunction> = read_jsonl(&a.input)?;
    let vocab = read_vocab(&a.vocab)?;
    let records: Vec<serde_json::Value> = fns
        .iter()
        .map(|f| {
            let e = encode(f, &vocab, input_len, policy);
            let global: Vec<usize> = (0..e.len()).filter(|&p| e.global_mask[p]).collect();
            json!({ "label": f.label, "ids": e.ids, "true_length": e.true_length, "global": global })
        })
        .collect();
    write_jsonl(&a.out, &records)?;
    ctx.event("encode", json!({ "functions": records.len(), "input_len": input_len }));
    m.finish(std::slice::from_ref(&a.out), &beside(&a.out))
}

fn encode_all(fns: &[NormalizedFunction], vocab: &Vocabulary, input_len: usize, policy: GlobalPolicy) -> Vec<EncodedFunction> {
    fns.iter().map(|f| encode(f, vocab, input_len, policy)).collect()
}

fn train(ctx: &Ctx, a: &TrainArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let mut tc = TrainConfig {
        sampler: cfg.sampler,
        loss: cfg.loss,
        optimizer: cfg.optimizer,
        epochs: a.epochs.unwrap_or(cfg.train.epochs),
        all_pairs: cfg.train.all_pairs,
        save_every: a.save_every.or(cfg.train.save_every),
    };
    if a.seed.is_some() {
        tc.sampler.seed = seed;
    }
    tc.sampler.batch_size = a.batch_size.unwrap_or(tc.sampler.batch_size);
    tc.sampler.functions_per_epoch = a.functions_per_epoch.unwrap_or(tc.sampler.functions_per_epoch);
    tc.optimizer.learning_rate = a.learning_rate.unwrap_or(tc.optimizer.learning_rate);
    tc.optimizer.accumulation_steps = a.accumulation_steps.unwrap_or(tc.optimizer.accumulation_steps);
    tc.loss.margin = a.margin.unwrap_or(tc.loss.margin);
    tc.loss.scale = a.scale.unwrap_or(tc.loss.scale);
    tc.validate()?;

    let vocab = read_vocab(&a.vocab)?;
    let mut enc_cfg = cfg.encoder.clone();
    enc_cfg.vocab_size = vocab.len();
    enc_cfg.validate()?;
    let snapshot = json!({ "encoder": enc_cfg, "train": tc, "global_every": cfg.vocab.global_every });
    let m = manifest(snapshot, Some(seed), &[extra, &[a.corpus.as_path(), a.vocab.as_path()]].concat())?;

    let fns: Vec<NormalizedFunction> = read_jsonl(&a.corpus)?;
    let data = encode_all(&fns, &vocab, enc_cfg.input_len, ctx.policy());
    let index = CorpusIndex::new(fns.iter().map(|f| f.label.as_str()));
    let mut trainer = Trainer::new(Encoder::new(enc_cfg, seed)?, tc)?;
    let reports = fit(&mut trainer, &data, &index, &a.out_dir)?;
    for r in &reports {
        ctx.event("epoch", json!({ "epoch": r.epoch, "mean_loss": r.mean_loss, "optimizer_steps": r.optimizer_steps }));
    }
    let mut outputs: Vec<PathBuf> = std::fs::read_dir(&a.out_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "fasr" || x == "jsonl"))
        .collect();
    outputs.sort();
    m.finish(&outputs, &a.out_dir.join("manifest.json"))
}

struct Model {
    vocab: Vocabulary,
    encoder: Encoder,
}

fn load_model(m: &ModelArgs) -> anyhow::Result<Model> {
    let vocab = read_vocab(&m.vocab)?;
    let encoder = read_encoder(&m.checkpoint)?;
    if encoder.config.vocab_size != vocab.len() {
        bail!(
            "checkpoint {} expects {} tokens but vocabulary {} has {}",
            m.checkpoint.display(),
            encoder.config.vocab_size,
            m.vocab.display(),
            vocab.len()
        );
    }
    Ok(Model { vocab, encoder })
}

fn embed(ctx: &Ctx, model: &Model, fns: &[NormalizedFunction]) -> anyhow::Result<Vec<EmbeddingVector>> {
    let data = encode_all(fns, &model.vocab, model.encoder.config.input_len, ctx.policy());
    Ok(model.encoder.embed_batch(&data)?)
}

fn index_build(ctx: &Ctx, a: &IndexBuildArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let batch_size = a.batch_size.unwrap_or(ctx.cfg.index.batch_size);
    let inputs = [extra, &[a.corpus.as_path(), a.model.vocab.as_path(), a.model.checkpoint.as_path()]].concat();
    let m = manifest(json!({ "batch_size": batch_size, "global_every": ctx.cfg.vocab.global_every }), None, &inputs)?;
    let model = load_model(&a.model)?;
    let fns: Vec<NormalizedFunction> = read_jsonl(&a.corpus)?;
    let store = build_index(&fns, &model.encoder, &model.vocab, ctx.policy(), batch_size)?;
    let mut w = create(&a.out)?;
    store.write(&mut w)?;
    w.flush()?;
    ctx.event("index", json!({ "rows": store.len(), "dim": store.dim() }));
    m.finish(std::slice::from_ref(&a.out), &beside(&a.out))
}

fn index_search(ctx: &Ctx, a: &IndexSearchArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let store = EmbeddingStore::read(open(&a.store)?).with_context(|| format!("store {}", a.store.display()))?;
    if store.fingerprint() != fingerprint(&model.encoder) {
        bail!("store {} was built with a different checkpoint", a.store.display());
    }
    let fns: Vec<NormalizedFunction> = read_jsonl(&a.corpus)?;
    let query = fns
        .iter()
        .find(|f| f.label == a.query_fn && a.query_binary.as_ref().is_none_or(|b| *b == f.meta.binary_id))
        .with_context(|| format!("no function {} in {}", a.query_fn, a.corpus.display()))?;
    let emb = embed(ctx, &model, std::slice::from_ref(query))?;
    let hits = top_k(&store, emb[0].as_slice(), a.k)?;
    let mut out = std::io::stdout().lock();
    for (rank, (id, sim)) in hits.iter().enumerate() {
        let row = &store.rows()[store.position(*id).expect("id from store")];
        writeln!(out, "{}", json!({ "rank": rank + 1, "id": id, "label": row.label, "similarity": sim }))?;
    }
    Ok(())
}

/// Opens `--out` or stdout.
fn sink(out: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_pool_results(
    out: Option<&Path>,
    format: Format,
    fns: &[NormalizedFunction],
    results: &[RankResult],
    summary: &EvalSummary,
    pools: &[faser_core::evaluate::SearchPool],
) -> anyhow::Result<()> {
    let mut w = sink(out)?;
    match format {
        Format::Json => {
            for (p, r) in pools.iter().zip(results) {
                let rec = json!({
                    "pool": r.pool,
                    "query": fns[p.query].label,
                    "query_binary": fns[p.query].meta.binary_id,
                    "positive_binary": fns[p.positive].meta.binary_id,
                    "candidates": p.candidates.len(),
                    "rank": r.rank_of_positive,
                });
                writeln!(w, "{rec}")?;
            }
            writeln!(
                w,
                "{}",
                json!({ "summary": {
                    "pools": results.len(),
                    "recall_at_1": summary.recall_at_1,
                    "mrr_at_10": summary.mrr_at_10,
                    "mean_rank": summary.mean_rank,
                    "median_rank": summary.median_rank,
                }})
            )?;
        }
        Format::Table => {
            writeln!(w, "pools\trecall@1\tmrr@10\tmean rank\tmedian rank")?;
            writeln!(
                w,
                "{}\t{:.4}\t{:.4}\t{:.2}\t{:.1}",
                results.len(),
                summary.recall_at_1,
                summary.mrr_at_10,
                summary.mean_rank,
                summary.median_rank
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

struct PoolSettings {
    num_pools: usize,
    negatives: usize,
    seed: u64,
}

fn pool_settings(ctx: &Ctx, a: &PoolArgs) -> PoolSettings {
    PoolSettings {
        num_pools: a.num_pools.unwrap_or(ctx.cfg.eval.num_pools),
        negatives: a.negatives.unwrap_or(ctx.cfg.eval.negatives),
        seed: a.seed.unwrap_or(ctx.cfg.eval.seed),
    }
}

fn finish_optional(m: ManifestBuilder, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(p) => m.finish(std::slice::from_ref(p), &beside(p)),
        None => Ok(()),
    }
}

fn eval_pools(ctx: &Ctx, a: &EvalPoolsArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let s = pool_settings(ctx, &a.pools);
    let inputs = [extra, &[a.corpus.as_path(), a.model.vocab.as_path(), a.model.checkpoint.as_path()]].concat();
    let m = manifest(json!({ "num_pools": s.num_pools, "negatives": s.negatives }), Some(s.seed), &inputs)?;
    let model = load_model(&a.model)?;
    let fns: Vec<NormalizedFunction> = read_jsonl(&a.corpus)?;
    let index = CorpusIndex::new(fns.iter().map(|f| f.label.as_str()));
    let pools = build_pools(&index, s.num_pools, s.negatives, s.seed)?;
    let emb = embed(ctx, &model, &fns)?;
    let (results, summary) = evaluate_pools(&pools, &emb)?;
    write_pool_results(a.out.as_deref(), a.format, &fns, &results, &summary, &pools)?;
    ctx.event("eval", json!({ "recall_at_1": summary.recall_at_1, "mrr_at_10": summary.mrr_at_10 }));
    finish_optional(m, a.out.as_ref())
}

fn eval_vuln(ctx: &Ctx, a: &EvalVulnArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let inputs = [
        extra,
        &[a.queries.as_path(), a.target.as_path(), a.model.vocab.as_path(), a.model.checkpoint.as_path()],
    ]
    .concat();
    let m = manifest(json!({}), None, &inputs)?;
    let model = load_model(&a.model)?;
    let qs: Vec<NormalizedFunction> = read_jsonl(&a.queries)?;
    let targets: Vec<NormalizedFunction> = read_jsonl(&a.target)?;
    let queries: Vec<VulnQuery> = qs
        .iter()
        .zip(embed(ctx, &model, &qs)?)
        .map(|(f, e)| VulnQuery {
            name: format!("{}@{}", f.label, f.meta.binary_id),
            label: f.label.clone(),
            architecture: f.meta.architecture.clone(),
            embedding: e.into_inner(),
        })
        .collect();
    let labels: Vec<String> = targets.iter().map(|f| f.label.clone()).collect();
    let report = vuln_search(&queries, &labels, &embed(ctx, &model, &targets)?)?;
    let mut w = sink(a.out.as_deref())?;
    match a.format {
        Format::Json => {
            for r in &report.results {
                writeln!(w, "{}", serde_json::to_string(r)?)?;
            }
            let summary = report.summary.as_ref().map(|s| {
                json!({ "mean_rank": s.mean_rank, "median_rank": s.median_rank, "recall_at_1": s.recall_at_1, "mrr_at_10": s.mrr_at_10 })
            });
            writeln!(w, "{}", json!({ "summary": summary, "absent": report.absent, "targets": labels.len() }))?;
        }
        Format::Table => write!(w, "{}", report.table())?,
    }
    w.flush()?;
    drop(w);
    ctx.event("vuln", json!({ "queries": queries.len(), "absent": report.absent.len() }));
    finish_optional(m, a.out.as_ref())
}

fn eval_zero_shot(ctx: &Ctx, a: &EvalZeroShotArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let s = pool_settings(ctx, &a.pools);
    let inputs = [
        extra,
        &[a.train_corpus.as_path(), a.corpus.as_path(), a.model.vocab.as_path(), a.model.checkpoint.as_path()],
    ]
    .concat();
    let m = manifest(
        json!({ "holdout": a.holdout, "num_pools": s.num_pools, "negatives": s.negatives }),
        Some(s.seed),
        &inputs,
    )?;
    let model = load_model(&a.model)?;
    let trained: Vec<NormalizedFunction> = read_jsonl(&a.train_corpus)?;
    let fns: Vec<NormalizedFunction> = read_jsonl(&a.corpus)?;
    let archs: Vec<String> = fns.iter().map(|f| f.meta.architecture.clone()).collect();
    let index = CorpusIndex::new(fns.iter().map(|f| f.label.as_str()));
    let pools = zero_shot_pools(
        trained.iter().map(|f| f.meta.architecture.as_str()),
        &archs,
        &a.holdout,
        &index,
        s.num_pools,
        s.negatives,
        s.seed,
    )?;
    let emb = embed(ctx, &model, &fns)?;
    let (results, summary) = evaluate_pools(&pools, &emb)?;
    write_pool_results(a.out.as_deref(), a.format, &fns, &results, &summary, &pools)?;
    ctx.event("zero_shot", json!({ "holdout": a.holdout, "recall_at_1": summary.recall_at_1 }));
    finish_optional(m, a.out.as_ref())
}

fn fixtures(ctx: &Ctx, a: &FixturesArgs, extra: &[&Path]) -> anyhow::Result<()> {
    let mut cfg = ctx.cfg.fixtures.clone();
    cfg.num_labels = a.labels.unwrap_or(cfg.num_labels);
    cfg.variants_per_label = a.variants.unwrap_or(cfg.variants_per_label);
    if let Some(archs) = &a.architectures {
        cfg.architectures = archs.clone();
    }
    cfg.architecture_renaming &= !a.no_arch_renaming;
    if let Some(r) = a.mutation {
        cfg.mutation = faser_core::fixtures::MutationRates::uniform(r);
    }
    if let Some(r) = a.register_renaming {
        cfg.mutation.register_renaming = r;
    }
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let m = manifest(serde_json::to_value(&cfg)?, Some(cfg.seed), extra)?;
    let corpus = generate(&cfg)?;
    let mut w = create(&a.out)?;
    write_corpus(&mut w, &corpus)?;
    w.flush()?;
    ctx.event("fixtures", json!({ "functions": corpus.len(), "out": a.out }));
    m.finish(std::slice::from_ref(&a.out), &beside(&a.out))
}
