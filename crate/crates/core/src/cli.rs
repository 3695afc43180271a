//! The `cogt` command line. Exit codes: 0 success, 1 runtime error,
//! 2 invalid arguments, 3 validation failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::cgm::{build_cgm, PredictionMode};
use crate::config::parse_kv;
use crate::conllu::{parse_conllu, serialize_conllu};
use crate::dataset::{
    feature_path, load_dataset, load_trees, load_vocab, read_features, write_features,
    write_jsonl, write_text, DatasetError, SampleRecord, SAMPLES_FILE, TREES_FILE, VOCAB_FILE,
};
use crate::decoder::{DecoderConfig, DecoderError, FormatError};
use crate::manifest::ManifestBuilder;
use crate::mask::{compile, MaskError};
use crate::pipeline::{
    load_checkpoint, save_checkpoint, save_metrics, sidecar, synthesize, PipelineError,
    SynthOptions, TASKS_FILE,
};
use crate::scorer::{load_tasks, CaptionParser, ScoreError, ScorePath, Scorer, TreeLookup};
use crate::seed::rng_for;
use crate::subword::{build_vocab, tokenize_tree, VocabError};
use crate::synthbench::TemplateParser;
use crate::trainer::{TrainConfig, TrainError};
use crate::verify::{
    decoder_grad_check, independence_check, leak_check, normalization_check, permutation_check,
    random_caption, random_visual, scoring_path_check, CheckResult,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Conllu(_)
            | DatasetError::Vocab(_)
            | DatasetError::SampleLine { .. }
            | DatasetError::MissingTree(_) => CliError::Validation(e.to_string()),
            DatasetError::Features {
                source: FormatError::Io(_),
                ..
            }
            | DatasetError::Io { .. } => runtime(e),
            DatasetError::Features { .. } => CliError::Validation(e.to_string()),
        }
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::EmptyDataset | TrainError::Config(_) => CliError::Validation(e.to_string()),
            TrainError::Decoder(DecoderError::Config(_)) => CliError::Validation(e.to_string()),
            _ => runtime(e),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Io(_) => runtime(e),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Dataset(d) => d.into(),
            PipelineError::Vocab(v) => v.into(),
            PipelineError::Score(s) => s.into(),
            PipelineError::Train(t) => t.into(),
            PipelineError::Format(FormatError::Io(_)) | PipelineError::Io { .. } => runtime(e),
            PipelineError::Format(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MaskError> for CliError {
    fn from(e: MaskError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "cogt", version, about = "Dependency-ordered caption decoder for image-to-text retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// CoNLL-U parses to a tokenized-tree dataset.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset and held-out retrieval tasks.
    Synth(SynthArgs),
    /// Dump attention plans for every tree of a dataset.
    CompileMasks(CompileMasksArgs),
    /// Train a decoder.
    Train(TrainArgs),
    /// Evaluate a checkpoint on retrieval tasks.
    Score(ScoreArgs),
    /// Run invariant checks against a checkpoint.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub conllu: PathBuf,
    /// Vocabulary file; built from the corpus and written here if missing.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub vocab_size: usize,
    /// Directory of `<sentence_id>.cogtvis` files to pair with the trees.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out scenes for retrieval tasks (default n/10).
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub visual_dim: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompileMasksArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: PredictionMode,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for resolving mixed mode per tree.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: PredictionMode,
    /// Flat key=value file with trainer and decoder fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub length_normalize: bool,
    /// Score by level-order generation instead of one teacher-forced pass.
    #[arg(long)]
    pub level_order: bool,
    /// CoNLL-U parses of the candidate captions; default is the synthetic
    /// template grammar.
    #[arg(long)]
    pub trees: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub grad_check: bool,
    #[arg(long)]
    pub leak_check: bool,
    #[arg(long)]
    pub normalization_check: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_mode(s: &str) -> Result<PredictionMode, String> {
    s.parse()
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::CompileMasks(a) => compile_masks(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Verify(a) => verify(a),
    }
}

#[derive(Serialize)]
struct TokenRecord<'a> {
    sentence_id: &'a str,
    pieces: Vec<&'a str>,
    ids: Vec<usize>,
    categories: Vec<&'static str>,
    heads: Vec<Option<usize>>,
}

fn ingest(a: IngestArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("ingest");
    m.input(&a.conllu).config("vocab_size", a.vocab_size);
    let text = fs::read_to_string(&a.conllu).map_err(|e| runtime(format!("{}: {e}", a.conllu.display())))?;
    let trees = parse_conllu(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    let vocab = if a.vocab.exists() {
        m.input(&a.vocab);
        load_vocab(&a.vocab)?
    } else {
        let corpus: Vec<String> = trees.iter().map(|t| t.text()).collect();
        let v = build_vocab(&corpus, a.vocab_size)?;
        write_text(&a.vocab, &v.to_text())?;
        m.output(&a.vocab);
        v
    };
    fs::create_dir_all(&a.out).map_err(runtime)?;
    write_text(&a.out.join(VOCAB_FILE), &vocab.to_text())?;
    write_text(&a.out.join(TREES_FILE), &serialize_conllu(&trees))?;
    let tokenized: Vec<_> = trees.iter().map(|t| tokenize_tree(t, &vocab)).collect();
    let records: Vec<TokenRecord> = tokenized
        .iter()
        .map(|t| TokenRecord {
            sentence_id: t.source().sentence_id(),
            pieces: t.tokens().iter().map(|k| vocab.piece(k.piece)).collect(),
            ids: t.tokens().iter().map(|k| k.piece).collect(),
            categories: t.tokens().iter().map(|k| k.category.label()).collect(),
            heads: t.heads().to_vec(),
        })
        .collect();
    write_jsonl(&a.out.join("tokens.jsonl"), &records)?;
    m.output(&a.out.join(VOCAB_FILE))
        .output(&a.out.join(TREES_FILE))
        .output(&a.out.join("tokens.jsonl"));
    if let Some(dir) = &a.features {
        m.input(dir);
        let mut samples = Vec::new();
        for t in &trees {
            let name = format!("{}.cogtvis", t.sentence_id());
            let v = read_features(dir, &name)?;
            let rel = feature_path(t.sentence_id());
            write_features(&a.out, &rel, &v)?;
            samples.push(SampleRecord {
                sentence_id: t.sentence_id().to_string(),
                image_features: rel,
            });
        }
        write_jsonl(&a.out.join(SAMPLES_FILE), &samples)?;
        m.output(&a.out.join(SAMPLES_FILE));
    }
    let split = tokenized.iter().filter(|t| t.len() > t.source().len()).count();
    println!(
        "ingested {} trees ({} with split words), vocab {}",
        trees.len(),
        split,
        vocab.len()
    );
    m.finish(&a.out.join("manifest.json")).map_err(runtime)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let mut opts = SynthOptions::new(a.n, a.seed);
    if let Some(k) = a.tasks {
        opts.heldout_scenes = k;
    }
    if let Some(s) = a.noise {
        opts.noise_sigma = s;
    }
    if let Some(d) = a.visual_dim {
        opts.visual_dim = d;
    }
    let mut m = ManifestBuilder::start("synth");
    m.seed("seed", a.seed)
        .config("n", opts.train_scenes)
        .config("tasks", opts.heldout_scenes)
        .config("noise_sigma", opts.noise_sigma)
        .config("visual_dim", opts.visual_dim);
    let summary = synthesize(&a.out, &opts)?;
    for f in [VOCAB_FILE, TREES_FILE, SAMPLES_FILE, TASKS_FILE, "features"] {
        m.output(&a.out.join(f));
    }
    println!(
        "{} training samples, {} tasks, vocab {}",
        summary.train_samples, summary.tasks, summary.vocab_size
    );
    m.finish(&a.out.join("manifest.json")).map_err(runtime)?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    sidecar(out, "manifest.json")
}

fn compile_masks(a: CompileMasksArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("compile-masks");
    m.input(&a.dataset).config("mode", a.mode).seed("seed", a.seed);
    let vocab = load_vocab(&a.dataset.join(VOCAB_FILE))?;
    let trees = load_trees(&a.dataset.join(TREES_FILE))?;
    let mut bytes = Vec::new();
    for (i, t) in trees.iter().enumerate() {
        let cgm = build_cgm(&tokenize_tree(t, &vocab));
        let plan = compile(&cgm, a.mode.resolve(a.seed, i as u64))?;
        bytes.extend(plan.encode());
    }
    fs::write(&a.out, &bytes).map_err(runtime)?;
    m.output(&a.out);
    println!("{} plans, {} bytes", trees.len(), bytes.len());
    m.finish(&manifest_path(&a.out)).map_err(runtime)?;
    Ok(())
}

fn read_config(path: &Option<PathBuf>) -> Result<BTreeMap<String, String>, CliError> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            parse_kv(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
        }
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("train");
    m.input(&a.dataset);
    let kv = read_config(&a.config)?;
    if let Some(c) = &a.config {
        m.input(c);
    }
    let mut cfg = TrainConfig::default();
    let mut known = cfg.to_kv();
    known.extend(DecoderConfig::desk(1, 1, 1).to_kv());
    known.insert("steps".into(), String::new());
    if let Some(k) = kv.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Validation(format!("unknown config key `{k}`")));
    }
    cfg.apply_kv(&kv)?;
    cfg.mode = a.mode;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = Some(s);
    }
    let dataset = load_dataset(&a.dataset)?;
    let first = dataset.samples.first().ok_or(TrainError::EmptyDataset)?;
    let mut dcfg = DecoderConfig::desk(dataset.vocab.len(), first.visual.dim(), first.visual.slots());
    dcfg.apply_kv(&kv)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    dcfg.vocab_size = dataset.vocab.len();
    dcfg.visual_dim_in = first.visual.dim();
    dcfg.visual_slots = first.visual.slots();
    m.config_map(&cfg.to_kv()).config_map(&dcfg.to_kv()).seed("seed", cfg.seed);

    let outcome = crate::trainer::train(&dataset, &cfg, &dcfg)?;
    save_checkpoint(&a.out, &outcome.best, &dataset.vocab)?;
    let metrics = sidecar(&a.out, "metrics.jsonl");
    save_metrics(&metrics, &outcome.metrics)?;
    m.output(&a.out)
        .output(&sidecar(&a.out, "vocab.txt"))
        .output(&metrics)
        .config("best_step", outcome.best_step);
    if let Some(v) = outcome.best_val_loss {
        m.config("best_val_loss", v);
    }
    let last = outcome.metrics.last().map_or(f64::NAN, |l| l.loss);
    println!(
        "trained {} steps on {} samples ({} held out): final loss {last:.4}, best step {}",
        outcome.metrics.len(),
        outcome.train_samples,
        outcome.val_samples,
        outcome.best_step
    );
    m.finish(&manifest_path(&a.out)).map_err(runtime)?;
    Ok(())
}

#[derive(Serialize)]
struct TaskResult<'a> {
    task: usize,
    tier: Option<&'static str>,
    positive_index: usize,
    chosen: usize,
    correct: bool,
    scores: &'a [f64],
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("score");
    m.input(&a.ckpt)
        .input(&a.tasks)
        .config("length_normalize", a.length_normalize)
        .config("level_order", a.level_order);
    let (ckpt, vocab) = load_checkpoint(&a.ckpt)?;
    let tasks = load_tasks(&a.tasks)?;
    let lookup;
    let parser: &dyn CaptionParser = match &a.trees {
        Some(p) => {
            m.input(p);
            lookup = TreeLookup::new(load_trees(p)?);
            &lookup
        }
        None => &TemplateParser,
    };
    let mut scorer = Scorer::new(&ckpt.decoder, &vocab, parser, ckpt.mode);
    scorer.length_normalize = a.length_normalize;
    if a.level_order {
        scorer.path = ScorePath::LevelOrder;
    }
    m.config("mode", ckpt.mode);
    let results = scorer.retrieve_all(&tasks)?;
    let report = crate::scorer::EvalReport::from_results(&tasks, &results)?;
    let lines: Vec<TaskResult> = tasks
        .iter()
        .zip(&results)
        .enumerate()
        .map(|(i, (t, r))| TaskResult {
            task: i,
            tier: t.tier.map(|t| t.label()),
            positive_index: t.positive_index,
            chosen: r.chosen,
            correct: r.chosen == t.positive_index,
            scores: &r.scores,
        })
        .collect();
    write_jsonl(&a.out, &lines)?;
    let table = report.to_table();
    let txt = sidecar(&a.out, "accuracy.txt");
    let json = sidecar(&a.out, "accuracy.json");
    fs::write(&txt, &table).map_err(runtime)?;
    let body = serde_json::to_string_pretty(&report).map_err(runtime)?;
    fs::write(&json, body + "\n").map_err(runtime)?;
    print!("{table}");
    std::io::stdout().flush().ok();
    m.output(&a.out).output(&txt).output(&json);
    m.finish(&manifest_path(&a.out)).map_err(runtime)?;
    Ok(())
}

/// Settings of the invariant checks `verify` runs.
pub const VERIFY_LEAK_TREES: usize = 1000;
pub const VERIFY_INDEPENDENCE_TRIALS: usize = 100;
pub const VERIFY_GRAD_ELEMENTS_PER_PARAM: usize = 8;
pub const VERIFY_GRAD_TOL: f64 = 1e-4;
pub const VERIFY_NORMALIZATION_TOL: f64 = 1e-6;
pub const VERIFY_PATH_TOL: f64 = 1e-9;

fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::start("verify");
    m.input(&a.ckpt).seed("seed", a.seed);
    let all = !(a.grad_check || a.leak_check || a.normalization_check);
    let (ckpt, _vocab) = load_checkpoint(&a.ckpt)?;
    let dec64 = ckpt.decoder.cast::<f64>();
    let mut results: Vec<CheckResult> = Vec::new();
    if all || a.leak_check {
        results.push(leak_check(VERIFY_LEAK_TREES, 2, 32, a.seed));
        results.push(independence_check(&ckpt.decoder, VERIFY_INDEPENDENCE_TRIALS, a.seed).map_err(runtime)?);
        results.push(permutation_check(&ckpt.decoder, 20, a.seed).map_err(runtime)?);
    }
    if all || a.grad_check {
        let cfg = dec64.config().clone();
        let mut rng = rng_for(a.seed, "verify/grad");
        let n = cfg.max_positions.min(6);
        let caption = random_caption(n, cfg.vocab_size, &mut rng);
        let visual = random_visual(cfg.visual_slots, cfg.visual_dim_in, &mut rng);
        let report = decoder_grad_check(
            &dec64,
            &caption,
            &visual,
            PredictionMode::Cogt,
            true,
            a.seed,
            1e-5,
            VERIFY_GRAD_TOL,
            Some(VERIFY_GRAD_ELEMENTS_PER_PARAM),
        )
        .map_err(runtime)?;
        let worst = report
            .params
            .iter()
            .max_by(|x, y| x.max_rel_error.total_cmp(&y.max_rel_error))
            .map(|p| p.name.clone())
            .unwrap_or_default();
        results.push(CheckResult {
            name: "gradient",
            passed: report.passed(),
            detail: format!(
                "{} tensors, max relative error {:.3e} ({worst})",
                report.params.len(),
                report.max_rel_error()
            ),
        });
    }
    if all || a.normalization_check {
        results.push(normalization_check(&dec64, a.seed, VERIFY_NORMALIZATION_TOL, 20_000)?);
        results.push(scoring_path_check(&dec64, 50, a.seed, VERIFY_PATH_TOL)?);
    }
    let mut failed = Vec::new();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        m.config(r.name, if r.passed { "pass" } else { "fail" });
        if !r.passed {
            failed.push(r.name);
        }
    }
    m.finish(&sidecar(&a.ckpt, "verify.manifest.json")).map_err(runtime)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}
