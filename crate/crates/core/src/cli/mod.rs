//! The `hfl` command line: ingest → pre-train → hyperfit → generate →
//! analyze, plus scripted experiments and report conversion.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod report;

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    ingest, read_set, read_tokenizer, sample_sequences, synthetic, write_set, write_tokenizer, HyperfitSet, OrderId,
    SetProvenance, TokenId, TokenSequence, Tokenizer, TokenizerMode, DEFAULT_CONTEXT_LEN, DEFAULT_SAMPLE_LEN,
};
use crate::decoder::{generate, CitationBlockConfig, GenerationConfig, GenerationTrace, NGramIndex, Strategy, DEFAULT_BLOCK_N};
use crate::error::{Error, Result};
use crate::experiments;
use crate::metrics::{sequence_nll, MetricsReport, Provenance, BLEU_VARIANT, TTR_WINDOW};
use crate::model::{Checkpoint, DType, ModelConfig, Parameters, Scalar};
use crate::trainer::{hyperfit_observed, pretrain_observed, TrainConfig, TrainRun, Validation};

pub use report::{emit_report, metrics_from_csv, metrics_to_csv, sharpness_markdown, Report, ReportFormat};

pub const OUT_ENV: &str = "HFL_OUT";
const DEFAULT_OUT: &str = "hfl-out";

/// Settings shared by every subcommand; each output records the hash of
/// the resolved value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub dtype: DType,
    pub tokenizer: TokenizerMode,
    pub vocab_size: usize,
    pub threads: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from(DEFAULT_OUT),
            seed: 0,
            dtype: DType::F32,
            tokenizer: TokenizerMode::Bpe,
            vocab_size: 512,
            threads: 1,
        }
    }
}

impl GlobalConfig {
    /// Hash of every setting except the output location.
    pub fn hash(&self) -> String {
        let keyed = Self { out: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(serde_json::to_vec(&keyed).expect("config serializes")))
    }

    /// Config file, then `HFL_OUT`, then explicit flags.
    fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?
            }
            None => Self::default(),
        };
        if let Some(o) = std::env::var_os(OUT_ENV).filter(|o| !o.is_empty()) {
            cfg.out = PathBuf::from(o);
        }
        if let Some(o) = &cli.out {
            cfg.out = o.clone();
        }
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(d) = cli.dtype {
            cfg.dtype = d.into();
        }
        Ok(cfg)
    }

    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(default))
    }
}

#[derive(Parser, Debug)]
#[command(name = "hfl", version, about = "Hyperfitting laboratory")]
pub struct Cli {
    /// Output root; overrides HFL_OUT and the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON GlobalConfig file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    dtype: Option<DTypeArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenize text into pre-training windows, held-out texts and a hyperfit set.
    Ingest(IngestArgs),
    /// Pre-train or hyperfit a model.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Same as `train hyperfit`.
    Hyperfit(HyperfitArgs),
    /// Generate continuations of held-out contexts, with full traces.
    Generate(GenerateArgs),
    /// Compute TTR, Self-BLEU, Dataset BLEU and overlap of generations.
    Analyze(AnalyzeArgs),
    /// Run scripted experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Convert a metrics or experiment report to json, csv or markdown.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// UTF-8 text files, concatenated in order.
    inputs: Vec<PathBuf>,
    /// Use this many bytes of generated prose instead of input files.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, value_enum)]
    tokenizer: Option<ModeArg>,
    #[arg(long)]
    vocab: Option<usize>,
    /// Hyperfit samples to draw.
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_LEN)]
    sample_len: usize,
    /// Held-out texts to draw.
    #[arg(long, default_value_t = 300)]
    held: usize,
    /// Share of the text reserved for held-out texts and the hyperfit set.
    #[arg(long, default_value_t = 0.25)]
    held_fraction: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Byte,
    Char,
    Bpe,
}

impl From<ModeArg> for TokenizerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Byte => TokenizerMode::Byte,
            ModeArg::Char => TokenizerMode::Char,
            ModeArg::Bpe => TokenizerMode::Bpe,
        }
    }
}

#[derive(Subcommand, Debug)]
enum TrainCommand {
    Pretrain(PretrainArgs),
    Hyperfit(HyperfitArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonTrain {
    /// JSON TrainConfig; replaces the preset.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Held-out texts used for validation (all when omitted).
    #[arg(long)]
    val_limit: Option<usize>,
    /// Greedy TTR probes per evaluation.
    #[arg(long)]
    eval_contexts: Option<usize>,
    /// Save a checkpoint at every evaluated epoch.
    #[arg(long)]
    save_checkpoints: bool,
    #[arg(long)]
    validation: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Pre-training windows (HFS1).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelArg::Toy)]
    model: ModelArg,
    #[command(flatten)]
    train: CommonTrain,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Toy,
    Desk,
}

#[derive(Args, Debug)]
struct HyperfitArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    set: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
    /// Fixed update count regardless of set size.
    #[arg(long)]
    constant_updates: Option<usize>,
    #[command(flatten)]
    train: CommonTrain,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Held-out texts whose prefixes are the contexts.
    #[arg(long)]
    contexts: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = DEFAULT_CONTEXT_LEN)]
    context_len: usize,
    #[arg(long, default_value_t = TTR_WINDOW)]
    tokens: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Greedy)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    /// Block continuations of n-grams found in the hyperfit set.
    #[arg(long)]
    block: bool,
    #[arg(long)]
    block_set: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_N)]
    block_n: usize,
    /// Block immediately instead of letting the current word finish.
    #[arg(long)]
    no_defer: bool,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Output file stem.
    #[arg(long, default_value = "generations")]
    name: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Greedy,
    Nucleus,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    generations: Option<PathBuf>,
    /// Hyperfit set for Dataset BLEU and overlap; skipped when absent.
    #[arg(long)]
    set: Option<PathBuf>,
    /// Adds per-sequence NLL and perplexity of context plus generation.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = TTR_WINDOW)]
    window: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    #[arg(long, default_value = "metrics")]
    name: String,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum FormatArg {
    Json,
    Csv,
    Markdown,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Markdown => ReportFormat::Markdown,
        }
    }
}

#[derive(Subcommand, Debug)]
enum ExperimentCommand {
    /// Run an experiment spec; outputs go under <out>/experiments.
    Run {
        spec: PathBuf,
        /// Exact output directory (must be new or empty).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// metrics.json, report.json, or a metrics CSV.
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
}

/// Parses `args` (including the program name) and runs the command.
pub fn dispatch<I, S>(args: I) -> i32
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
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let g = GlobalConfig::resolve(cli)?;
    fs::create_dir_all(&g.out).map_err(|e| Error::io(&g.out, e))?;
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(&g, a),
        Command::Train(TrainCommand::Pretrain(a)) => match g.dtype {
            DType::F32 => cmd_pretrain::<f32>(&g, a),
            DType::F64 => cmd_pretrain::<f64>(&g, a),
        },
        Command::Train(TrainCommand::Hyperfit(a)) | Command::Hyperfit(a) => match g.dtype {
            DType::F32 => cmd_hyperfit::<f32>(&g, a),
            DType::F64 => cmd_hyperfit::<f64>(&g, a),
        },
        Command::Generate(a) => match g.dtype {
            DType::F32 => cmd_generate::<f32>(&g, a),
            DType::F64 => cmd_generate::<f64>(&g, a),
        },
        Command::Analyze(a) => match g.dtype {
            DType::F32 => cmd_analyze::<f32>(&g, a),
            DType::F64 => cmd_analyze::<f64>(&g, a),
        },
        Command::Experiment(ExperimentCommand::Run { spec, dir }) => {
            let dir = match dir {
                Some(d) => d.clone(),
                None => {
                    let s = experiments::ExperimentSpec::load(spec)?;
                    let kind = serde_json::to_value(s.kind)?;
                    g.out.join("experiments").join(format!("{}-{}", kind.as_str().unwrap_or("run"), &s.hash()[..12]))
                }
            };
            let report = experiments::run(spec, Some(&dir))?;
            println!("{}", dir.join(experiments::REPORT_FILE).display());
            write_manifest(&g, "experiment", &dir, &serde_json::json!({ "spec_hash": report.spec_hash }))
        }
        Command::Report(a) => cmd_report(&g, a),
    }
}

/// `<dir>/<command>.run.json`: resolved config, its hash and the command's
/// own settings.
fn write_manifest(g: &GlobalConfig, command: &str, dir: &Path, details: &serde_json::Value) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "config": g,
        "config_hash": g.hash(),
        "details": details,
    });
    let path = dir.join(format!("{command}.run.json"));
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(path, e))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn cmd_ingest(g: &GlobalConfig, a: &IngestArgs) -> Result<()> {
    let (text, sources): (Vec<u8>, Vec<String>) = match a.synthetic {
        Some(n) => (synthetic::prose(g.seed, n).into_bytes(), vec![format!("synthetic:{}:{n}", g.seed)]),
        None => {
            if a.inputs.is_empty() {
                return Err(Error::Config("give input files or --synthetic".into()));
            }
            let mut all = Vec::new();
            for p in &a.inputs {
                all.extend(fs::read(p).map_err(|e| Error::io(p, e))?);
                all.push(b'\n');
            }
            (all, a.inputs.iter().map(|p| p.display().to_string()).collect())
        }
    };
    if let Err(e) = std::str::from_utf8(&text) {
        return Err(Error::Decode { offset: e.valid_up_to() });
    }
    if !(0.0..1.0).contains(&a.held_fraction) || a.held_fraction == 0.0 {
        return Err(Error::Config("held_fraction must lie in (0, 1)".into()));
    }
    // split on a line break so no text straddles the two parts
    let mut cut = ((text.len() as f64) * (1.0 - a.held_fraction)) as usize;
    while cut < text.len() && text[cut - 1] != b'\n' {
        cut += 1;
    }
    let (train_text, held_text) = text.split_at(cut);
    let mode = a.tokenizer.map(TokenizerMode::from).unwrap_or(g.tokenizer);
    let vocab = a.vocab.unwrap_or(g.vocab_size);
    let tok = match mode {
        TokenizerMode::Byte => Tokenizer::byte(),
        TokenizerMode::Char => Tokenizer::train_char(std::str::from_utf8(train_text).expect("checked"), vocab)?,
        TokenizerMode::Bpe => Tokenizer::train_bpe(train_text, vocab)?,
    };
    let train = ingest(train_text, &tok, "train")?;
    let held = ingest(held_text, &tok, "held")?;
    let v = tok.vocab_size();
    let windows: Vec<TokenSequence> = train
        .tokens
        .chunks_exact(a.sample_len)
        .map(|c| TokenSequence { tokens: c.to_vec(), source_tag: "train".into() })
        .collect();
    if windows.is_empty() {
        return Err(Error::Capacity(format!("training text holds no window of {} tokens", a.sample_len)));
    }
    let train_set = HyperfitSet::new(windows, a.sample_len, g.seed, OrderId::Base, v)?;
    let drawn = sample_sequences(&held, a.held + a.samples, a.sample_len, g.seed)?;
    let (held_seqs, set_seqs) = drawn.samples.split_at(a.held);
    let held_set = HyperfitSet::new(held_seqs.to_vec(), a.sample_len, g.seed, OrderId::Base, v)?;
    let hf_set = HyperfitSet::new(set_seqs.to_vec(), a.sample_len, g.seed, OrderId::Base, v)?;

    write_tokenizer(&g.out.join("tokenizer.json"), &tok)?;
    for (name, s) in [("train.hfs", &train_set), ("held.hfs", &held_set), ("set.hfs", &hf_set)] {
        write_set(&g.out.join(name), s, &SetProvenance::describe(s, sources.clone(), mode))?;
    }
    write_manifest(
        g,
        "ingest",
        &g.out,
        &serde_json::json!({
            "sources": sources, "tokenizer": mode, "vocab_size": v,
            "train_windows": train_set.len(), "held": held_set.len(), "samples": hf_set.len(),
            "sample_len": a.sample_len, "held_fraction": a.held_fraction,
        }),
    )?;
    println!(
        "{}: {} training windows, {} held-out texts, {} samples, vocab {v}",
        g.out.display(),
        train_set.len(),
        held_set.len(),
        hf_set.len()
    );
    Ok(())
}

fn train_config(base: TrainConfig, a: &CommonTrain, seed: u64) -> Result<TrainConfig> {
    let mut c = match &a.train_config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => TrainConfig { seed, ..base },
    };
    if let Some(x) = a.epochs {
        c.epochs = x;
    }
    if let Some(x) = a.lr {
        c.lr = x;
    }
    if let Some(x) = a.batch_size {
        c.batch_size = x;
    }
    if a.max_steps.is_some() {
        c.max_steps = a.max_steps;
    }
    if let Some(x) = a.eval_every {
        c.eval_every = x;
    }
    if a.eval_contexts.is_some() {
        c.eval_contexts = a.eval_contexts;
    }
    c.validate()?;
    Ok(c)
}

fn validation(g: &GlobalConfig, a: &CommonTrain, max_ctx: usize) -> Result<Validation> {
    let held = read_set(&g.path(&a.validation, "held.hfs"))?;
    let n = a.val_limit.unwrap_or(held.len()).min(held.len());
    let mut v = Validation::new(held.samples[..n].to_vec())?;
    v.generate_tokens = TTR_WINDOW.min(max_ctx.saturating_sub(v.context_len));
    Ok(v)
}

fn finish_training<T: Scalar>(
    g: &GlobalConfig,
    name: &str,
    run: TrainRun<T>,
    cfg: &TrainConfig,
    lineage: Vec<u64>,
    details: serde_json::Value,
) -> Result<()> {
    let ckpt = g.out.join(format!("{name}.ckpt"));
    Checkpoint::new(run.params, run.steps as u64, lineage).save(&ckpt)?;
    run.curve.save_csv(&g.out.join(format!("{name}_curve.csv")))?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    write_manifest(
        g,
        name,
        &g.out,
        &serde_json::json!({
            "train": cfg, "stop": run.stop, "steps": run.steps, "warnings": run.warnings,
            "gradient_clipping": "none", "lr_schedule": "constant after linear warm-up",
            "checkpoint_sha256": file_sha256(&ckpt)?, "inputs": details,
        }),
    )?;
    let last = run.curve.last().expect("curve has a baseline row");
    println!(
        "{}: {:?} after {} steps, train {:.4} val {:.4} ttr {:.3}",
        ckpt.display(),
        run.stop,
        run.steps,
        last.train_loss,
        last.val_loss,
        last.mean_greedy_ttr
    );
    Ok(())
}

fn progress<T: Scalar>(g: &GlobalConfig, name: &str, save: bool) -> impl FnMut(&crate::trainer::CurveRow, &Parameters<T>) {
    let out = g.out.clone();
    let name = name.to_string();
    move |r, p| {
        eprintln!(
            "{name} epoch {:>5} step {:>6}  train {:.4}  val {:.4}  ttr {:.3}  entropy {:.3}",
            r.epoch, r.step, r.train_loss, r.val_loss, r.mean_greedy_ttr, r.mean_pred_entropy
        );
        if save {
            let path = out.join(format!("{name}-epoch{}.ckpt", r.epoch));
            if let Err(e) = Checkpoint::new(p.clone(), r.step as u64, vec![]).save(&path) {
                eprintln!("warning: {e}");
            }
        }
    }
}

fn cmd_pretrain<T: Scalar>(g: &GlobalConfig, a: &PretrainArgs) -> Result<()> {
    let corpus_path = g.path(&a.corpus, "train.hfs");
    let corpus = read_set(&corpus_path)?;
    let mut mcfg = match a.model {
        ModelArg::Toy => ModelConfig::toy(corpus.vocab_size),
        ModelArg::Desk => ModelConfig::desk(corpus.vocab_size),
    };
    mcfg.max_ctx = mcfg.max_ctx.max(corpus.sample_len);
    let cfg = train_config(TrainConfig::pretrain(), &a.train, g.seed)?;
    let val = validation(g, &a.train, mcfg.max_ctx)?;
    let params = Parameters::<T>::init(&mcfg, g.seed)?;
    let mut obs = progress::<T>(g, "pretrain", a.train.save_checkpoints);
    let run = pretrain_observed(params, &corpus.samples, &val, &cfg, &mut obs)?;
    finish_training(g, "pretrain", run, &cfg, vec![g.seed, cfg.seed], serde_json::json!({
        "corpus_sha256": file_sha256(&corpus_path)?, "model": mcfg,
    }))
}

fn cmd_hyperfit<T: Scalar>(g: &GlobalConfig, a: &HyperfitArgs) -> Result<()> {
    let ck_path = g.path(&a.checkpoint, "pretrain.ckpt");
    let ck = Checkpoint::<T>::load(&ck_path)?;
    let set_path = g.path(&a.set, "set.hfs");
    let set = read_set(&set_path)?;
    let preset = match a.preset {
        PresetArg::Paper => TrainConfig::paper(),
        PresetArg::Desk => TrainConfig::desk(),
    };
    let mut cfg = train_config(preset, &a.train, g.seed)?;
    if a.constant_updates.is_some() {
        cfg.constant_updates = a.constant_updates;
    }
    let val = validation(g, &a.train, ck.params.config.max_ctx)?;
    let mut lineage = ck.seed_lineage.clone();
    lineage.push(cfg.seed);
    let mut obs = progress::<T>(g, "hyperfit", a.train.save_checkpoints);
    let run = hyperfit_observed(ck.params, &set, &val, &cfg, &mut obs)?;
    finish_training(g, "hyperfit", run, &cfg, lineage, serde_json::json!({
        "checkpoint_sha256": file_sha256(&ck_path)?, "set_sha256": file_sha256(&set_path)?,
    }))
}

/// One line of a generations file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub index: usize,
    pub context: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub trace: GenerationTrace,
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn cmd_generate<T: Scalar>(g: &GlobalConfig, a: &GenerateArgs) -> Result<()> {
    let ck_path = g.path(&a.checkpoint, "hyperfit.ckpt");
    let params = Checkpoint::<T>::load(&ck_path)?.params;
    let held = read_set(&g.path(&a.contexts, "held.hfs"))?;
    let tok_path = g.path(&a.tokenizer, "tokenizer.json");
    let tok = if tok_path.exists() { Some(read_tokenizer(&tok_path)?) } else { None };
    let strategy = match a.strategy {
        StrategyArg::Greedy => Strategy::Greedy,
        StrategyArg::Nucleus => Strategy::Sample { temperature: a.temperature, top_p: a.top_p, top_k: a.top_k },
    };
    let mut cfg = GenerationConfig { strategy, max_new_tokens: a.tokens, block: None, seed: g.seed };
    if a.block {
        let set = read_set(&g.path(&a.block_set, "set.hfs"))?;
        let index = Arc::new(NGramIndex::build(&set, a.block_n)?);
        let defer = !a.no_defer;
        if defer && tok.is_none() {
            return Err(Error::Config("deferred blocking needs a tokenizer (--tokenizer or --no-defer)".into()));
        }
        let table = tok.as_ref().map(|t| Arc::new(t.boundary_table()));
        cfg.block = Some(CitationBlockConfig::new(index, defer, table));
    }
    let ctxs = experiments::contexts(&held.samples, a.context_len, a.count)?;
    let path = g.out.join(format!("{}.jsonl", a.name));
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    for (i, c) in ctxs.iter().enumerate() {
        let run_cfg = GenerationConfig { seed: g.seed.wrapping_add(i as u64), ..cfg.clone() };
        let (seq, trace) = generate(&params, c, &run_cfg)?;
        let rec = GenerationRecord {
            index: i,
            context: c.clone(),
            text: tok.as_ref().map(|t| t.decode_lossy(&seq.tokens)),
            tokens: seq.tokens,
            trace,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_manifest(g, &a.name, &g.out, &serde_json::json!({
        "checkpoint_sha256": file_sha256(&ck_path)?, "strategy": strategy, "tokens": a.tokens,
        "count": ctxs.len(), "context_len": a.context_len,
        "block": a.block.then(|| serde_json::json!({ "n": a.block_n, "defer_to_word_end": !a.no_defer })),
    }))?;
    println!("{}: {} generations", path.display(), ctxs.len());
    Ok(())
}

fn cmd_analyze<T: Scalar>(g: &GlobalConfig, a: &AnalyzeArgs) -> Result<()> {
    let gen_path = g.path(&a.generations, "generations.jsonl");
    let recs = read_generations(&gen_path)?;
    let set_path = g.path(&a.set, "set.hfs");
    let set = if a.set.is_some() || set_path.exists() { Some(read_set(&set_path)?) } else { None };
    let seqs: Vec<&[TokenId]> = recs.iter().map(|r| r.tokens.as_slice()).collect();
    let nll = match &a.checkpoint {
        Some(p) => {
            let params = Checkpoint::<T>::load(p)?.params;
            let v: Vec<(f64, usize)> = recs
                .iter()
                .map(|r| {
                    let joined: Vec<TokenId> = r.context.iter().chain(&r.tokens).copied().collect();
                    sequence_nll(&params, &joined)
                })
                .collect::<Result<_>>()?;
            Some((v, file_sha256(p)?))
        }
        None => None,
    };
    let provenance = Provenance {
        model_id: nll.as_ref().map(|n| n.1.clone()).unwrap_or_default(),
        dataset_id: match &set {
            Some(s) => SetProvenance::describe(s, vec![], TokenizerMode::Byte).tokens_sha256,
            None => String::new(),
        },
        config_hash: g.hash(),
        bleu_variant: BLEU_VARIANT.into(),
    };
    let report = MetricsReport::analyze(&seqs, set.as_ref(), nll.as_ref().map(|n| n.0.as_slice()), a.window, provenance)?;
    let files = emit_report(&Report::Metrics(report.clone()), ReportFormat::from(a.format), &g.out, &a.name)?;
    if let Some(rows) = report::overlap_histogram_rows(&report) {
        report::write_rows(&g.out.join(format!("{}_overlap_histogram.csv", a.name)), &rows)?;
    }
    let agg = &report.aggregates;
    println!(
        "{}: {} sequences, ttr {:.4}, self-bleu {}, overlap>5 {}",
        files[0].display(),
        agg.count,
        agg.ttr_mean,
        agg.self_bleu_mean.map_or("-".into(), |v| format!("{v:.2}")),
        agg.overlap_exceeds_ratio.map_or("-".into(), |v| format!("{v:.3}"))
    );
    Ok(())
}

fn cmd_report(g: &GlobalConfig, a: &ReportArgs) -> Result<()> {
    let report = Report::load(&a.input)?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
    let dir = g.out.clone();
    for f in emit_report(&report, a.format.into(), &dir, &stem)? {
        println!("{}", f.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests;
