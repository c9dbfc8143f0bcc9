use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::*;
use crate::corpus::{read_set, read_tokenizer, DEFAULT_CONTEXT_LEN};
use crate::decoder::DEFAULT_BLOCK_N;
use crate::model::{Checkpoint, DType};

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Curve,
    Determinacy,
    Quantity,
    Overlap,
    Sharpness,
    Decay,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    #[serde(default = "default_block_n")]
    pub n: usize,
    #[serde(default = "yes")]
    pub defer_to_word_end: bool,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self { n: DEFAULT_BLOCK_N, defer_to_word_end: true }
    }
}

fn default_block_n() -> usize {
    DEFAULT_BLOCK_N
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub label: String,
    pub checkpoint: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<BlockSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSpec {
    pub strategy: Option<Strategy>,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        Self { strategy: None, max_new_tokens: TTR_WINDOW, seed: 0 }
    }
}

/// One experiment. Relative paths are resolved against the spec file's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    /// Pre-trained starting point for protocols that hyperfit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Models compared by the overlap, sharpness and decay protocols.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<ModelRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<PathBuf>,
    /// Held-out original texts: validation, contexts and agreement.
    pub held_out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generation: GenerationSpec,
    #[serde(default = "default_contexts")]
    pub contexts: usize,
    #[serde(default = "default_context_len")]
    pub context_len: usize,
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    #[serde(default = "default_updates")]
    pub total_updates: usize,
    /// Seed of the sample-order variants.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_dtype() -> DType {
    DType::F32
}
fn default_contexts() -> usize {
    300
}
fn default_context_len() -> usize {
    DEFAULT_CONTEXT_LEN
}
fn default_counts() -> Vec<usize> {
    vec![8, 16]
}
fn default_updates() -> usize {
    5000
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn required(&self) -> Vec<(&'static str, &Path)> {
        let mut out = vec![("held_out", self.held_out.as_path())];
        if let Some(t) = &self.tokenizer {
            out.push(("tokenizer", t));
        }
        use ExperimentKind::*;
        if matches!(self.kind, Curve | Determinacy | Quantity) {
            match &self.checkpoint {
                Some(c) => out.push(("checkpoint", c)),
                None => out.push(("checkpoint", Path::new(""))),
            }
        }
        if matches!(self.kind, Curve | Determinacy | Quantity | Overlap) {
            match &self.set {
                Some(s) => out.push(("set", s)),
                None => out.push(("set", Path::new(""))),
            }
        }
        out.extend(self.models.iter().map(|m| ("models.checkpoint", m.checkpoint.as_path())));
        out
    }

    /// Every referenced artifact, resolved against `base`, must exist.
    pub fn check(&self, base: &Path) -> Result<()> {
        for (what, p) in self.required() {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("{:?} experiments need `{what}`", self.kind)));
            }
            let full = base.join(p);
            if !full.exists() {
                return Err(Error::Missing(full));
            }
        }
        if matches!(self.kind, ExperimentKind::Overlap | ExperimentKind::Sharpness | ExperimentKind::Decay)
            && self.models.is_empty()
        {
            return Err(Error::Config(format!("{:?} experiments need `models`", self.kind)));
        }
        if self.contexts == 0 {
            return Err(Error::Config("contexts must be at least 1".into()));
        }
        self.train.validate()
    }
}

/// Build and platform facts that can change results; nothing time- or
/// host-dependent, so reports stay reproducible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub dtype: DType,
    pub debug_assertions: bool,
}

impl Environment {
    pub fn current(dtype: DType) -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            dtype,
            debug_assertions: cfg!(debug_assertions),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec_hash: String,
    pub environment: Environment,
    pub outputs: Outputs,
    pub artifacts: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct Timing {
    wall_clock_seconds: f64,
    finished_unix: u64,
}

const TRAINING_NOTE: &str = "hyperfitting uses no gradient clipping and a constant learning rate after warm-up";

fn load_model<T: Scalar>(path: &Path) -> Result<Parameters<T>> {
    Ok(Checkpoint::<T>::load(path)?.params)
}

fn run_typed<T: Scalar>(spec: &ExperimentSpec, base: &Path, out: &Path) -> Result<RunReport> {
    let at = |p: &Path| base.join(p);
    let held = read_set(&at(&spec.held_out))?.samples;
    let mut val = Validation::new(held.clone())?;
    val.context_len = spec.context_len;
    let ctxs = contexts(&held, spec.context_len, spec.contexts)?;
    let tok = spec.tokenizer.as_ref().map(|p| read_tokenizer(&at(p))).transpose()?;
    let boundaries = tok.as_ref().map(|t| Arc::new(t.boundary_table()));
    let set = spec.set.as_ref().map(|p| read_set(&at(p))).transpose()?;
    let start = || -> Result<Parameters<T>> { load_model(&at(spec.checkpoint.as_ref().expect("checked"))) };
    let models = || -> Result<Vec<(String, Parameters<T>)>> {
        spec.models.iter().map(|m| Ok((m.label.clone(), load_model(&at(&m.checkpoint))?))).collect()
    };
    let gen = generation_config(&spec.generation);
    let mut artifacts = Vec::new();
    let mut notes = Vec::new();
    let mut cfg = spec.train.clone();
    if cfg.eval_contexts.is_none() {
        cfg.eval_contexts = Some(spec.contexts);
    }

    let outputs = match spec.kind {
        ExperimentKind::Curve => {
            notes.push(TRAINING_NOTE.into());
            let (o, params) = loss_curve(&start()?, set.as_ref().expect("checked"), &val, &cfg)?;
            Checkpoint::new(params, o.steps as u64, vec![cfg.seed]).save(&out.join("hyperfit.ckpt"))?;
            artifacts.push("hyperfit.ckpt".into());
            Outputs::Curve(o)
        }
        ExperimentKind::Determinacy => {
            notes.push(TRAINING_NOTE.into());
            let sets = order_variants(set.as_ref().expect("checked"), spec.seed)?;
            let (o, _) = determinacy(&start()?, &sets, &held, &val, &cfg)?;
            Outputs::Determinacy(o)
        }
        ExperimentKind::Quantity => {
            notes.push(TRAINING_NOTE.into());
            let set = set.as_ref().expect("checked");
            for &n in &spec.counts {
                if n < cfg.batch_size {
                    notes.push(format!("{n} samples is fewer than batch size {}", cfg.batch_size));
                }
            }
            let points = quantity_sweep(&start()?, set, &spec.counts, spec.total_updates, &ctxs, &val, &cfg)?;
            Outputs::Quantity { points }
        }
        ExperimentKind::Overlap => {
            let loaded = models()?;
            let variants: Vec<Variant<'_, T>> = loaded
                .iter()
                .zip(&spec.models)
                .map(|((label, p), m)| Variant { label: label.clone(), params: p, block: m.block.clone() })
                .collect();
            let variants = overlap_study(&variants, set.as_ref().expect("checked"), &ctxs, &gen, boundaries.as_ref())?;
            Outputs::Overlap { variants }
        }
        ExperimentKind::Sharpness => {
            let loaded = models()?;
            let named: Vec<(&str, &Parameters<T>)> = loaded.iter().map(|(l, p)| (l.as_str(), p)).collect();
            Outputs::Sharpness { rows: sharpness_study(&named, &held)? }
        }
        ExperimentKind::Decay => {
            let loaded = models()?;
            let named: Vec<(&str, &Parameters<T>)> = loaded.iter().map(|(l, p)| (l.as_str(), p)).collect();
            Outputs::Decay { curves: decay_study(&named, &ctxs, &gen)? }
        }
    };
    Ok(RunReport { spec_hash: spec.hash(), environment: Environment::current(T::DTYPE), outputs, artifacts, notes })
}

fn ensure_fresh(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::Invalid(format!("output directory {} is not empty", dir.display())));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs `spec` with artifacts resolved against `base` and writes
/// `report.json`, one CSV per figure and a timing sidecar into the fresh
/// directory `out`.
pub fn run_in(spec: &ExperimentSpec, base: &Path, out: &Path) -> Result<RunReport> {
    spec.check(base)?;
    ensure_fresh(out)?;
    let t = Instant::now();
    let report = match spec.dtype {
        DType::F32 => run_typed::<f32>(spec, base, out)?,
        DType::F64 => run_typed::<f64>(spec, base, out)?,
    };
    let path = out.join(REPORT_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(path, e))?;
    for (name, rows) in report.outputs.tables() {
        write_csv(&out.join(name), &rows)?;
    }
    let timing = Timing {
        wall_clock_seconds: t.elapsed().as_secs_f64(),
        finished_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let path = out.join(TIMING_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&timing)?).map_err(|e| Error::io(path, e))?;
    Ok(report)
}

/// Loads and runs a spec file. The output directory is `out` when given,
/// else the spec's `output`, else `<kind>-<hash prefix>` next to the spec.
pub fn run(spec_path: &Path, out: Option<&Path>) -> Result<RunReport> {
    let spec = ExperimentSpec::load(spec_path)?;
    let base = spec_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out: PathBuf = match (out, &spec.output) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => {
            let kind = serde_json::to_value(spec.kind)?;
            base.join(format!("{}-{}", kind.as_str().unwrap_or("run"), &spec.hash()[..12]))
        }
    };
    run_in(&spec, &base, &out)
}
