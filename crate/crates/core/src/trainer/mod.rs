//! Next-token pre-training and the hyperfitting loop, with loss-curve,
//! greedy-TTR and prediction-entropy tracking.

mod adam;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{HyperfitSet, TokenSequence, DEFAULT_CONTEXT_LEN};
use crate::decoder::{generate, logits_to_distribution, GenerationConfig};
use crate::error::{Error, Result};
use crate::metrics::{ttr, TTR_WINDOW};
use crate::model::{forward, loss_and_grad, nll_sum, shifted, Example, Parameters, Scalar};

pub use adam::Adam;

pub const DEFAULT_STOP_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    /// Fixed number of optimizer steps, cycling through the batches.
    pub constant_updates: Option<usize>,
    /// Hyperfitting stops once the epoch's mean train loss falls below this.
    pub stop_threshold: f64,
    /// Linear warm-up steps; 0 keeps the learning rate constant.
    pub warmup_steps: usize,
    pub max_steps: Option<usize>,
    /// Evaluate every this many epochs (and always after the last one).
    pub eval_every: usize,
    /// Cap on validation contexts used for greedy-TTR probes.
    pub eval_contexts: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Large-model hyperfitting recipe: 20 epochs at 1e-6, batch 8, no decay.
    pub fn paper() -> Self {
        Self {
            epochs: 20,
            lr: 1e-6,
            batch_size: 8,
            weight_decay: 0.0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            constant_updates: None,
            stop_threshold: DEFAULT_STOP_THRESHOLD,
            warmup_steps: 0,
            max_steps: None,
            eval_every: 1,
            eval_contexts: None,
        }
    }

    /// Hyperfitting for small models, which need a larger step to reach
    /// near-zero loss in a comparable number of updates.
    pub fn desk() -> Self {
        Self { epochs: 1500, lr: DESK_LR, eval_every: 50, ..Self::paper() }
    }

    pub fn pretrain() -> Self {
        Self {
            epochs: 1,
            lr: 2e-3,
            weight_decay: 0.01,
            adam_betas: (0.9, 0.98),
            warmup_steps: 50,
            stop_threshold: 0.0,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "pretrain" => Ok(Self::pretrain()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected paper, desk or pretrain)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

const DESK_LR: f64 = 3e-5;

/// Held-out sequences: their loss and prediction entropy are tracked, and
/// their first `context_len` tokens seed the greedy TTR probes.
#[derive(Clone, Debug)]
pub struct Validation {
    pub sequences: Vec<TokenSequence>,
    pub context_len: usize,
    pub generate_tokens: usize,
}

impl Validation {
    pub fn new(sequences: Vec<TokenSequence>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Empty("validation sequences"));
        }
        Ok(Self { sequences, context_len: DEFAULT_CONTEXT_LEN, generate_tokens: TTR_WINDOW })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub val_loss: f64,
    pub mean_pred_entropy: f64,
    pub mean_greedy_ttr: f64,
}

/// Validation loss and entropy over every position, greedy TTR over at most
/// `contexts` probes (all when `None`).
pub fn evaluate<T: Scalar>(params: &Parameters<T>, val: &Validation, contexts: Option<usize>) -> Result<EvalStats> {
    let (mut nll, mut ent, mut n) = (0.0, 0.0, 0usize);
    for s in &val.sequences {
        let (x, y) = shifted(&s.tokens)?;
        let logits = forward(params, x)?;
        nll += nll_sum(&logits, y)?;
        for i in 0..logits.rows {
            ent += logits_to_distribution(logits.row(i), 1.0)?.entropy();
        }
        n += y.len();
    }
    let probes = contexts.unwrap_or(val.sequences.len()).min(val.sequences.len()).max(1);
    let cfg = GenerationConfig::greedy(val.generate_tokens);
    let mut ttr_sum = 0.0;
    for s in &val.sequences[..probes] {
        let ctx = &s.tokens[..val.context_len.min(s.len())];
        let (gen, _) = generate(params, ctx, &cfg)?;
        ttr_sum += ttr(&gen.tokens, TTR_WINDOW)?;
    }
    Ok(EvalStats {
        val_loss: nll / n as f64,
        mean_pred_entropy: ent / n as f64,
        mean_greedy_ttr: ttr_sum / probes as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mean_greedy_ttr: f64,
    pub mean_pred_entropy: f64,
}

impl CurveRow {
    fn new(epoch: usize, step: usize, train_loss: f64, e: EvalStats) -> Self {
        Self {
            epoch,
            step,
            train_loss,
            val_loss: e.val_loss,
            mean_greedy_ttr: e.mean_greedy_ttr,
            mean_pred_entropy: e.mean_pred_entropy,
        }
    }

    fn is_finite(&self) -> bool {
        [self.train_loss, self.val_loss, self.mean_greedy_ttr, self.mean_pred_entropy].iter().all(|x| x.is_finite())
    }
}

/// One row per evaluated epoch; row 0 is the model before any update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub rows: Vec<CurveRow>,
}

impl LossCurve {
    pub fn first(&self) -> Option<&CurveRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&CurveRow> {
        self.rows.last()
    }

    fn push(&mut self, row: CurveRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.epoch < row.epoch));
        self.rows.push(row);
    }

    pub fn is_valid(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].epoch < w[1].epoch) && self.rows.iter().all(CurveRow::is_finite)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "step", "train_loss", "val_loss", "ttr", "entropy"])?;
        for r in &self.rows {
            out.write_record([
                r.epoch.to_string(),
                r.step.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.mean_greedy_ttr.to_string(),
                r.mean_pred_entropy.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn from_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Invalid(format!("bad curve field {i}")))
            };
            rows.push(CurveRow {
                epoch: f(0)? as usize,
                step: f(1)? as usize,
                train_loss: f(2)?,
                val_loss: f(3)?,
                mean_greedy_ttr: f(4)?,
                mean_pred_entropy: f(5)?,
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum StopReason {
    EpochLimit,
    Converged,
    UpdateBudget,
    StepLimit,
    /// Loss or gradient became non-finite at `step`; the returned
    /// parameters are the last finite ones.
    Diverged { step: usize },
}

#[derive(Clone, Debug)]
pub struct TrainRun<T> {
    pub params: Parameters<T>,
    pub curve: LossCurve,
    pub stop: StopReason,
    pub steps: usize,
    pub warnings: Vec<String>,
}

/// Called with every curve row, and the parameters it describes, as soon as
/// the row is recorded.
pub type Observer<'a, T> = &'a mut dyn FnMut(&CurveRow, &Parameters<T>);

fn examples(seqs: &[TokenSequence]) -> Result<Vec<Example<'_>>> {
    seqs.iter().map(|s| shifted(&s.tokens)).collect()
}

fn mean_loss<T: Scalar>(params: &Parameters<T>, ex: &[Example<'_>]) -> Result<f64> {
    let (mut nll, mut n) = (0.0, 0usize);
    for &(x, y) in ex {
        nll += nll_sum(&forward(params, x)?, y)?;
        n += y.len();
    }
    Ok(nll / n as f64)
}

enum StepOutcome {
    Ok(f64),
    Diverged,
}

/// Optimizer plus a copy of the last parameters whose loss was finite.
struct Stepper<T> {
    opt: Adam,
    last_good: Option<Parameters<T>>,
}

impl<T: Scalar> Stepper<T> {
    fn new(params: &Parameters<T>, cfg: &TrainConfig, weight_decay: f64) -> Self {
        Self { opt: Adam::for_params(params, cfg.adam_betas, cfg.adam_eps, weight_decay), last_good: None }
    }

    fn step(&mut self, params: &mut Parameters<T>, batch: &[Example<'_>], lr: f64) -> Result<StepOutcome> {
        let (loss, grads) = loss_and_grad(params, batch)?;
        if !loss.is_finite() || !grads.is_finite() {
            self.revert(params);
            return Ok(StepOutcome::Diverged);
        }
        self.last_good = Some(params.clone());
        self.opt.step(params, &grads, lr);
        if !params.is_finite() {
            self.revert(params);
            return Ok(StepOutcome::Diverged);
        }
        Ok(StepOutcome::Ok(loss))
    }

    fn revert(&mut self, params: &mut Parameters<T>) {
        if let Some(p) = self.last_good.take() {
            *params = p;
        }
    }
}

/// `None` when the model already produces non-finite predictions.
fn try_evaluate<T: Scalar>(params: &Parameters<T>, val: &Validation, contexts: Option<usize>) -> Result<Option<EvalStats>> {
    match evaluate(params, val, contexts) {
        Ok(e) if e.val_loss.is_finite() => Ok(Some(e)),
        Ok(_) | Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Next-token training on fixed-length windows, reshuffled every epoch from
/// the seed. Returns the checkpoint with the best validation loss.
pub fn pretrain<T: Scalar>(
    params: Parameters<T>,
    train: &[TokenSequence],
    val: &Validation,
    cfg: &TrainConfig,
) -> Result<TrainRun<T>> {
    pretrain_observed(params, train, val, cfg, &mut |_, _| {})
}

pub fn pretrain_observed<T: Scalar>(
    mut params: Parameters<T>,
    train: &[TokenSequence],
    val: &Validation,
    cfg: &TrainConfig,
    observe: Observer<'_, T>,
) -> Result<TrainRun<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("pre-training windows"));
    }
    for s in train.iter().chain(&val.sequences) {
        s.validate(params.config.vocab_size)?;
    }
    let ex = examples(train)?;
    let probe = &ex[..ex.len().min(val.sequences.len())];
    let mut curve = LossCurve::default();
    let e0 = evaluate(&params, val, cfg.eval_contexts)?;
    let row0 = CurveRow::new(0, 0, mean_loss(&params, probe)?, e0);
    observe(&row0, &params);
    curve.push(row0);
    let mut best = (e0.val_loss, params.clone());

    let mut stepper = Stepper::new(&params, cfg, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ex.len()).collect();
    let mut step = 0usize;
    let mut stop = StopReason::EpochLimit;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stop = StopReason::StepLimit;
                break;
            }
            let batch: Vec<Example<'_>> = chunk.iter().map(|&i| ex[i]).collect();
            match stepper.step(&mut params, &batch, cfg.lr_at(step))? {
                StepOutcome::Ok(l) => {
                    sum += l;
                    count += 1;
                    step += 1;
                }
                StepOutcome::Diverged => {
                    stop = StopReason::Diverged { step };
                    break 'epochs;
                }
            }
        }
        if count > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs || stop == StopReason::StepLimit) {
            let Some(e) = try_evaluate(&params, val, cfg.eval_contexts)? else {
                stop = StopReason::Diverged { step };
                break;
            };
            let row = CurveRow::new(epoch, step, sum / count as f64, e);
            observe(&row, &params);
            curve.push(row);
            if e.val_loss < best.0 {
                best = (e.val_loss, params.clone());
            }
        }
        if stop == StopReason::StepLimit {
            break;
        }
    }
    Ok(TrainRun { params: best.1, curve, stop, steps: step, warnings: Vec::new() })
}

/// Fine-tunes on a small fixed set until the epoch loss is near zero or the
/// epoch limit is reached. Batches are consecutive slices of the stored
/// sample order, identical every epoch.
pub fn hyperfit<T: Scalar>(
    params: Parameters<T>,
    set: &HyperfitSet,
    val: &Validation,
    cfg: &TrainConfig,
) -> Result<TrainRun<T>> {
    hyperfit_observed(params, set, val, cfg, &mut |_, _| {})
}

pub fn hyperfit_observed<T: Scalar>(
    params: Parameters<T>,
    set: &HyperfitSet,
    val: &Validation,
    cfg: &TrainConfig,
    observe: Observer<'_, T>,
) -> Result<TrainRun<T>> {
    run_hyperfit(params, set, val, cfg, cfg.constant_updates, observe)
}

/// Exactly `total_updates` optimizer steps regardless of the set size; the
/// loss threshold does not end the run.
pub fn hyperfit_constant_updates<T: Scalar>(
    params: Parameters<T>,
    set: &HyperfitSet,
    total_updates: usize,
    val: &Validation,
    cfg: &TrainConfig,
) -> Result<TrainRun<T>> {
    run_hyperfit(params, set, val, cfg, Some(total_updates), &mut |_, _| {})
}

fn run_hyperfit<T: Scalar>(
    mut params: Parameters<T>,
    set: &HyperfitSet,
    val: &Validation,
    cfg: &TrainConfig,
    budget: Option<usize>,
    observe: Observer<'_, T>,
) -> Result<TrainRun<T>> {
    cfg.validate()?;
    if cfg.weight_decay != 0.0 {
        return Err(Error::Config("hyperfitting must not use weight decay".into()));
    }
    if set.is_empty() {
        return Err(Error::Empty("hyperfit set"));
    }
    if set.vocab_size > params.config.vocab_size {
        return Err(Error::VocabMismatch(set.vocab_size, params.config.vocab_size));
    }
    for s in set.samples.iter().chain(&val.sequences) {
        s.validate(params.config.vocab_size)?;
    }
    let mut warnings = Vec::new();
    if set.len() < cfg.batch_size {
        warnings.push(format!("{} samples is fewer than batch size {}", set.len(), cfg.batch_size));
    }
    let ex = examples(&set.samples)?;
    let batches: Vec<&[Example<'_>]> = ex.chunks(cfg.batch_size).collect();
    let epochs = match budget {
        Some(u) => u.div_ceil(batches.len()),
        None => cfg.epochs,
    };

    let mut curve = LossCurve::default();
    let row0 = CurveRow::new(0, 0, mean_loss(&params, &ex)?, evaluate(&params, val, cfg.eval_contexts)?);
    observe(&row0, &params);
    curve.push(row0);

    let mut stepper = Stepper::new(&params, cfg, 0.0);
    let mut step = 0usize;
    let mut stop = if budget.is_some() { StopReason::UpdateBudget } else { StopReason::EpochLimit };
    for epoch in 1..=epochs {
        let (mut sum, mut count) = (0.0, 0usize);
        let mut halted = None;
        for batch in &batches {
            if budget.is_some_and(|u| step >= u) {
                break;
            }
            if cfg.max_steps.is_some_and(|m| step >= m) {
                halted = Some(StopReason::StepLimit);
                break;
            }
            match stepper.step(&mut params, batch, cfg.lr_at(step))? {
                StepOutcome::Ok(l) => {
                    sum += l * batch.iter().map(|e| e.1.len()).sum::<usize>() as f64;
                    count += batch.iter().map(|e| e.1.len()).sum::<usize>();
                    step += 1;
                }
                StepOutcome::Diverged => {
                    halted = Some(StopReason::Diverged { step });
                    break;
                }
            }
        }
        let train_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        if budget.is_none() && train_loss < cfg.stop_threshold {
            halted = halted.or(Some(StopReason::Converged));
        }
        let last = epoch == epochs || halted.is_some();
        if count > 0 && (epoch % cfg.eval_every == 0 || last) {
            match try_evaluate(&params, val, cfg.eval_contexts)? {
                Some(e) => {
                    let row = CurveRow::new(epoch, step, train_loss, e);
                    observe(&row, &params);
                    curve.push(row);
                }
                None => {
                    stepper.revert(&mut params);
                    halted = Some(StopReason::Diverged { step });
                }
            }
        }
        if let Some(h) = halted {
            stop = h;
            break;
        }
    }
    Ok(TrainRun { params, curve, stop, steps: step, warnings })
}
