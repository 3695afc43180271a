//! Maximum-likelihood training of the decoder under a prediction mode.
//!
//! Every step draws a batch, runs forward and backward per sample on the
//! worker pool, sums the per-sample gradients in batch order (so the result
//! does not depend on thread scheduling), divides by the number of predicted
//! tokens, clips by global norm and applies one Adam update.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgm::{mean_parent_count, Cgm, PredictionMode};
use crate::dataset::{Dataset, Sample};
use crate::decoder::{Checkpoint, Decoder, DecoderConfig, DecoderError};
use crate::mask::{compile, MaskError};
use crate::seed::{derive_seed, rng_for, stable_hash};
use crate::tensor::{Graph, ParamSet, Real, Tensor};
use crate::threads::worker_pool;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training samples")]
    EmptyDataset,
    #[error("loss became {loss} at step {step}")]
    DivergedLoss { step: usize, loss: f64 },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub seed: u64,
    pub mode: PredictionMode,
    pub precision: Precision,
    pub clip_norm: f64,
    pub val_fraction: f64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            warmup_steps: 50,
            batch_size: 32,
            epochs: 10,
            steps: None,
            seed: 0,
            mode: PredictionMode::Cogt,
            precision: Precision::F32,
            clip_norm: 1.0,
            val_fraction: 0.1,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self, n_train: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * n_train.div_ceil(self.batch_size.max(1)))
    }

    pub fn schedule(&self, n_train: usize) -> LrSchedule {
        LrSchedule {
            lr: self.lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps(n_train),
        }
    }

    pub fn validate(&self, n_train: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be finite and non-negative", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let total = self.total_steps(n_train);
        if total == 0 || self.warmup_steps >= total {
            return bad(format!(
                "warmup_steps {} must be below total steps {total}",
                self.warmup_steps
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} outside [0,1)", self.val_fraction));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("lr".into(), self.lr.to_string());
        m.insert("warmup_steps".into(), self.warmup_steps.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("epochs".into(), self.epochs.to_string());
        if let Some(s) = self.steps {
            m.insert("steps".into(), s.to_string());
        }
        m.insert("seed".into(), self.seed.to_string());
        m.insert("mode".into(), self.mode.to_string());
        m.insert(
            "precision".into(),
            match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
            .into(),
        );
        m.insert("clip_norm".into(), self.clip_norm.to_string());
        m.insert("val_fraction".into(), self.val_fraction.to_string());
        m.insert("eval_every".into(), self.eval_every.to_string());
        m
    }

    /// Override fields from `key=value` pairs; decoder keys are ignored.
    pub fn apply_kv(&mut self, kv: &BTreeMap<String, String>) -> Result<(), TrainError> {
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V, TrainError> {
            v.parse()
                .map_err(|_| TrainError::Config(format!("bad value `{v}` for `{k}`")))
        }
        for (k, v) in kv {
            match k.as_str() {
                "lr" => self.lr = num(k, v)?,
                "warmup_steps" => self.warmup_steps = num(k, v)?,
                "batch_size" => self.batch_size = num(k, v)?,
                "epochs" => self.epochs = num(k, v)?,
                "steps" => self.steps = Some(num(k, v)?),
                "seed" => self.seed = num(k, v)?,
                "mode" => self.mode = v.parse().map_err(TrainError::Config)?,
                "precision" => {
                    self.precision = match v.as_str() {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        _ => return Err(TrainError::Config(format!("bad precision `{v}`"))),
                    }
                }
                "clip_norm" => self.clip_norm = num(k, v)?,
                "val_fraction" => self.val_fraction = num(k, v)?,
                "eval_every" => self.eval_every = num(k, v)?,
                _ => {}
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0, then cosine annealing to 0 at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

pub fn lr_at(step: usize, schedule: &LrSchedule) -> f64 {
    schedule.at(step)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) {
        self.step += 1;
        let b1 = T::from_f64_lossy(ADAM_BETA1);
        let b2 = T::from_f64_lossy(ADAM_BETA2);
        let one = T::one();
        let c1 = T::from_f64_lossy(1.0 - ADAM_BETA1.powi(self.step as i32));
        let c2 = T::from_f64_lossy(1.0 - ADAM_BETA2.powi(self.step as i32));
        let eps = T::from_f64_lossy(ADAM_EPS);
        let lr = T::from_f64_lossy(lr);
        for i in 0..params.len() {
            let g = grads.tensor(i).data();
            let m = self.m.tensor_mut(i).data_mut();
            for (m, &g) in m.iter_mut().zip(g) {
                *m = b1 * *m + (one - b1) * g;
            }
            let v = self.v.tensor_mut(i).data_mut();
            for (v, &g) in v.iter_mut().zip(g) {
                *v = b2 * *v + (one - b2) * g * g;
            }
            let m = self.m.tensor(i).data();
            let v = self.v.tensor(i).data();
            let p = params.tensor_mut(i).data_mut();
            for ((p, &m), &v) in p.iter_mut().zip(m).zip(v) {
                let mhat = m / c1;
                let vhat = v / c2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub mode: String,
    pub mean_parent_count: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation loss, or the final state without a validation split.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub best_step: usize,
    pub best_val_loss: Option<f64>,
    pub metrics: Vec<StepMetrics>,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Per-sample regime draws that came out parallel (Mixed mode).
    pub parallel_draws: usize,
    pub total_draws: usize,
}

/// Deterministic validation membership by hash of the sample id.
pub fn is_validation(id: &str, fraction: f64) -> bool {
    (stable_hash(id) % 1_000_000) as f64 / 1_000_000.0 < fraction
}

pub fn split(dataset: &Dataset, val_fraction: f64) -> (Vec<&Sample>, Vec<&Sample>) {
    dataset
        .samples
        .iter()
        .partition(|s| !is_validation(&s.id, val_fraction))
}

/// Accuracy-free summary of a regime over samples: mean per-token negative
/// log-likelihood in eval mode.
pub fn mean_token_nll<T: Real + Send + Sync>(
    decoder: &Decoder<T>,
    samples: &[&Sample],
    mode: PredictionMode,
) -> Result<f64, TrainError> {
    let regime = mode.scoring_regime();
    let parts = samples
        .par_iter()
        .map(|s| {
            let plan = compile(&Cgm::from_caption(&s.caption), regime)?;
            let lp = decoder.conditional_logprob(&s.caption, &plan, &s.visual)?;
            let sum: f64 = lp.iter().map(|v| -v.to_f64_lossy()).sum();
            Ok((sum, lp.len()))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let (sum, count) = parts
        .iter()
        .fold((0.0, 0usize), |(a, n), (s, c)| (a + s, n + c));
    Ok(sum / count.max(1) as f64)
}

struct SampleGrad<T> {
    nll: f64,
    tokens: usize,
    grads: Vec<Vec<T>>,
    parallel: bool,
}

fn sample_gradient<T: Real>(
    decoder: &Decoder<T>,
    sample: &Sample,
    cgm: &Cgm,
    mode: PredictionMode,
    dropout_key: u64,
) -> Result<SampleGrad<T>, TrainError> {
    let plan = compile(cgm, mode)?;
    let mut g = Graph::with_dropout_key(dropout_key);
    let leaves = decoder.leaves(&mut g, true);
    let loss = decoder.loss_on(&mut g, &leaves, &sample.caption, &plan, &sample.visual, true)?;
    let nll = g.value(loss).data()[0].to_f64_lossy();
    let back = g.backward(loss);
    let grads = leaves
        .iter()
        .zip(decoder.params().iter())
        .map(|(&v, (_, t))| {
            back.get(v)
                .map(<[T]>::to_vec)
                .unwrap_or_else(|| vec![T::zero(); t.len()])
        })
        .collect();
    Ok(SampleGrad {
        nll,
        tokens: plan.predict_slots().len(),
        grads,
        parallel: mode == PredictionMode::FullyParallel,
    })
}

/// Train a fresh decoder on `dataset`.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
    decoder_cfg: &DecoderConfig,
) -> Result<TrainOutcome, TrainError> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(dataset, cfg, decoder_cfg),
        Precision::F64 => train_typed::<f64>(dataset, cfg, decoder_cfg),
    }
}

fn train_typed<T: Real + Send + Sync>(
    dataset: &Dataset,
    cfg: &TrainConfig,
    decoder_cfg: &DecoderConfig,
) -> Result<TrainOutcome, TrainError> {
    let (train_set, val_set) = split(dataset, cfg.val_fraction);
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    cfg.validate(train_set.len())?;
    let schedule = cfg.schedule(train_set.len());
    let cgms: Vec<Cgm> = train_set.iter().map(|s| Cgm::from_caption(&s.caption)).collect();

    let mut decoder = Decoder::<T>::init(decoder_cfg.clone(), derive_seed(cfg.seed, "init"))?;
    let mut adam = AdamState::new(decoder.params());
    let mut metrics = Vec::with_capacity(schedule.total_steps);
    let mut best: Option<(Decoder<T>, usize, f64)> = None;
    let (mut parallel_draws, mut total_draws) = (0, 0);

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    let mut sample_counter: u64 = 0;
    let pool = worker_pool();

    for step in 1..=schedule.total_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng_for(cfg.seed, &format!("shuffle/{epoch}")));
                epoch += 1;
                cursor = 0;
            }
            batch.push((order[cursor], sample_counter));
            cursor += 1;
            sample_counter += 1;
        }

        let results = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(slot, &(idx, counter))| {
                    let mode = cfg.mode.resolve(cfg.seed, counter);
                    let key = derive_seed(cfg.seed, &format!("dropout/{step}/{slot}"));
                    sample_gradient(&decoder, train_set[idx], &cgms[idx], mode, key)
                })
                .collect::<Result<Vec<_>, _>>()
        })?;

        let mut grads = decoder.params().zeros_like();
        let (mut nll, mut tokens) = (0.0, 0usize);
        for r in &results {
            nll += r.nll;
            tokens += r.tokens;
            total_draws += 1;
            parallel_draws += r.parallel as usize;
            for (i, g) in r.grads.iter().enumerate() {
                for (a, &b) in grads.tensor_mut(i).data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        let loss = nll / tokens.max(1) as f64;
        if !loss.is_finite() {
            return Err(TrainError::DivergedLoss { step, loss });
        }
        grads.scale(T::from_f64_lossy(1.0 / tokens.max(1) as f64));
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(TrainError::DivergedLoss { step, loss: norm });
        }
        if norm > cfg.clip_norm {
            grads.scale(T::from_f64_lossy(cfg.clip_norm / norm));
        }
        let lr = schedule.at(step);
        adam.update(decoder.params_mut(), &grads, lr);

        let mpc = batch
            .iter()
            .map(|&(idx, _)| mean_parent_count(&cgms[idx]))
            .sum::<f64>()
            / batch.len() as f64;
        let mut line = StepMetrics {
            step,
            loss,
            lr,
            mode: cfg.mode.to_string(),
            mean_parent_count: mpc,
            val_loss: None,
        };
        let eval_now = !val_set.is_empty()
            && (step == schedule.total_steps
                || (cfg.eval_every > 0 && step % cfg.eval_every == 0));
        if eval_now {
            let val = pool.install(|| mean_token_nll(&decoder, &val_set, cfg.mode))?;
            if !val.is_finite() {
                return Err(TrainError::DivergedLoss { step, loss: val });
            }
            line.val_loss = Some(val);
            if best.as_ref().is_none_or(|(_, _, b)| val < *b) {
                best = Some((decoder.clone(), step, val));
            }
        }
        metrics.push(line);
    }

    let to_ckpt = |d: &Decoder<T>| Checkpoint {
        decoder: d.cast::<f32>(),
        mode: cfg.mode,
    };
    let last = to_ckpt(&decoder);
    let (best_ckpt, best_step, best_val_loss) = match &best {
        Some((d, s, v)) => (to_ckpt(d), *s, Some(*v)),
        None => (last.clone(), schedule.total_steps, None),
    };
    Ok(TrainOutcome {
        best: best_ckpt,
        last,
        best_step,
        best_val_loss,
        metrics,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        parallel_draws,
        total_draws,
    })
}

/// Parameter tensor shaped like `like`, for tests and tools.
pub fn filled_like<T: Real>(like: &ParamSet<T>, value: T) -> ParamSet<T> {
    let mut out = ParamSet::new();
    for (name, t) in like.iter() {
        out.push(name, Tensor::filled(t.shape().to_vec(), value));
    }
    out
}
