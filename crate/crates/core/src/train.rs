//! Loss, batched gradients, evaluation and the early-stopping training loop.
//!
//! Every video gets its own tape. Within a batch the per-video work is handed
//! to an [`Executor`], which may run it in parallel; results are always summed
//! in video order so training is deterministic regardless of thread count.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_indices, Dataset, PaddedBatch};
use crate::error::{Error, Result};
use crate::gradcheck::{compare, finite_diff_grad, TensorError};
use crate::matrix::Matrix;
use crate::metrics::Metrics;
use crate::model::{argmax_rows, forward_tape, GradientStore, ModelConfig, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tape::{Fault, Tape, LOG_CLAMP};

/// Runs `n` independent jobs and returns their results in index order.
pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Mean negative log-likelihood over masked-in utterances. Probabilities are
/// clamped at `1e-12` before the log.
pub fn cross_entropy(probs: &Matrix, labels: &[usize], mask: &[bool]) -> Result<f64> {
    if labels.len() != probs.rows() || mask.len() != probs.rows() {
        return Err(Error::dim("cross_entropy", probs.shape(), (labels.len(), mask.len())));
    }
    let (total, count) = nll_sum(probs, labels, mask)?;
    if count == 0 {
        return Err(Error::contract("cross-entropy over zero unmasked utterances"));
    }
    Ok(total / count as f64)
}

fn nll_sum(probs: &Matrix, labels: &[usize], mask: &[bool]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    for (t, (&y, &keep)) in labels.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        if y >= probs.cols() {
            return Err(Error::contract(alloc::format!("label {y} out of range")));
        }
        total -= libm::log(probs.get(t, y).max(LOG_CLAMP));
        count += 1;
    }
    Ok((total, count))
}

/// `scale · Σ NLL` of one video and its gradient with respect to `params`.
pub fn video_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    video: &PaddedBatch,
    scale: f64,
) -> Result<(f64, GradientStore)> {
    video_gradient_with_fault(params, cfg, video, scale, None)
}

#[doc(hidden)]
pub fn video_gradient_with_fault(
    params: &ModelParams,
    cfg: &ModelConfig,
    video: &PaddedBatch,
    scale: f64,
    fault: Option<Fault>,
) -> Result<(f64, GradientStore)> {
    let mut tape = Tape::with_fault(fault);
    let (net, probs, _) = forward_tape(params, cfg, &video.features, &mut tape)?;
    let loss = tape.masked_nll(probs, &video.labels, &video.mask, scale)?;
    let grads = tape.backward(loss)?;
    let store = net.map(|_, &v| grads.wrt(v, tape.value(v).shape()));
    Ok((tape.value(loss).get(0, 0), store))
}

/// Mean cross-entropy over every real utterance of `videos` and its gradient.
pub fn batch_gradient<E: Executor>(
    params: &ModelParams,
    cfg: &ModelConfig,
    videos: &[&PaddedBatch],
    exec: &E,
) -> Result<(f64, GradientStore)> {
    batch_gradient_with_fault(params, cfg, videos, exec, None)
}

#[doc(hidden)]
pub fn batch_gradient_with_fault<E: Executor>(
    params: &ModelParams,
    cfg: &ModelConfig,
    videos: &[&PaddedBatch],
    exec: &E,
    fault: Option<Fault>,
) -> Result<(f64, GradientStore)> {
    let real: usize = videos.iter().map(|v| v.real_count()).sum();
    if real == 0 {
        return Err(Error::contract("batch has no unmasked utterances"));
    }
    let scale = 1.0 / real as f64;
    let results = exec.map(videos.len(), |i| {
        let v = videos[i];
        if v.real_count() == 0 {
            // all padding: contributes nothing
            return Ok(None);
        }
        video_gradient_with_fault(params, cfg, v, scale, fault).map(Some)
    });
    let mut loss = 0.0;
    let mut total = params.zeros_like();
    for r in results {
        if let Some((l, g)) = r? {
            loss += l;
            total.add_assign(&g);
        }
    }
    Ok((loss, total))
}

/// Forward pass of every video; returns `(Σ NLL, #real utterances, predictions
/// of real utterances, their labels)` in video order.
fn score<E: Executor>(
    params: &ModelParams,
    cfg: &ModelConfig,
    videos: &[&PaddedBatch],
    exec: &E,
) -> Result<(f64, usize, Vec<usize>, Vec<usize>)> {
    let results = exec.map(videos.len(), |i| {
        let v = videos[i];
        let mut tape = Tape::new();
        let (_, probs, _) = forward_tape(params, cfg, &v.features, &mut tape)?;
        let probs = tape.value(probs);
        let (nll, count) = nll_sum(probs, &v.labels, &v.mask)?;
        let preds = argmax_rows(probs);
        let mut p = Vec::with_capacity(count);
        let mut y = Vec::with_capacity(count);
        for t in 0..v.len() {
            if v.mask[t] {
                p.push(preds[t]);
                y.push(v.labels[t]);
            }
        }
        Ok::<_, Error>((nll, count, p, y))
    });
    let mut nll = 0.0;
    let mut count = 0;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for r in results {
        let (n, c, p, y) = r?;
        nll += n;
        count += c;
        preds.extend(p);
        labels.extend(y);
    }
    Ok((nll, count, preds, labels))
}

/// Mean cross-entropy over every real utterance of `videos`.
pub fn dataset_loss<E: Executor>(params: &ModelParams, cfg: &ModelConfig, videos: &[&PaddedBatch], exec: &E) -> Result<f64> {
    let (nll, count, _, _) = score(params, cfg, videos, exec)?;
    if count == 0 {
        return Err(Error::contract("no unmasked utterances to score"));
    }
    Ok(nll / count as f64)
}

pub fn evaluate_batches<E: Executor>(
    params: &ModelParams,
    cfg: &ModelConfig,
    videos: &[&PaddedBatch],
    exec: &E,
) -> Result<Metrics> {
    let (_, _, preds, labels) = score(params, cfg, videos, exec)?;
    Metrics::from_predictions(&preds, &labels, cfg.num_classes)
}

/// Per-utterance metrics over every real utterance of `data`.
pub fn evaluate<E: Executor>(params: &ModelParams, cfg: &ModelConfig, data: &Dataset, exec: &E) -> Result<Metrics> {
    let padded = data.padded(cfg.max_utterances)?;
    let refs: Vec<&PaddedBatch> = padded.iter().collect();
    evaluate_batches(params, cfg, &refs, exec)
}

fn default_max_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    10
}
fn default_val_fraction() -> f64 {
    0.2
}
fn default_batch_size() -> usize {
    16
}
fn default_lr() -> f64 {
    AdamConfig::default().lr
}
fn default_beta1() -> f64 {
    AdamConfig::default().beta1
}
fn default_beta2() -> f64 {
    AdamConfig::default().beta2
}
fn default_epsilon() -> f64 {
    AdamConfig::default().epsilon
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Share of training videos held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Videos per optimizer step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            val_fraction: default_val_fraction(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam hyperparameters out of range"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

pub fn train<E: Executor>(
    params: ModelParams,
    cfg: &ModelConfig,
    data: &Dataset,
    tc: &TrainConfig,
    exec: &E,
) -> Result<TrainOutcome> {
    train_observed(params, cfg, data, tc, exec, |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_observed<E: Executor>(
    mut params: ModelParams,
    cfg: &ModelConfig,
    data: &Dataset,
    tc: &TrainConfig,
    exec: &E,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    tc.validate()?;
    cfg.validate()?;
    data.validate()?;
    let padded = data.padded(cfg.max_utterances)?;
    let (mut train_idx, val_idx) = split_indices(padded.len(), tc.val_fraction, tc.seed)?;
    let val: Vec<&PaddedBatch> = val_idx.iter().map(|&i| &padded[i]).collect();
    if val.iter().all(|v| v.real_count() == 0) {
        return Err(Error::contract("validation split has no utterances"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = AdamState::new(&params, tc.adam());
    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();

    for epoch in 1..=tc.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        let mut seen = 0usize;
        for chunk in train_idx.chunks(tc.batch_size) {
            let batch: Vec<&PaddedBatch> = chunk.iter().map(|&i| &padded[i]).collect();
            let real: usize = batch.iter().map(|v| v.real_count()).sum();
            if real == 0 {
                continue;
            }
            let (loss, grads) = batch_gradient(&params, cfg, &batch, exec)?;
            adam_step(&mut params, &grads, &mut adam)?;
            weighted_loss += loss * real as f64;
            seen += real;
        }
        let (val_nll, val_count, preds, labels) = score(&params, cfg, &val, exec)?;
        let val_loss = val_nll / val_count as f64;
        let val_acc = Metrics::from_predictions(&preds, &labels, cfg.num_classes)?.accuracy;
        let record = EpochRecord {
            epoch,
            train_loss: if seen == 0 { 0.0 } else { weighted_loss / seen as f64 },
            val_loss,
            val_acc,
        };
        observe(&record);
        history.push(record);

        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        history,
    })
}

/// Backward-versus-finite-difference comparison of the mean cross-entropy
/// over `videos`, one entry per parameter tensor.
pub fn check_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    videos: &[&PaddedBatch],
    epsilon: f64,
) -> Result<Vec<TensorError>> {
    check_gradients_with_fault(params, cfg, videos, epsilon, None)
}

#[doc(hidden)]
pub fn check_gradients_with_fault(
    params: &ModelParams,
    cfg: &ModelConfig,
    videos: &[&PaddedBatch],
    epsilon: f64,
    fault: Option<Fault>,
) -> Result<Vec<TensorError>> {
    let (_, analytic) = batch_gradient_with_fault(params, cfg, videos, &Sequential, fault)?;
    let numeric = finite_diff_grad(|p: &ModelParams| dataset_loss(p, cfg, videos, &Sequential), params, epsilon)?;
    compare(&analytic, &numeric)
}
