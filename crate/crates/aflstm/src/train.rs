//! Optimization and evaluation: categorical NLL with one L2 term per
//! batch, global gradient-norm clipping, Adam with bias correction,
//! seeded epoch shuffling, per-epoch dev evaluation with best-snapshot
//! early stopping, and accuracy metrics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::autograd::{NodeId, ParamSet, Tape};
use crate::data::IndexedExample;
use crate::error::{Error, Result};
use crate::model::{Model, ModelVariant};
use crate::tensor::Tensor;

const PROB_FLOOR: f64 = 1e-12;

// ── configuration ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda_l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lambda_l2: 4e-6,
            batch_size: 25,
            max_epochs: 50,
            patience: 10,
            grad_clip_norm: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lambda_l2 >= 0.0) {
            return Err(Error::Config("lambda_l2 must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience must lie in [1, max_epochs], got {} with max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

// ── metrics ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub split: String,
    pub epoch: usize,
    pub accuracy: f64,
    /// Mean clamped negative log-likelihood (no regularization term).
    pub loss: f64,
    /// Gold examples per class; sums to the dataset size.
    pub per_class_total: Vec<usize>,
    /// Correct predictions per gold class.
    pub per_class_correct: Vec<usize>,
}

/// One JSON record per line, parseable back into `Metrics`.
pub fn history_to_bytes(history: &[Metrics]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for m in history {
        serde_json::to_writer(&mut out, m)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_history(history: &[Metrics], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&history_to_bytes(history)?)?;
    Ok(())
}

// ── loss ──────────────────────────────────────────────────────────────

/// Negative log-likelihood of the labeled class (probability floored at
/// 1e-12) plus lambda times the summed squared norm of every trainable
/// parameter.
pub fn loss_value(probs: &[f64], label: usize, params: &ParamSet, lambda: f64) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Contract(format!(
            "label {label} outside {} classes",
            probs.len()
        )));
    }
    let nll = -probs[label].max(PROB_FLOOR).ln();
    let reg: f64 = params
        .iter()
        .filter(|p| p.trainable())
        .map(|p| p.value().data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(nll + lambda * reg)
}

// ── gradient clipping ─────────────────────────────────────────────────

/// Scales every trainable gradient by max_norm/norm when the global L2
/// norm exceeds max_norm. Returns the applied scale (1.0 if none).
pub fn clip_gradients(params: &mut ParamSet, max_norm: f64) -> f64 {
    let norm_sq: f64 = params
        .iter()
        .filter(|p| p.trainable())
        .map(|p| p.grad().data().iter().map(|g| g * g).sum::<f64>())
        .sum();
    let norm = norm_sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for p in params.iter_mut() {
        if p.trainable() {
            for g in p.grad_mut().data_mut() {
                *g *= scale;
            }
        }
    }
    scale
}

// ── Adam ──────────────────────────────────────────────────────────────

/// First/second moment estimates, one pair per parameter in set order.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> AdamState {
        let m = params.iter().map(|p| Tensor::zeros(p.value().shape().to_vec())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.value().shape().to_vec())).collect();
        AdamState { step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over all trainable parameters;
/// gradients are zeroed afterwards.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, config: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !p.trainable() {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let grads = p.grad().data().to_vec();
        for ((w, g), (mi, vi)) in p
            .value_mut()
            .data_mut()
            .iter_mut()
            .zip(&grads)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
    params.zero_grads();
}

// ── evaluation ────────────────────────────────────────────────────────

/// Dropout-free accuracy over a dataset, argmax ties toward the lowest
/// class. `split` and `epoch` only label the returned record.
pub fn evaluate(model: &Model, dataset: &[IndexedExample], split: &str, epoch: usize) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Data(format!("empty dataset for split {split:?}")));
    }
    let k = model.config().num_classes;
    let mut per_class_total = vec![0usize; k];
    let mut per_class_correct = vec![0usize; k];
    let mut loss_sum = 0.0;
    for ex in dataset {
        if ex.label >= k {
            return Err(Error::Contract(format!(
                "label {} outside {k} classes",
                ex.label
            )));
        }
        let pred = model.forward(&ex.sentence, &ex.aspect)?;
        per_class_total[ex.label] += 1;
        if pred.predicted_class() == ex.label {
            per_class_correct[ex.label] += 1;
        }
        loss_sum -= pred.probs.data()[ex.label].max(PROB_FLOOR).ln();
    }
    let correct: usize = per_class_correct.iter().sum();
    Ok(Metrics {
        split: split.to_string(),
        epoch,
        accuracy: correct as f64 / dataset.len() as f64,
        loss: loss_sum / dataset.len() as f64,
        per_class_total,
        per_class_correct,
    })
}

// ── training loop ─────────────────────────────────────────────────────

#[derive(Debug)]
pub struct TrainOutput {
    /// The model restored to its best-dev-accuracy snapshot.
    pub model: Model,
    /// Two records per completed epoch: train then dev.
    pub history: Vec<Metrics>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub stopped_early: bool,
}

fn check_examples(model: &Model, dataset: &[IndexedExample], split: &str) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Data(format!("empty {split} split")));
    }
    let k = model.config().num_classes;
    let v = model.vocab_size();
    for ex in dataset {
        if ex.sentence.is_empty() || ex.aspect.is_empty() {
            return Err(Error::Data(format!("{split}: example with empty sentence or aspect")));
        }
        if ex.label >= k {
            return Err(Error::Data(format!("{split}: label {} outside {k} classes", ex.label)));
        }
        if let Some(&ix) = ex.sentence.iter().chain(&ex.aspect).find(|&&ix| ix >= v) {
            return Err(Error::Vocab { index: ix, size: v });
        }
    }
    Ok(())
}

/// Counting "training" for the majority baseline: fixes the class with
/// the most training examples (ties toward the lowest class index).
fn fit_majority(model: &mut Model, train_set: &[IndexedExample]) -> Result<()> {
    let k = model.config().num_classes;
    let mut counts = vec![0usize; k];
    for ex in train_set {
        counts[ex.label] += 1;
    }
    let best = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
        .unwrap_or(0);
    model.set_majority_class(best)
}

/// Mini-batch training with per-epoch dev evaluation. The dev snapshot
/// with the highest accuracy (ties resolved toward lower dev loss) is
/// returned; training stops after `patience` consecutive epochs without
/// strict accuracy improvement.
pub fn train(
    mut model: Model,
    train_set: &[IndexedExample],
    dev_set: &[IndexedExample],
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    check_examples(&model, train_set, "train")?;
    check_examples(&model, dev_set, "dev")?;

    if model.config().variant == ModelVariant::Majority {
        fit_majority(&mut model, train_set)?;
        let history = vec![
            evaluate(&model, train_set, "train", 1)?,
            evaluate(&model, dev_set, "dev", 1)?,
        ];
        let best = history[1].accuracy;
        return Ok(TrainOutput {
            model,
            history,
            best_epoch: 1,
            best_dev_accuracy: best,
            stopped_early: false,
        });
    }

    let dropout_p = model.config().dropout_p;
    let repr_dim = model.config().repr_dim();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);

    let mut adam = AdamState::new(model.params());
    let mut history = Vec::new();
    let mut best_params = model.params().clone();
    let mut best_dev_accuracy = f64::NEG_INFINITY;
    let mut best_dev_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut epochs_since_improvement = 0usize;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let mut nll_sum: Option<NodeId> = None;
            for &ix in batch {
                let ex = &train_set[ix];
                let mask: Option<Vec<f64>> = if dropout_p > 0.0 {
                    let keep = 1.0 - dropout_p;
                    Some(
                        (0..repr_dim)
                            .map(|_| {
                                if dropout_rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                let pass = model.build_forward(
                    model.params(),
                    &mut tape,
                    &ex.sentence,
                    &ex.aspect,
                    mask.as_deref(),
                )?;
                let nll = tape.nll(pass.probs, ex.label)?;
                nll_sum = Some(match nll_sum {
                    Some(acc) => tape.add(acc, nll)?,
                    None => nll,
                });
            }
            let mean_nll = tape.scale(nll_sum.expect("non-empty batch"), 1.0 / batch.len() as f64);
            // one regularization term per batch, over trainable params
            let total = if config.lambda_l2 > 0.0 {
                let mut reg: Option<NodeId> = None;
                let trainable: Vec<_> = model
                    .params()
                    .ids()
                    .filter(|&id| model.params().get(id).trainable())
                    .collect();
                for id in trainable {
                    let sq = tape.param_sum_squares(model.params(), id);
                    reg = Some(match reg {
                        Some(acc) => tape.add(acc, sq)?,
                        None => sq,
                    });
                }
                let reg = tape.scale(reg.expect("model has trainable parameters"), config.lambda_l2);
                tape.add(mean_nll, reg)?
            } else {
                mean_nll
            };
            epoch_loss_sum += tape.value(total).item();
            batches += 1;
            tape.backward(total, model.params_mut())?;
            clip_gradients(model.params_mut(), config.grad_clip_norm);
            adam_step(model.params_mut(), &mut adam, config);
        }

        let mut train_metrics = evaluate(&model, train_set, "train", epoch)?;
        // report the optimization objective actually minimized this epoch
        train_metrics.loss = epoch_loss_sum / batches as f64;
        let dev_metrics = evaluate(&model, dev_set, "dev", epoch)?;
        let dev_accuracy = dev_metrics.accuracy;
        let dev_loss = dev_metrics.loss;
        history.push(train_metrics);
        history.push(dev_metrics);

        // among equal-accuracy epochs the lower-loss model is the better
        // selection; the patience counter still keys on accuracy alone
        if dev_accuracy > best_dev_accuracy || (dev_accuracy == best_dev_accuracy && dev_loss < best_dev_loss)
        {
            if dev_accuracy == best_dev_accuracy {
                epochs_since_improvement += 1;
            } else {
                epochs_since_improvement = 0;
            }
            best_dev_accuracy = dev_accuracy;
            best_dev_loss = dev_loss;
            best_epoch = epoch;
            best_params = model.params().clone();
        } else {
            epochs_since_improvement += 1;
        }
        if epochs_since_improvement >= config.patience {
            stopped_early = true;
            break;
        }
    }

    *model.params_mut() = best_params;
    Ok(TrainOutput {
        model,
        history,
        best_epoch,
        best_dev_accuracy,
        stopped_early,
    })
}
