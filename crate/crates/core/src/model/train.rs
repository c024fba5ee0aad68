use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, BackwardOptions, DropoutMasks};
use super::optim::{adam_step, lr_at, Adam};
use super::params::{init_params, Params};
use super::{LabelRow, ModelConfig};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::math::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub total_steps: u64,
    pub seed: u64,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    /// Updates between validation evaluations.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            base_lr: 1e-4,
            decay_factor: 0.85,
            decay_every: 12_000,
            total_steps: 20_000,
            seed: 0,
            patience: 10,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("train.batch_size", self.batch_size as u64),
            ("train.decay_every", self.decay_every),
            ("train.total_steps", self.total_steps),
            ("train.patience", self.patience as u64),
            ("train.eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::config("train.base_lr", "must be a positive real"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("train.decay_factor", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn lr(&self, step: u64) -> f64 {
        lr_at(self.base_lr, self.decay_factor, self.decay_every, step)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sequence: FeatureSequence,
    pub labels: LabelRow,
}

/// One row of the loss curve. Losses are the task-summed cross-entropy
/// averaged over samples; `val_loss` is present on evaluation steps only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    /// Parameters with the lowest validation loss (final ones without a
    /// validation set).
    pub params: Params<F>,
    pub best_step: u64,
    pub best_val_loss: Option<f64>,
    pub steps_run: u64,
    pub stopped_early: bool,
    pub curve: Vec<CurvePoint>,
}

/// Task-summed cross-entropy averaged over `samples`, without dropout.
pub fn mean_loss<F: Real>(params: &Params<F>, samples: &[Sample]) -> Result<f64> {
    let seqs: Vec<FeatureSequence> = samples.iter().map(|s| s.sequence.clone()).collect();
    let probs = forward(params, &seqs, None)?;
    let mut total = 0.0;
    for (p, s) in probs.iter().zip(samples) {
        for (pj, yj) in p.iter().zip(&s.labels) {
            total += super::loss::bce_term(pj.to_f64().unwrap_or(f64::NAN), *yj);
        }
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Mini-batch Adam on the summed objective (cross-entropy plus L1)
/// divided by the batch size.
///
/// Batches are drawn from a shuffled pass over the training set, with a
/// fresh permutation every epoch. Shuffling, initialization and dropout
/// masks each use their own seeded stream, so results depend only on the
/// configs and the data.
pub fn train<F: Real>(
    train_set: &[Sample],
    val_set: &[Sample],
    model: &ModelConfig,
    config: &TrainConfig,
    vocab_size: usize,
) -> Result<TrainOutcome<F>> {
    model.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("train", "training split is empty"));
    }
    let mut params: Params<F> = init_params(model, vocab_size, config.seed);
    let mut adam = Adam::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed);
    mask_rng.set_stream(2);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::new();
    let mut best: Option<(f64, u64, Params<F>)> = None;
    let mut bad_evals = 0usize;
    let mut stopped_early = false;
    let mut step = 0u64;

    let evaluate = |params: &Params<F>, step: u64| -> Result<Option<f64>> {
        if val_set.is_empty() {
            return Ok(None);
        }
        let loss = mean_loss(params, val_set)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss is not finite at step {step}")));
        }
        log::info!("step {step}: validation loss {loss:.5}");
        Ok(Some(loss))
    };

    let initial = evaluate(&params, 0)?;
    if let Some(v) = initial {
        best = Some((v, 0, params.clone()));
    }
    let mut pending_val = initial;

    while step < config.total_steps {
        let mut batch_idx = Vec::with_capacity(config.batch_size);
        while batch_idx.len() < config.batch_size.min(train_set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch_idx.push(order[cursor]);
            cursor += 1;
        }
        let seqs: Vec<FeatureSequence> = batch_idx.iter().map(|&i| train_set[i].sequence.clone()).collect();
        let labels: Vec<LabelRow> = batch_idx.iter().map(|&i| train_set[i].labels).collect();
        let masks: Option<Vec<DropoutMasks<F>>> = (model.dropout_prob > 0.0).then(|| {
            (0..seqs.len())
                .map(|_| DropoutMasks::sample(&params, model.dropout_prob, &mut mask_rng))
                .collect()
        });
        // The summed objective divided by the batch size, penalty included.
        let scale = 1.0 / seqs.len() as f64;
        let grad = backward(
            &params,
            &seqs,
            &labels,
            masks.as_deref(),
            BackwardOptions {
                loss_scale: F::of(scale),
                l1_strength: F::of(model.l1_strength * scale),
            },
        )
        .map_err(|e| diverged(step, e))?;
        let train_loss = grad.data_loss / seqs.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training diverged at step {step}: loss {train_loss}")));
        }
        curve.push(CurvePoint {
            step,
            train_loss: Some(train_loss),
            val_loss: pending_val.take(),
        });
        adam_step(&mut params, &grad.grads.params, &mut adam, config.lr(step)).map_err(|e| diverged(step, e))?;
        if !params.is_finite() {
            return Err(Error::Numeric(format!("training diverged at step {step}: non-finite weights")));
        }
        step += 1;

        if step % config.eval_every == 0 || step == config.total_steps {
            let val = evaluate(&params, step)?;
            if let Some(v) = val {
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, step, params.clone()));
                    bad_evals = 0;
                } else {
                    bad_evals += 1;
                }
            }
            pending_val = val;
            if bad_evals >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    if pending_val.is_some() {
        curve.push(CurvePoint {
            step,
            train_loss: None,
            val_loss: pending_val,
        });
    }

    let (params, best_step, best_val_loss) = match best {
        Some((v, s, p)) => (p, s, Some(v)),
        None => (params, step, None),
    };
    Ok(TrainOutcome {
        params,
        best_step,
        best_val_loss,
        steps_run: step,
        stopped_early,
        curve,
    })
}

fn diverged(step: u64, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("training diverged at step {step}: {msg}")),
        other => other,
    }
}

/// CSV with header `step,train_loss,val_loss`; missing values are empty.
pub fn write_loss_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("step,train_loss,val_loss\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.step, fmt(p.train_loss), fmt(p.val_loss)));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
