//! Mini-batch Adam training with reduce-on-plateau and early stopping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{argmax, Example, ModelState};
use crate::dataset::shuffle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub lr_floor: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` disables early stopping.
    pub early_stopping_patience: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 1e-3,
            lr_floor: 1.6e-6,
            plateau_factor: 0.5,
            plateau_patience: 5,
            batch_size: 50,
            max_epochs: 50,
            early_stopping_patience: Some(3),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_floor < self.lr_initial && self.lr_floor >= 0.0) {
            return Err(Error::domain("need 0 <= lr_floor < lr_initial"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be >= 1"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::domain("plateau factor must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule. A validation loss counts as an
/// improvement only if it is strictly below the best seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    floor: f64,
    factor: f64,
    patience: usize,
    best: f64,
    wait: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        PlateauSchedule {
            lr: cfg.lr_initial,
            floor: cfg.lr_floor,
            factor: cfg.plateau_factor,
            patience: cfg.plateau_patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns the rate for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// One Adam update with bias correction.
pub fn adam_step(state: &mut ModelState, grad: &[f64], lr: f64, cfg: &AdamConfig) {
    let m = &mut state.moments;
    m.step += 1;
    let t = m.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), mi), vi) in state
        .params
        .iter_mut()
        .zip(grad)
        .zip(m.m.iter_mut())
        .zip(m.v.iter_mut())
    {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:e},{},{},{},{}\n",
                e.epoch, e.lr, e.train_loss, e.val_loss, e.train_acc, e.val_acc
            ));
        }
        out
    }
}

/// Fraction of examples whose arg-max prediction matches the label.
pub fn accuracy(state: &ModelState, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let probs = state.forward(data)?;
    let correct = probs.iter().zip(data).filter(|(p, ex)| argmax(p) == ex.label).count();
    Ok(correct as f64 / data.len() as f64)
}

/// Trains `state` and returns the parameters from the epoch with the lowest
/// validation loss. Training batches are drawn in a seeded shuffled order
/// each epoch; the train loss/accuracy reported per epoch are running values
/// over that epoch's batches.
pub fn train(
    mut state: ModelState,
    train_data: &[Example],
    val_data: &[Example],
    cfg: &TrainConfig,
) -> Result<(ModelState, History)> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::domain("training and validation sets must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut schedule = PlateauSchedule::new(cfg);
    let mut history = History::default();
    let mut best_params = state.params.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = schedule.lr;
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_data[i].clone()).collect();
            let (loss, grad, hits) = state.gradient_step(&batch)?;
            correct += hits;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut state, &grad, lr, &cfg.adam);
        }
        if state.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch });
        }

        let val = state.evaluate(val_data)?;
        if !val.loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let val_correct = val
            .probabilities
            .iter()
            .zip(val_data)
            .filter(|(p, ex)| argmax(p) == ex.label)
            .count();
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_data.len() as f64,
            val_loss: val.loss,
            train_acc: correct as f64 / train_data.len() as f64,
            val_acc: val_correct as f64 / val_data.len() as f64,
        });
        state.epoch = epoch + 1;

        if val.loss < best_val {
            best_val = val.loss;
            best_params.clone_from(&state.params);
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        schedule.observe(val.loss);
        if cfg.early_stopping_patience.is_some_and(|p| since_best >= p) {
            history.stopped_early = true;
            break;
        }
    }

    state.params = best_params;
    state.best_val_loss = best_val;
    Ok((state, history))
}
