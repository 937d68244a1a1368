//! SGD with momentum, step learning-rate schedules and the training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{augment, shuffled_indices, LabeledBatch};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::{argmax_rows, softmax_cross_entropy, Mode};
use crate::params::{Gradients, Param, ParamKind};

/// A coefficient is shared by every entry of a layer's kernels, so its gradient sums
/// thousands of contributions; `d` also enters through `|k|^2`, up to 79 on a 3x3 grid.
/// At the base learning rate a single step can diffuse the kernels flat.
pub const DEFAULT_RDA_LR_SCALE: f64 = 1e-3;

pub const DESK_SCALE_LR: f64 = 0.003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Epochs at which the learning rate drops by 10x.
    pub decay_epochs: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
    /// Learning-rate multiplier for the RDA coefficients.
    pub rda_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 256,
            lr0: 0.1,
            decay_epochs: Vec::new(),
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            augment: true,
            rda_lr_scale: DEFAULT_RDA_LR_SCALE,
        }
    }
}

impl TrainConfig {
    /// 120 epochs, decays at 40, 80 and 100.
    pub fn alexnet() -> Self {
        Self {
            epochs: 120,
            decay_epochs: vec![40, 80, 100],
            ..Self::default()
        }
    }

    /// 350 epochs, decays at 150 and 300.
    pub fn resnet() -> Self {
        Self {
            epochs: 350,
            decay_epochs: vec![150, 300],
            ..Self::default()
        }
    }

    /// 20 epochs at a constant 0.003. The classifier sees 8x8 max-pooled ReLU features,
    /// all non-negative and of order 4, so its loss curvature bounds stable SGD with
    /// momentum 0.9 to learning rates near 0.01; 0.1 diverges on small subsets.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 20,
            lr0: DESK_SCALE_LR,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(format!(
                "decay epochs {:?} must be strictly increasing",
                self.decay_epochs
            )));
        }
        if self.decay_epochs.last().is_some_and(|&d| d >= self.epochs) {
            return Err(Error::InvalidArgument(format!(
                "decay epochs {:?} must be below the epoch count {}",
                self.decay_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// `lr0 * 10^-(number of decay epochs already reached)`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let drops = config.decay_epochs.iter().filter(|&&d| epoch >= d).count();
    config.lr0 * 10f64.powi(-(drops as i32))
}

/// Momentum buffers keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    velocity: BTreeMap<String, Vec<f64>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(Vec::as_slice)
    }
}

/// `v <- momentum v + g + wd w; w <- w - lr v`. Weight decay only touches convolution and
/// linear weights and biases. Diffusion coefficients are clamped at zero afterwards.
/// Parameters without a gradient are left alone.
pub fn sgd_step(
    params: Vec<&mut Param>,
    grads: &Gradients,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    sgd_step_scaled(params, grads, state, lr, momentum, weight_decay, 1.0)
}

/// [`sgd_step`] with the RDA coefficients stepping at `lr * rda_lr_scale`.
pub fn sgd_step_scaled(
    params: Vec<&mut Param>,
    grads: &Gradients,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    rda_lr_scale: f64,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}[{i}]")));
        }
    }
    for p in params {
        let Some(g) = grads.get(&p.name) else { continue };
        if g.len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient of {} has {} entries, parameter has {}",
                p.name,
                g.len(),
                p.len()
            )));
        }
        let wd = if p.kind.takes_weight_decay() { weight_decay } else { 0.0 };
        let lr = if p.kind == ParamKind::RdaCoefficients {
            lr * rda_lr_scale
        } else {
            lr
        };
        let v = state
            .velocity
            .entry(p.name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        for ((w, v), &g) in p.value.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v + g + wd * *w;
            *w -= lr * *v;
        }
        if p.kind == ParamKind::RdaCoefficients {
            p.value[0] = p.value[0].max(0.0);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,test_acc\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.test_acc).expect("string write");
        }
        s
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_acc).reduce(f64::max)
    }
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub history_csv: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
}

/// Fraction of correctly classified images, batch-norm in eval mode.
pub fn evaluate(model: &Model, data: &LabeledBatch, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.select(chunk);
        let logits = model.predict(&batch.images, Mode::Eval)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// One optimizer step on a minibatch; returns the minibatch loss.
pub fn train_step(
    model: &mut Model,
    batch: &LabeledBatch,
    state: &mut SgdState,
    lr: f64,
    config: &TrainConfig,
) -> Result<f64> {
    let (logits, tape) = model.forward(&batch.images, Mode::Train)?;
    let loss = softmax_cross_entropy(&logits, &batch.labels)?;
    let grads = model.backward(&tape, &loss.grad)?;
    model.commit_running_stats(&tape);
    sgd_step_scaled(
        model.params_mut(),
        &grads,
        state,
        lr,
        config.momentum,
        config.weight_decay,
        config.rda_lr_scale,
    )?;
    Ok(loss.loss)
}

/// Minibatch SGD for `config.epochs` epochs. Order, augmentation and initialization are all
/// derived from seeds, so equal inputs give equal histories. The checkpoint with the best
/// test accuracy is kept when a path is given.
pub fn train(
    model: &mut Model,
    train_set: &LabeledBatch,
    test_set: &LabeledBatch,
    config: &TrainConfig,
    outputs: &TrainOutputs,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut state = SgdState::new();
    let mut history = History::default();
    let mut best = f64::NEG_INFINITY;
    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let order = shuffled_indices(train_set.len(), config.seed, epoch as u64);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let aug_seed = config.seed ^ ((epoch as u64) << 32 | b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let batch = augment(&train_set.select(chunk), aug_seed, config.augment);
            loss_sum += train_step(model, &batch, &mut state, lr, config)? * chunk.len() as f64;
        }
        let test_acc = if test_set.is_empty() {
            f64::NAN
        } else {
            evaluate(model, test_set, config.batch_size)?
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            test_acc,
        };
        on_epoch(&record);
        history.records.push(record);
        if let Some(path) = &outputs.best_checkpoint {
            if test_acc > best || (best.is_infinite() && test_acc.is_nan()) {
                best = test_acc;
                save_checkpoint(model, path)?;
            }
        }
        if let Some(path) = &outputs.history_csv {
            std::fs::write(path, history.to_csv())?;
        }
    }
    Ok(history)
}

/// Trailing moving average over `window` epochs; one value per complete window.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    values
        .windows(window.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}

pub fn is_monotone_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}
