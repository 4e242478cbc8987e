//! Adam training with validation-loss early stopping, and tiled inference.

mod adam;
mod data;
mod predict;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPS};
pub use data::{extract_patches, reflect_pad, stack_batch, standardize, tile_starts, Patch};
pub use predict::{predict_slice, predict_volume};

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arch::{build_model, forward_eval, forward_train, ArchId, ModelSpec, Weights, BN_MOMENTUM};
use crate::error::{HorizonError, Result};
use crate::objectives::{
    binarize, composite_loss, composite_loss_var, iou, pixel_accuracy, LossConfig,
    BINARIZE_THRESHOLD,
};
use crate::tensor::Graph;

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub arch: ArchId,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// L2 penalty on convolution kernels; nonzero only for the compressed
    /// variant by default.
    pub l2_factor: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Optional additional stop: end training once the epoch's validation
    /// IoU reaches this value (the stopping epoch's weights are returned).
    pub target_valid_iou: Option<f64>,
}

/// Tuned learning-rate / batch-size pairs per architecture; the fusion
/// variants inherit the attention network's settings.
pub fn default_config(arch: ArchId) -> TrainConfig {
    let (learning_rate, batch_size, l2_factor) = match arch {
        ArchId::Unet => (1e-4, 1, 0.0),
        ArchId::Unetpp => (5e-3, 1, 0.0),
        ArchId::UnetCompressed => (5e-4, 5, 1e-4),
        ArchId::AttnUnet | ArchId::CfaSUnet | ArchId::CfaUnet => (5e-4, 1, 0.0),
    };
    TrainConfig {
        arch,
        learning_rate,
        batch_size,
        max_epochs: 500,
        patience: 30,
        l2_factor,
        loss: LossConfig::default(),
        seed: 0,
        target_valid_iou: None,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(HorizonError::Argument("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(HorizonError::Argument("batch_size must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(HorizonError::Argument("patience must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(HorizonError::Argument("max_epochs must be >= 1".into()));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub train_iou: f64,
    pub valid_iou: f64,
    pub train_acc: f64,
    pub valid_acc: f64,
}

#[derive(Clone, Debug, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(
            "epoch,train_loss,valid_loss,train_iou,valid_iou,train_acc,valid_acc\n",
        );
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.valid_loss, r.train_iou, r.valid_iou, r.train_acc,
                r.valid_acc
            ));
        }
        std::fs::write(path, out).map_err(|e| HorizonError::io(path.display().to_string(), e))
    }

    pub fn load_csv(path: &Path) -> Result<History> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HorizonError::io(path.display().to_string(), e))?;
        let mut epochs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || {
                HorizonError::corrupt(
                    path.display().to_string(),
                    format!("line {}: expected 7 metric fields", lineno + 1),
                )
            };
            if f.len() != 7 {
                return Err(bad());
            }
            epochs.push(EpochRecord {
                epoch: f[0].trim().parse().map_err(|_| bad())?,
                train_loss: f[1].trim().parse().map_err(|_| bad())?,
                valid_loss: f[2].trim().parse().map_err(|_| bad())?,
                train_iou: f[3].trim().parse().map_err(|_| bad())?,
                valid_iou: f[4].trim().parse().map_err(|_| bad())?,
                train_acc: f[5].trim().parse().map_err(|_| bad())?,
                valid_acc: f[6].trim().parse().map_err(|_| bad())?,
            });
        }
        let best_epoch = epochs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.valid_loss.total_cmp(&b.1.valid_loss))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok(History { epochs, best_epoch })
    }
}

/// Stops after `patience` consecutive epochs without a strict improvement of
/// the monitored value.
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    pub best_epoch: usize,
    since_improvement: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Returns (improved, stop).
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            (true, false)
        } else {
            self.since_improvement += 1;
            (false, self.since_improvement >= self.patience)
        }
    }
}

struct EpochMetrics {
    loss: f64,
    iou: f64,
    acc: f64,
}

fn per_item_metrics(
    pred: &crate::tensor::Tensor4<f32>,
    target: &crate::tensor::Tensor4<f32>,
) -> (f64, f64) {
    let shape = pred.shape();
    let plane = shape.h * shape.w;
    let mut iou_sum = 0.0;
    let mut acc_sum = 0.0;
    for n in 0..shape.n {
        let p = &pred.data()[n * plane..(n + 1) * plane];
        let t = &target.data()[n * plane..(n + 1) * plane];
        let pb: Vec<bool> = p.iter().map(|&v| v as f64 > BINARIZE_THRESHOLD).collect();
        let tb: Vec<bool> = t.iter().map(|&v| v > 0.5).collect();
        iou_sum += iou(&pb, &tb);
        acc_sum += pixel_accuracy(&pb, &tb);
    }
    (iou_sum / shape.n as f64, acc_sum / shape.n as f64)
}

fn validate_epoch(weights: &Weights, patches: &[Patch], loss_cfg: &LossConfig) -> EpochMetrics {
    let results: Vec<(f64, f64, f64)> = patches
        .par_iter()
        .map(|p| {
            let mut g: Graph<f32> = Graph::new();
            let iv = g.leaf(p.image.clone(), false);
            let out = forward_eval(weights, &mut g, iv).expect("eval forward");
            let pred = g.value(out);
            let loss = composite_loss(pred, &p.label, loss_cfg).expect("loss");
            let pb = binarize(pred, BINARIZE_THRESHOLD);
            let tb: Vec<bool> = p.label.data().iter().map(|&v| v > 0.5).collect();
            (loss, iou(&pb, &tb), pixel_accuracy(&pb, &tb))
        })
        .collect();
    let n = results.len().max(1) as f64;
    EpochMetrics {
        loss: results.iter().map(|r| r.0).sum::<f64>() / n,
        iou: results.iter().map(|r| r.1).sum::<f64>() / n,
        acc: results.iter().map(|r| r.2).sum::<f64>() / n,
    }
}

/// Training outcome: restore-best weights, the last epoch's weights, and
/// the per-epoch metric history.
pub struct TrainResult {
    pub best: Weights,
    pub last: Weights,
    pub history: History,
}

/// Trains from a fresh deterministic initialization and returns the weights
/// of the best validation epoch (or of the target-stop epoch) plus the
/// per-epoch history.
pub fn train(
    config: &TrainConfig,
    spec: &ModelSpec,
    train_patches: &[Patch],
    valid_patches: &[Patch],
) -> Result<TrainResult> {
    if spec.arch != config.arch {
        return Err(HorizonError::Argument(format!(
            "config is for {} but the model spec is for {}",
            config.arch, spec.arch
        )));
    }
    let weights = build_model(spec, config.seed)?;
    train_from(config, weights, train_patches, valid_patches)
}

/// Training loop over caller-supplied initial weights (warm starts).
pub fn train_from(
    config: &TrainConfig,
    initial: Weights,
    train_patches: &[Patch],
    valid_patches: &[Patch],
) -> Result<TrainResult> {
    config.validate()?;
    if train_patches.is_empty() || valid_patches.is_empty() {
        return Err(HorizonError::Argument(
            "training and validation sets must both be non-empty".into(),
        ));
    }

    let mut weights = initial;
    let mut adam = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut history = History::default();
    let mut best_weights = weights.clone();

    for epoch in 0..config.max_epochs {
        // Deterministic shuffle.
        let mut order: Vec<usize> = (0..train_patches.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }

        let mut loss_sum = 0.0;
        let mut iou_sum = 0.0;
        let mut acc_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let items: Vec<&Patch> = chunk.iter().map(|&i| &train_patches[i]).collect();
            let (image, label) = stack_batch(&items);

            let mut g: Graph<f32> = Graph::new();
            let iv = g.leaf(image, false);
            let pass = forward_train(&weights, &mut g, iv, &mut rng)?;
            let loss = composite_loss_var(&mut g, pass.output, &label, &config.loss)?;
            let loss_val = g.value(loss).scalar_value() as f64;
            if !loss_val.is_finite() {
                return Err(HorizonError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            let (biou, bacc) = per_item_metrics(g.value(pass.output), &label);
            g.backward(loss)?;

            let mut grads: HashMap<String, Vec<f32>> = HashMap::with_capacity(pass.params.len());
            for (path, var) in &pass.params {
                let grad = g.grad(*var).ok_or_else(|| {
                    HorizonError::Invariant(format!("no gradient for '{path}' after backward"))
                })?;
                grads.insert(path.clone(), grad.data().to_vec());
            }
            if config.l2_factor > 0.0 {
                for (path, grad) in grads.iter_mut() {
                    if path.ends_with(".kernel") {
                        let w = weights.get(path)?;
                        for (gv, &wv) in grad.iter_mut().zip(&w.data) {
                            *gv += (2.0 * config.l2_factor) as f32 * wv;
                        }
                    }
                }
            }
            // Running statistics before the weight update, matching the
            // forward pass that produced them.
            for (prefix, node) in &pass.bn_nodes {
                let (mean, var) = g
                    .bn_batch_stats(*node)
                    .ok_or_else(|| HorizonError::Invariant("missing batch stats".into()))?;
                let (mean, var) = (mean.to_vec(), var.to_vec());
                weights.update_running_stats(prefix, &mean, &var, BN_MOMENTUM)?;
            }
            adam_step(&mut weights, &grads, &mut adam, config.learning_rate)?;

            loss_sum += loss_val;
            iou_sum += biou;
            acc_sum += bacc;
            batches += 1;
        }

        let vm = validate_epoch(&weights, valid_patches, &config.loss);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            valid_loss: vm.loss,
            train_iou: iou_sum / batches as f64,
            valid_iou: vm.iou,
            train_acc: acc_sum / batches as f64,
            valid_acc: vm.acc,
        };
        history.epochs.push(record);

        let (improved, stop) = stopper.observe(epoch, vm.loss);
        if improved {
            best_weights = weights.clone();
            history.best_epoch = epoch;
        }
        if let Some(target) = config.target_valid_iou {
            if vm.iou >= target {
                // The stopping epoch's weights satisfy the target.
                best_weights = weights.clone();
                history.best_epoch = epoch;
                break;
            }
        }
        if stop {
            break;
        }
    }

    Ok(TrainResult {
        best: best_weights,
        last: weights,
        history,
    })
}

#[cfg(test)]
mod tests;
