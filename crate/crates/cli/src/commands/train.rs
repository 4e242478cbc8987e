//! `train`: systematic split, patch extraction, optimization, run directory.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use horizon_core::arch::{save_weights, ArchId, ModelSpec};
use horizon_core::objectives::LossConfig;
use horizon_core::trainer::{default_config, extract_patches, train, Patch, TrainConfig};
use horizon_core::volume::{
    extract_labeled_slices, horizon_to_mask, load_horizon, load_volume, make_split, Direction,
};
use horizon_core::{HorizonError, Result};

use super::{ensure_dir, require_file, write_text};

/// Flag-level overrides on top of each architecture's defaults.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub dice_only: bool,
    pub target_valid_iou: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(e) = self.max_epochs {
            cfg.max_epochs = e;
        }
        if let Some(p) = self.patience {
            cfg.patience = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.dice_only {
            cfg.loss = LossConfig::dice_only();
        }
        cfg.target_valid_iou = self.target_valid_iou;
        cfg
    }
}

pub fn snapshot_text(
    cfg: &TrainConfig,
    direction: Direction,
    spacing: usize,
    band_px: usize,
    volume: &Path,
    horizon: &Path,
) -> String {
    format!(
        "arch={}\ndirection={}\nspacing={}\nlearning_rate={}\nbatch_size={}\nmax_epochs={}\n\
         patience={}\nl2_factor={}\nloss_alpha={}\nloss_beta={}\nband_px={}\nseed={}\n\
         volume={}\nhorizon={}\n",
        cfg.arch,
        direction,
        spacing,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.max_epochs,
        cfg.patience,
        cfg.l2_factor,
        cfg.loss.alpha,
        cfg.loss.beta,
        band_px,
        cfg.seed,
        volume.display(),
        horizon.display()
    )
}

/// Loads the survey, builds the split and patch sets for one scenario.
pub fn build_patches(
    volume_path: &Path,
    horizon_path: &Path,
    direction: Direction,
    spacing: usize,
    band_px: usize,
    window: usize,
    seed: u64,
) -> Result<(Vec<Patch>, Vec<Patch>)> {
    require_file(volume_path, "volume")?;
    require_file(horizon_path, "horizon")?;
    let volume = load_volume(volume_path)?;
    let horizon = load_horizon(horizon_path, volume.n_il, volume.n_xl)?;
    let mask = horizon_to_mask(&horizon, volume.dims(), volume.dt_ms, band_px)?;
    let plan = make_split(volume.line_count(direction), direction, spacing)?;
    let (train_slices, valid_slices) = extract_labeled_slices(&volume, &mask, &plan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_patches = extract_patches(&train_slices, window, &mut rng, true);
    let valid_patches = extract_patches(&valid_slices, window, &mut rng, false);
    if train_patches.is_empty() {
        return Err(HorizonError::Argument(
            "no training patches were extracted; is the horizon inside the volume?".into(),
        ));
    }
    Ok((train_patches, valid_patches))
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    volume_path: &Path,
    horizon_path: &Path,
    arch: &str,
    direction: &str,
    spacing: usize,
    band_px: usize,
    overrides: &TrainOverrides,
    out_dir: &Path,
) -> Result<()> {
    let arch = ArchId::parse(arch)?;
    let direction = Direction::parse(direction)?;
    let cfg = overrides.apply(default_config(arch));
    let spec = ModelSpec::for_arch(arch);

    let (train_patches, valid_patches) = build_patches(
        volume_path,
        horizon_path,
        direction,
        spacing,
        band_px,
        spec.input.0,
        cfg.seed,
    )?;
    println!(
        "train: {arch} on {} {direction} lines (spacing {spacing}), {} train / {} valid patches",
        train_patches.len(),
        train_patches.len(),
        valid_patches.len()
    );

    ensure_dir(out_dir)?;
    write_text(
        &out_dir.join("config.snapshot"),
        &snapshot_text(&cfg, direction, spacing, band_px, volume_path, horizon_path),
    )?;

    let result = train(&cfg, &spec, &train_patches, &valid_patches)?;
    result.history.save_csv(&out_dir.join("history.csv"))?;
    save_weights(&result.best, &out_dir.join("weights.best"))?;
    save_weights(&result.last, &out_dir.join("weights.final"))?;

    let best = result.history.best().expect("at least one epoch");
    println!(
        "train: best epoch {} of {} — valid loss {:.5}, valid IoU {:.4}, valid acc {:.4}",
        best.epoch,
        result.history.epochs.len(),
        best.valid_loss,
        best.valid_iou,
        best.valid_acc
    );
    Ok(())
}
