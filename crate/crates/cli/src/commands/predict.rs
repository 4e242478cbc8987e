//! `predict`: full-volume inference along one section direction.

use std::path::Path;

use horizon_core::arch::load_weights;
use horizon_core::trainer::predict_volume;
use horizon_core::volume::{load_volume, save_volume, Direction};
use horizon_core::Result;

use super::require_file;

pub fn run(weights_path: &Path, volume_path: &Path, direction: &str, out: &Path) -> Result<()> {
    require_file(weights_path, "weights")?;
    require_file(volume_path, "volume")?;
    let direction = Direction::parse(direction)?;
    let weights = load_weights(weights_path)?;
    let volume = load_volume(volume_path)?;
    let prob = predict_volume(&weights, &volume, direction)?;
    save_volume(prob.as_volume(), out)?;
    println!(
        "predict: {} sections along {direction} with {} -> {}",
        volume.line_count(direction),
        weights.spec.arch,
        out.display()
    );
    Ok(())
}
