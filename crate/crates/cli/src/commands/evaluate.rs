//! `evaluate`: geometric comparison of a prediction against the truth
//! horizon. Accepts a filtered point-cloud CSV or a surface-grid CSV.

use std::path::Path;

use horizon_core::geometry::{diff_map, evaluate, surface_from_cloud};
use horizon_core::volume::{load_horizon, load_point_cloud, load_surface, save_surface, HorizonGrid};
use horizon_core::{HorizonError, Result};

use super::{ensure_dir, require_file};

/// A cloud file carries an `il,xl,t_index,prob` column header after its
/// metadata line; a surface file goes straight to grid rows.
fn load_prediction(path: &Path) -> Result<HorizonGrid> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HorizonError::io(path.display().to_string(), e))?;
    let is_cloud = text
        .lines()
        .nth(1)
        .map(|l| l.trim() == "il,xl,t_index,prob")
        .unwrap_or(false);
    if is_cloud {
        let cloud = load_point_cloud(path)?;
        Ok(surface_from_cloud(&cloud, cloud.dt_ms))
    } else {
        load_surface(path)
    }
}

pub fn run(pred_path: &Path, truth_path: &Path, out_dir: &Path) -> Result<()> {
    require_file(pred_path, "prediction")?;
    require_file(truth_path, "truth horizon")?;
    let pred = load_prediction(pred_path)?;
    let truth = load_horizon(truth_path, pred.n_il, pred.n_xl)?;
    let report = evaluate(&pred, &truth)?;
    ensure_dir(out_dir)?;
    report.save_csv(&out_dir.join("report.csv"))?;
    save_surface(&diff_map(&pred, &truth)?, &out_dir.join("diff.csv"))?;
    println!("evaluate: {}", report.summary_line());
    Ok(())
}
