//! Geometric evaluation of reconstructed horizon surfaces: point-cloud to
//! surface reduction, MAE/MSE over mutually interpreted columns, coverage,
//! and signed difference maps.

use crate::error::{HorizonError, Result};
use crate::postprocess::PointCloud;
use crate::volume::HorizonGrid;

/// How a column's points collapse to one travel time.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum ColumnReduce {
    /// Probability-weighted mean of the time indices.
    #[default]
    WeightedMean,
    /// Plain median of the time indices.
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub mae_ms: f64,
    pub mse_ms2: f64,
    pub coverage_pct: f64,
    pub n_columns_truth: usize,
    pub n_columns_pred: usize,
}

/// Collapses a filtered cloud to one travel time per (inline, crossline)
/// column; columns without points stay missing.
pub fn surface_from_cloud(cloud: &PointCloud, dt_ms: f32) -> HorizonGrid {
    surface_from_cloud_with(cloud, dt_ms, ColumnReduce::WeightedMean)
}

pub fn surface_from_cloud_with(
    cloud: &PointCloud,
    dt_ms: f32,
    reduce: ColumnReduce,
) -> HorizonGrid {
    let (n_il, n_xl, _) = cloud.dims;
    let mut grid = HorizonGrid::empty(n_il, n_xl);
    match reduce {
        ColumnReduce::WeightedMean => {
            let mut wsum = vec![0.0f64; n_il * n_xl];
            let mut wk = vec![0.0f64; n_il * n_xl];
            for p in &cloud.points {
                let idx = p.il as usize * n_xl + p.xl as usize;
                wsum[idx] += p.prob as f64;
                wk[idx] += p.prob as f64 * p.t as f64;
            }
            for il in 0..n_il {
                for xl in 0..n_xl {
                    let idx = il * n_xl + xl;
                    if wsum[idx] > 0.0 {
                        grid.set(il, xl, (dt_ms as f64 * wk[idx] / wsum[idx]) as f32);
                    }
                }
            }
        }
        ColumnReduce::Median => {
            let mut per_column: Vec<Vec<u32>> = vec![Vec::new(); n_il * n_xl];
            for p in &cloud.points {
                per_column[p.il as usize * n_xl + p.xl as usize].push(p.t);
            }
            for il in 0..n_il {
                for xl in 0..n_xl {
                    let ts = &mut per_column[il * n_xl + xl];
                    if ts.is_empty() {
                        continue;
                    }
                    ts.sort_unstable();
                    let mid = ts.len() / 2;
                    let median = if ts.len() % 2 == 1 {
                        ts[mid] as f64
                    } else {
                        (ts[mid - 1] as f64 + ts[mid] as f64) / 2.0
                    };
                    grid.set(il, xl, (dt_ms as f64 * median) as f32);
                }
            }
        }
    }
    grid
}

fn check_extents(pred: &HorizonGrid, truth: &HorizonGrid) -> Result<()> {
    if pred.n_il != truth.n_il || pred.n_xl != truth.n_xl {
        return Err(HorizonError::Shape(format!(
            "surface grids disagree: {}x{} vs {}x{}",
            pred.n_il, pred.n_xl, truth.n_il, truth.n_xl
        )));
    }
    Ok(())
}

/// MAE and MSE in ms over columns interpreted in both surfaces.
pub fn geometric_errors(pred: &HorizonGrid, truth: &HorizonGrid) -> Result<(f64, f64)> {
    check_extents(pred, truth)?;
    let mut n = 0usize;
    let mut abs_sum = 0.0f64;
    let mut sq_sum = 0.0f64;
    for (il, xl, t) in truth.iter_defined() {
        if let Some(p) = pred.get(il, xl) {
            let d = p as f64 - t as f64;
            abs_sum += d.abs();
            sq_sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(HorizonError::UndefinedMetric(
            "no columns are interpreted in both surfaces".into(),
        ));
    }
    Ok((abs_sum / n as f64, sq_sum / n as f64))
}

/// Percentage of truth columns for which the prediction supplies a depth.
pub fn coverage(pred: &HorizonGrid, truth: &HorizonGrid) -> Result<f64> {
    check_extents(pred, truth)?;
    let truth_cols = truth.defined_count();
    if truth_cols == 0 {
        return Err(HorizonError::UndefinedMetric(
            "truth surface has no interpreted columns".into(),
        ));
    }
    let both = truth
        .iter_defined()
        .filter(|&(il, xl, _)| pred.get(il, xl).is_some())
        .count();
    Ok(100.0 * both as f64 / truth_cols as f64)
}

/// Signed `pred − truth` per column, missing where either side is missing.
pub fn diff_map(pred: &HorizonGrid, truth: &HorizonGrid) -> Result<HorizonGrid> {
    check_extents(pred, truth)?;
    let mut out = HorizonGrid::empty(pred.n_il, pred.n_xl);
    for (il, xl, t) in truth.iter_defined() {
        if let Some(p) = pred.get(il, xl) {
            out.set(il, xl, p - t);
        }
    }
    Ok(out)
}

/// Full report; fails when the metrics are undefined (no common columns or
/// an empty truth surface).
pub fn evaluate(pred: &HorizonGrid, truth: &HorizonGrid) -> Result<EvalReport> {
    let (mae_ms, mse_ms2) = geometric_errors(pred, truth)?;
    let coverage_pct = coverage(pred, truth)?;
    Ok(EvalReport {
        mae_ms,
        mse_ms2,
        coverage_pct,
        n_columns_truth: truth.defined_count(),
        n_columns_pred: pred.defined_count(),
    })
}

impl EvalReport {
    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        let text = format!(
            "mae_ms,mse_ms2,coverage_pct,n_columns_truth,n_columns_pred\n{},{},{},{},{}\n",
            self.mae_ms, self.mse_ms2, self.coverage_pct, self.n_columns_truth,
            self.n_columns_pred
        );
        std::fs::write(path, text).map_err(|e| HorizonError::io(path.display().to_string(), e))
    }

    pub fn load_csv(path: &std::path::Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HorizonError::io(path.display().to_string(), e))?;
        let row = text.lines().nth(1).ok_or_else(|| {
            HorizonError::corrupt(path.display().to_string(), "missing data row")
        })?;
        let f: Vec<&str> = row.split(',').collect();
        let bad = || HorizonError::corrupt(path.display().to_string(), "expected 5 report fields");
        if f.len() != 5 {
            return Err(bad());
        }
        Ok(EvalReport {
            mae_ms: f[0].trim().parse().map_err(|_| bad())?,
            mse_ms2: f[1].trim().parse().map_err(|_| bad())?,
            coverage_pct: f[2].trim().parse().map_err(|_| bad())?,
            n_columns_truth: f[3].trim().parse().map_err(|_| bad())?,
            n_columns_pred: f[4].trim().parse().map_err(|_| bad())?,
        })
    }

    /// One-line human-readable form for logs.
    pub fn summary_line(&self) -> String {
        format!(
            "MAE {:.3} ms, MSE {:.3} ms², coverage {:.2}% ({} of {} truth columns predicted)",
            self.mae_ms,
            self.mse_ms2,
            self.coverage_pct,
            (self.coverage_pct / 100.0 * self.n_columns_truth as f64).round() as usize,
            self.n_columns_truth
        )
    }
}
