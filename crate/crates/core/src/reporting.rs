//! Aggregation of run directories into summary tables and exportable map
//! grids.
//!
//! A run directory holds `config.snapshot` (key=value: arch, direction,
//! spacing), `history.csv`, and — for merged pseudo-runs — `report.csv` from
//! the fused evaluation. Per-direction rows carry best-epoch pixel metrics;
//! a merged row (present only when both directions completed) averages them
//! and attaches the fused geometry.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HorizonError, Result};
use crate::geometry::EvalReport;
use crate::trainer::History;
use crate::volume::HorizonGrid;

pub const SUMMARY_SCHEMA: &str =
    "arch,spacing,scope,train_acc,valid_acc,train_iou,valid_iou,train_loss,valid_loss,mae_ms,mse_ms2,area_pct";

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub arch: String,
    pub spacing: usize,
    /// `inline`, `crossline`, or `merged`.
    pub scope: String,
    pub train_acc: Option<f64>,
    pub valid_acc: Option<f64>,
    pub train_iou: Option<f64>,
    pub valid_iou: Option<f64>,
    pub train_loss: Option<f64>,
    pub valid_loss: Option<f64>,
    pub mae_ms: Option<f64>,
    pub mse_ms2: Option<f64>,
    pub area_pct: Option<f64>,
}

impl SummaryRow {
    fn empty(arch: String, spacing: usize, scope: String) -> Self {
        SummaryRow {
            arch,
            spacing,
            scope,
            train_acc: None,
            valid_acc: None,
            train_iou: None,
            valid_iou: None,
            train_loss: None,
            valid_loss: None,
            mae_ms: None,
            mse_ms2: None,
            area_pct: None,
        }
    }
}

fn parse_snapshot(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HorizonError::io(path.display().to_string(), e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

/// Builds summary rows from run directories. Directories without a usable
/// snapshot are skipped; a direction run without history still yields a row
/// of absent markers. Output order is (arch, spacing, scope), independent of
/// the input order.
pub fn aggregate(run_dirs: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    // (arch, spacing) -> scope -> row; merged geometry collected separately.
    let mut direction_rows: BTreeMap<(String, usize), BTreeMap<String, SummaryRow>> =
        BTreeMap::new();
    let mut merged_reports: BTreeMap<(String, usize), EvalReport> = BTreeMap::new();

    for dir in run_dirs {
        let snapshot = dir.join("config.snapshot");
        if !snapshot.exists() {
            continue;
        }
        let kv = parse_snapshot(&snapshot)?;
        let (Some(arch), Some(direction), Some(spacing)) =
            (kv.get("arch"), kv.get("direction"), kv.get("spacing"))
        else {
            continue;
        };
        let Ok(spacing) = spacing.parse::<usize>() else {
            continue;
        };
        let key = (arch.clone(), spacing);

        if direction == "merged" {
            let report_path = dir.join("report.csv");
            if report_path.exists() {
                merged_reports.insert(key, EvalReport::load_csv(&report_path)?);
            }
            continue;
        }

        let mut row = SummaryRow::empty(arch.clone(), spacing, direction.clone());
        let history_path = dir.join("history.csv");
        if history_path.exists() {
            let history = History::load_csv(&history_path)?;
            if let Some(best) = history.best() {
                row.train_acc = Some(best.train_acc);
                row.valid_acc = Some(best.valid_acc);
                row.train_iou = Some(best.train_iou);
                row.valid_iou = Some(best.valid_iou);
                row.train_loss = Some(best.train_loss);
                row.valid_loss = Some(best.valid_loss);
            }
        }
        direction_rows.entry(key).or_default().insert(direction.clone(), row);
    }

    let mut rows = Vec::new();
    for ((arch, spacing), by_dir) in &direction_rows {
        for row in by_dir.values() {
            rows.push(row.clone());
        }
        let (Some(a), Some(b)) = (by_dir.get("inline"), by_dir.get("crossline")) else {
            continue;
        };
        let mean = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => Some((x + y) / 2.0),
            _ => None,
        };
        let mut merged = SummaryRow::empty(arch.clone(), *spacing, "merged".to_string());
        merged.train_acc = mean(a.train_acc, b.train_acc);
        merged.valid_acc = mean(a.valid_acc, b.valid_acc);
        merged.train_iou = mean(a.train_iou, b.train_iou);
        merged.valid_iou = mean(a.valid_iou, b.valid_iou);
        merged.train_loss = mean(a.train_loss, b.train_loss);
        merged.valid_loss = mean(a.valid_loss, b.valid_loss);
        if let Some(report) = merged_reports.get(&(arch.clone(), *spacing)) {
            merged.mae_ms = Some(report.mae_ms);
            merged.mse_ms2 = Some(report.mse_ms2);
            merged.area_pct = Some(report.coverage_pct);
        }
        rows.push(merged);
    }
    rows.sort_by(|x, y| {
        (&x.arch, x.spacing, &x.scope).cmp(&(&y.arch, y.spacing, &y.scope))
    });
    Ok(rows)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn save_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = format!("# horizon-forge summary v1\n{SUMMARY_SCHEMA}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.arch,
            r.spacing,
            r.scope,
            cell(r.train_acc),
            cell(r.valid_acc),
            cell(r.train_iou),
            cell(r.valid_iou),
            cell(r.train_loss),
            cell(r.valid_loss),
            cell(r.mae_ms),
            cell(r.mse_ms2),
            cell(r.area_pct),
        );
    }
    std::fs::write(path, out).map_err(|e| HorizonError::io(path.display().to_string(), e))
}

/// Binary greyscale image (PGM P5): defined travel times normalized to
/// 1..=255, missing columns as 0.
pub fn surface_to_pgm(grid: &HorizonGrid) -> Vec<u8> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for (_, _, v) in grid.iter_defined() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = (hi - lo).max(f32::MIN_POSITIVE);
    let mut out = format!("P5\n{} {}\n255\n", grid.n_xl, grid.n_il).into_bytes();
    for il in 0..grid.n_il {
        for xl in 0..grid.n_xl {
            out.push(match grid.get(il, xl) {
                Some(v) if hi > lo => 1 + ((v - lo) / span * 254.0).round() as u8,
                Some(_) => 128,
                None => 0,
            });
        }
    }
    out
}

/// Writes one surface CSV and one greyscale PGM per named grid. All grids
/// must share extents.
pub fn export_depth_maps(grids: &[(String, &HorizonGrid)], out_dir: &Path) -> Result<()> {
    if let Some(((_, first), rest)) = grids.split_first() {
        for (name, g) in rest {
            if g.n_il != first.n_il || g.n_xl != first.n_xl {
                return Err(HorizonError::Shape(format!(
                    "depth map '{name}' extent {}x{} differs from {}x{}",
                    g.n_il, g.n_xl, first.n_il, first.n_xl
                )));
            }
        }
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HorizonError::io(out_dir.display().to_string(), e))?;
    for (name, grid) in grids {
        crate::volume::save_surface(grid, &out_dir.join(format!("{name}.csv")))?;
        let pgm = surface_to_pgm(grid);
        let path = out_dir.join(format!("{name}.pgm"));
        std::fs::write(&path, pgm).map_err(|e| HorizonError::io(path.display().to_string(), e))?;
    }
    Ok(())
}
