//! `matrix`: the full experimental design. Trains one model per
//! (architecture, direction, spacing) cell, filters each prediction, fuses
//! the two directions per (architecture, spacing), evaluates the fused cloud
//! against the truth, and aggregates everything into summary tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use horizon_core::arch::{save_weights, ArchId, ModelSpec};
use horizon_core::geometry::{diff_map, evaluate, surface_from_cloud, EvalReport};
use horizon_core::postprocess::{
    dbscan, extract_point_cloud, fuse_orthogonal, retain_largest_cluster, CloudSource,
    DbscanParams,
};
use horizon_core::reporting::{aggregate, export_depth_maps, save_summary};
use horizon_core::trainer::{default_config, predict_volume, train};
use horizon_core::volume::{
    load_horizon, load_point_cloud, load_volume, save_point_cloud, save_surface, save_volume,
    Direction,
};
use horizon_core::{HorizonError, Result};

use crate::kvconfig::KvConfig;

use super::train::{snapshot_text, TrainOverrides};
use super::{ensure_dir, file_checksum, require_file, write_text};

pub const ALLOWED_SPACINGS: [usize; 3] = [10, 20, 40];

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub volume: PathBuf,
    pub horizon: PathBuf,
    pub out: PathBuf,
    pub archs: Vec<ArchId>,
    pub directions: Vec<Direction>,
    pub spacings: Vec<usize>,
    pub band_px: usize,
    pub overrides: TrainOverrides,
    pub dbscan: DbscanParams,
    pub jobs: usize,
    pub resume: bool,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        require_file(path, "experiment config")?;
        let kv = KvConfig::load(path)?;
        let parse_list = |key: &str, all: Vec<String>| -> Vec<String> {
            kv.list(key).unwrap_or(all)
        };
        let archs = parse_list(
            "archs",
            ArchId::ALL.iter().map(|a| a.as_str().to_string()).collect(),
        )
        .iter()
        .map(|s| ArchId::parse(s))
        .collect::<Result<Vec<_>>>()?;
        let directions = parse_list("directions", vec!["inline".into(), "crossline".into()])
            .iter()
            .map(|s| Direction::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let spacings: Vec<usize> = parse_list("spacings", vec!["10".into(), "20".into(), "40".into()])
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| HorizonError::Argument(format!("spacings: bad value '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        for s in &spacings {
            if !ALLOWED_SPACINGS.contains(s) {
                return Err(HorizonError::Argument(format!(
                    "spacing {s} outside the experimental design {ALLOWED_SPACINGS:?}"
                )));
            }
        }
        let overrides = TrainOverrides {
            learning_rate: kv.get("lr")?,
            batch_size: kv.get("batch")?,
            max_epochs: kv.get("epochs")?,
            patience: kv.get("patience")?,
            seed: kv.get("seed")?,
            dice_only: kv.raw("loss") == Some("dice"),
            target_valid_iou: kv.get("target_iou")?,
        };
        let dbscan = DbscanParams {
            epsilon: kv.get_or("eps", 6.0)?,
            min_pts: kv.get_or("minpts", 25)?,
            z_factor: kv.get_or("zfactor", 3.0)?,
            tau: kv.get_or("tau", 1e-5)?,
        };
        Ok(ExperimentConfig {
            volume: PathBuf::from(kv.require::<String>("volume")?),
            horizon: PathBuf::from(kv.require::<String>("horizon")?),
            out: PathBuf::from(kv.require::<String>("out")?),
            archs,
            directions,
            spacings,
            band_px: kv.get_or("band", 3)?,
            overrides,
            dbscan,
            jobs: kv.get_or("jobs", 1)?,
            resume: kv.get_or("resume", false)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunPlan {
    pub arch: ArchId,
    pub direction: Direction,
    pub spacing: usize,
}

/// Cartesian product of the requested axes; the run matrix.
pub fn plan_matrix(
    archs: &[ArchId],
    directions: &[Direction],
    spacings: &[usize],
) -> Vec<RunPlan> {
    let mut runs = Vec::new();
    for &arch in archs {
        for &direction in directions {
            for &spacing in spacings {
                runs.push(RunPlan {
                    arch,
                    direction,
                    spacing,
                });
            }
        }
    }
    runs
}

fn run_dir(out: &Path, plan: &RunPlan) -> PathBuf {
    out.join(format!(
        "{}_{}_s{}",
        plan.arch, plan.direction, plan.spacing
    ))
}

const DONE_MARKER: &str = "run.done";

fn is_done(dir: &Path) -> bool {
    let marker = dir.join(DONE_MARKER);
    let snapshot = dir.join("config.snapshot");
    if !marker.exists() || !snapshot.exists() {
        return false;
    }
    match (std::fs::read_to_string(&marker), file_checksum(&snapshot)) {
        (Ok(recorded), Ok(current)) => recorded.trim() == current,
        _ => false,
    }
}

/// One (arch, direction, spacing) cell: train, predict along the training
/// direction, filter, and mark the directory complete.
fn execute_run(cfg: &ExperimentConfig, plan: &RunPlan) -> Result<()> {
    let dir = run_dir(&cfg.out, plan);
    ensure_dir(&dir)?;
    let train_cfg = cfg.overrides.apply(default_config(plan.arch));
    let spec = ModelSpec::for_arch(plan.arch);
    write_text(
        &dir.join("config.snapshot"),
        &snapshot_text(
            &train_cfg,
            plan.direction,
            plan.spacing,
            cfg.band_px,
            &cfg.volume,
            &cfg.horizon,
        ),
    )?;

    let (train_patches, valid_patches) = super::train::build_patches(
        &cfg.volume,
        &cfg.horizon,
        plan.direction,
        plan.spacing,
        cfg.band_px,
        spec.input.0,
        train_cfg.seed,
    )?;
    let result = train(&train_cfg, &spec, &train_patches, &valid_patches)?;
    result.history.save_csv(&dir.join("history.csv"))?;
    save_weights(&result.best, &dir.join("weights.best"))?;
    save_weights(&result.last, &dir.join("weights.final"))?;

    let volume = load_volume(&cfg.volume)?;
    let prob = predict_volume(&result.best, &volume, plan.direction)?;
    save_volume(prob.as_volume(), &dir.join("prob.vol"))?;

    let source = match plan.direction {
        Direction::Inline => CloudSource::Inline,
        Direction::Crossline => CloudSource::Crossline,
    };
    let cloud = extract_point_cloud(&prob, cfg.dbscan.tau, source);
    let labeling = dbscan(&cloud, &cfg.dbscan);
    let (kept, _) = retain_largest_cluster(&cloud, &labeling);
    save_point_cloud(&kept, &dir.join("cloud.csv"))?;

    write_text(
        &dir.join(DONE_MARKER),
        &file_checksum(&dir.join("config.snapshot"))?,
    )?;
    Ok(())
}

struct MergedOutcome {
    report: Option<EvalReport>,
    status: String,
}

/// Fuses the two direction clouds of one (arch, spacing) cell and evaluates
/// the union against the truth.
fn merge_and_evaluate(
    cfg: &ExperimentConfig,
    arch: ArchId,
    spacing: usize,
    truth_grid: &horizon_core::volume::HorizonGrid,
) -> Result<EvalReport> {
    let inline_cloud = load_point_cloud(
        &run_dir(
            &cfg.out,
            &RunPlan {
                arch,
                direction: Direction::Inline,
                spacing,
            },
        )
        .join("cloud.csv"),
    )?;
    let crossline_cloud = load_point_cloud(
        &run_dir(
            &cfg.out,
            &RunPlan {
                arch,
                direction: Direction::Crossline,
                spacing,
            },
        )
        .join("cloud.csv"),
    )?;
    let merged = fuse_orthogonal(&inline_cloud, &crossline_cloud)?;

    let dir = cfg.out.join(format!("{arch}_merged_s{spacing}"));
    ensure_dir(&dir)?;
    write_text(
        &dir.join("config.snapshot"),
        &format!("arch={arch}\ndirection=merged\nspacing={spacing}\n"),
    )?;
    save_point_cloud(&merged, &dir.join("merged.csv"))?;

    let surface = surface_from_cloud(&merged, merged.dt_ms);
    save_surface(&surface, &dir.join("surface.csv"))?;
    let report = evaluate(&surface, truth_grid)?;
    report.save_csv(&dir.join("report.csv"))?;
    save_surface(&diff_map(&surface, truth_grid)?, &dir.join("diff.csv"))?;
    Ok(report)
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    require_file(&cfg.volume, "volume")?;
    require_file(&cfg.horizon, "horizon")?;
    ensure_dir(&cfg.out)?;
    let runs = plan_matrix(&cfg.archs, &cfg.directions, &cfg.spacings);
    println!(
        "matrix: {} runs ({} archs × {} directions × {} spacings), jobs={}",
        runs.len(),
        cfg.archs.len(),
        cfg.directions.len(),
        cfg.spacings.len(),
        cfg.jobs
    );

    // Training/prediction/filtering over independent run directories.
    let failures: Mutex<BTreeMap<String, String>> = Mutex::new(BTreeMap::new());
    let queue: Mutex<Vec<&RunPlan>> = Mutex::new(runs.iter().rev().collect());
    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.max(1) {
            scope.spawn(|| loop {
                let Some(plan) = queue.lock().expect("queue lock").pop() else {
                    break;
                };
                let dir = run_dir(&cfg.out, plan);
                if cfg.resume && is_done(&dir) {
                    println!(
                        "matrix: skipping completed {}_{}_s{}",
                        plan.arch, plan.direction, plan.spacing
                    );
                    continue;
                }
                println!(
                    "matrix: run {} {} spacing {}",
                    plan.arch, plan.direction, plan.spacing
                );
                if let Err(e) = execute_run(cfg, plan) {
                    let key = format!("{}_{}_s{}", plan.arch, plan.direction, plan.spacing);
                    eprintln!("matrix: run {key} failed: {e}");
                    failures.lock().expect("failure lock").insert(key, e.to_string());
                }
            });
        }
    });
    let failures = failures.into_inner().expect("failure lock");

    // Fusion + evaluation per (arch, spacing).
    let volume = load_volume(&cfg.volume)?;
    let truth = load_horizon(&cfg.horizon, volume.n_il, volume.n_xl)?;
    let mut results: Vec<(ArchId, usize, MergedOutcome)> = Vec::new();
    for &arch in &cfg.archs {
        for &spacing in &cfg.spacings {
            let failed_direction = cfg.directions.iter().find(|d| {
                failures.contains_key(&format!("{arch}_{d}_s{spacing}"))
            });
            let outcome = if let Some(d) = failed_direction {
                MergedOutcome {
                    report: None,
                    status: format!("failed:{d}"),
                }
            } else if cfg.directions.len() < 2 {
                MergedOutcome {
                    report: None,
                    status: "incomplete:single-direction".to_string(),
                }
            } else {
                match merge_and_evaluate(cfg, arch, spacing, &truth) {
                    Ok(report) => MergedOutcome {
                        report: Some(report),
                        status: "ok".to_string(),
                    },
                    Err(e) => {
                        eprintln!("matrix: merge {arch} s{spacing} failed: {e}");
                        MergedOutcome {
                            report: None,
                            status: "failed:merge".to_string(),
                        }
                    }
                }
            };
            results.push((arch, spacing, outcome));
        }
    }

    // Merged-geometry table, one row per (arch, spacing).
    let mut table = String::from("arch,spacing,mae_ms,mse_ms2,area_pct,status\n");
    for (arch, spacing, outcome) in &results {
        let (mae, mse, area) = match &outcome.report {
            Some(r) => (
                r.mae_ms.to_string(),
                r.mse_ms2.to_string(),
                r.coverage_pct.to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        table.push_str(&format!(
            "{arch},{spacing},{mae},{mse},{area},{}\n",
            outcome.status
        ));
    }
    write_text(&cfg.out.join("matrix_results.csv"), &table)?;

    // Full summary over every run directory.
    let dirs: Vec<PathBuf> = std::fs::read_dir(&cfg.out)
        .map_err(|e| HorizonError::io(cfg.out.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    let rows = aggregate(&dirs)?;
    save_summary(&rows, &cfg.out.join("summary.csv"))?;

    // Map-view exports for the fused surfaces.
    let mut grids: Vec<(String, horizon_core::volume::HorizonGrid)> =
        vec![("truth".to_string(), truth.clone())];
    for (arch, spacing, outcome) in &results {
        if outcome.report.is_some() {
            let path = cfg.out.join(format!("{arch}_merged_s{spacing}/surface.csv"));
            grids.push((
                format!("{arch}_s{spacing}"),
                horizon_core::volume::load_surface(&path)?,
            ));
        }
    }
    let named: Vec<(String, &horizon_core::volume::HorizonGrid)> = grids
        .iter()
        .map(|(n, g)| (n.clone(), g))
        .collect();
    export_depth_maps(&named, &cfg.out.join("maps"))?;

    println!(
        "matrix: {} merged rows in {}",
        results.len(),
        cfg.out.join("matrix_results.csv").display()
    );
    Ok(())
}
