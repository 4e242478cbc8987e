use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use horizon_core::postprocess::{CloudSource, DbscanParams};
use horizon_forge::commands::{self, matrix::ExperimentConfig, train::TrainOverrides};
use horizon_forge::{configure_threads, exit_code};

/// Seismic horizon interpretation pipeline: synthetic fixtures, sparse-label
/// training of U-Net-family segmentation networks, volume inference, density
/// filtering, orthogonal fusion, and geometric evaluation.
#[derive(Parser)]
#[command(name = "horizon-forge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic volume (synthetic.vol/.volh) and truth.csv.
    Synth {
        /// key=value spec file; omit for the built-in 96×96×96 fixture.
        /// Keys: n_il n_xl n_t dt_ms peak_hz noise_std seed target_layer
        /// layer_depths_ms layer_refl amp_ms tilt_il_ms tilt_xl_ms faults.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Generation seed (spec file wins when it also sets one).
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one architecture on a systematic sparse split.
    Train {
        /// Seismic volume (.vol with .volh sidecar).
        #[arg(long)]
        volume: PathBuf,
        /// Truth horizon CSV (il,xl,twt_ms).
        #[arg(long)]
        horizon: PathBuf,
        /// unet | unet_compressed | unetpp | attn_unet | cfa_s_unet | cfa_unet
        #[arg(long)]
        arch: String,
        /// inline | crossline
        #[arg(long)]
        direction: String,
        /// Every Nth line trains; the rest validate.
        #[arg(long)]
        spacing: usize,
        /// Label band thickness in samples.
        #[arg(long, default_value_t = 3)]
        band: usize,
        /// Learning-rate override (default: per-architecture value).
        #[arg(long)]
        lr: Option<f64>,
        /// Batch-size override.
        #[arg(long)]
        batch: Option<usize>,
        /// Epoch-cap override (default 500).
        #[arg(long)]
        epochs: Option<usize>,
        /// Early-stopping patience override (default 30).
        #[arg(long)]
        patience: Option<usize>,
        /// Train with the pure overlap loss instead of the composite.
        #[arg(long)]
        dice_only: bool,
        /// Stop once validation IoU reaches this value.
        #[arg(long)]
        target_iou: Option<f64>,
        /// Run seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run directory (config.snapshot, history.csv, weights.*).
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict a probability volume section by section.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// inline | crossline
        #[arg(long)]
        direction: String,
        /// Output probability volume (.vol).
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold, cluster, and keep the dominant cluster of a probability
    /// volume.
    Filter {
        /// Probability volume (.vol).
        #[arg(long)]
        prob: PathBuf,
        /// Neighborhood radius over z-scaled coordinates.
        #[arg(long, default_value_t = 6.0)]
        eps: f64,
        /// Core-point threshold (self-inclusive).
        #[arg(long, default_value_t = 25)]
        minpts: usize,
        /// Divisor applied to the time axis before distances.
        #[arg(long, default_value_t = 3.0)]
        zfactor: f64,
        /// Probability threshold for cloud extraction.
        #[arg(long, default_value_t = 1e-5)]
        tau: f64,
        /// Source tag recorded in the cloud: inline | crossline | merged.
        #[arg(long, default_value = "inline")]
        source: String,
        /// Output cloud CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Set-union of two filtered clouds.
    Merge {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Geometric evaluation of a cloud or surface against the truth horizon.
    Evaluate {
        /// Prediction: filtered cloud CSV or surface-grid CSV.
        #[arg(long)]
        pred: PathBuf,
        /// Truth horizon CSV (il,xl,twt_ms).
        #[arg(long)]
        truth: PathBuf,
        /// Output directory (report.csv, diff.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment matrix from a key=value config file.
    /// Keys: volume horizon out archs directions spacings band seed lr batch
    /// epochs patience loss target_iou eps minpts zfactor tau jobs resume.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        /// Parallel run workers (overrides the config file).
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip runs whose directory carries a valid completion marker.
        #[arg(long)]
        resume: bool,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run directories into summary.csv.
    Report {
        /// Run directories.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> horizon_core::Result<()> {
    match cli.command {
        Command::Synth { spec, out, seed } => commands::synth::run(spec.as_deref(), &out, seed),
        Command::Train {
            volume,
            horizon,
            arch,
            direction,
            spacing,
            band,
            lr,
            batch,
            epochs,
            patience,
            dice_only,
            target_iou,
            seed,
            out,
        } => {
            let overrides = TrainOverrides {
                learning_rate: lr,
                batch_size: batch,
                max_epochs: epochs,
                patience,
                seed: Some(seed),
                dice_only,
                target_valid_iou: target_iou,
            };
            commands::train::run(
                &volume, &horizon, &arch, &direction, spacing, band, &overrides, &out,
            )
        }
        Command::Predict {
            weights,
            volume,
            direction,
            out,
        } => commands::predict::run(&weights, &volume, &direction, &out),
        Command::Filter {
            prob,
            eps,
            minpts,
            zfactor,
            tau,
            source,
            out,
        } => {
            let params = DbscanParams {
                epsilon: eps,
                min_pts: minpts,
                z_factor: zfactor,
                tau,
            };
            commands::filter::run(&prob, &params, CloudSource::parse(&source)?, &out)
        }
        Command::Merge { a, b, out } => commands::merge::run(&a, &b, &out),
        Command::Evaluate { pred, truth, out } => commands::evaluate::run(&pred, &truth, &out),
        Command::Matrix {
            config,
            jobs,
            resume,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(jobs) = jobs {
                cfg.jobs = jobs;
            }
            if resume {
                cfg.resume = true;
            }
            if let Some(out) = out {
                cfg.out = out;
            }
            commands::matrix::run(&cfg)
        }
        Command::Report { runs, out } => commands::report::run(&runs, &out),
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
