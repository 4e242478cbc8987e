//! `synth`: render a synthetic volume and its exact truth horizon.

use std::path::Path;

use horizon_core::synthetics::{generate, Fault, Interface, SynthSpec};
use horizon_core::volume::{save_horizon, save_volume, Direction};
use horizon_core::{HorizonError, Result};

use crate::kvconfig::KvConfig;

use super::ensure_dir;

/// Builds a [`SynthSpec`] from a key=value file; unset keys fall back to the
/// desk fixture. Layers can be overridden with `layer_depths_ms` (and
/// optionally `layer_refl`), faults with `faults=axis:line:throw;...`.
pub fn spec_from_config(cfg: &KvConfig, seed: u64) -> Result<SynthSpec> {
    let mut spec = SynthSpec::desk_default(cfg.get_or("seed", seed)?);
    spec.n_il = cfg.get_or("n_il", spec.n_il)?;
    spec.n_xl = cfg.get_or("n_xl", spec.n_xl)?;
    spec.n_t = cfg.get_or("n_t", spec.n_t)?;
    spec.dt_ms = cfg.get_or("dt_ms", spec.dt_ms)?;
    spec.peak_hz = cfg.get_or("peak_hz", spec.peak_hz)?;
    spec.noise_std = cfg.get_or("noise_std", spec.noise_std)?;
    spec.target_layer = cfg.get_or("target_layer", spec.target_layer)?;

    if let Some(depths) = cfg.list("layer_depths_ms") {
        let refls: Vec<f32> = match cfg.list("layer_refl") {
            Some(r) => r
                .iter()
                .map(|s| {
                    s.parse().map_err(|_| {
                        HorizonError::Argument(format!("layer_refl: bad value '{s}'"))
                    })
                })
                .collect::<Result<_>>()?,
            None => depths
                .iter()
                .enumerate()
                .map(|(i, _)| if i % 2 == 0 { 0.7 } else { -0.6 })
                .collect(),
        };
        if refls.len() != depths.len() {
            return Err(HorizonError::Argument(
                "layer_refl must match layer_depths_ms in length".into(),
            ));
        }
        let amp: f32 = cfg.get_or("amp_ms", 6.0)?;
        spec.interfaces = depths
            .iter()
            .zip(refls)
            .enumerate()
            .map(|(i, (d, refl))| {
                let base_ms: f32 = d.parse().map_err(|_| {
                    HorizonError::Argument(format!("layer_depths_ms: bad value '{d}'"))
                })?;
                Ok(Interface {
                    base_ms,
                    amp_ms: amp,
                    cycles_il: 1.0 + 0.25 * i as f32,
                    cycles_xl: 0.75,
                    phase_il: 0.9 * i as f32,
                    phase_xl: 0.4 * i as f32 + 1.0,
                    tilt_il_ms: cfg.get_or("tilt_il_ms", 8.0)?,
                    tilt_xl_ms: cfg.get_or("tilt_xl_ms", -6.0)?,
                    refl,
                })
            })
            .collect::<Result<_>>()?;
    }

    if let Some(faults) = cfg.raw("faults") {
        spec.faults = faults
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|item| {
                let parts: Vec<&str> = item.trim().split(':').collect();
                if parts.len() != 3 {
                    return Err(HorizonError::Argument(format!(
                        "faults: expected axis:line:throw, got '{item}'"
                    )));
                }
                Ok(Fault {
                    axis: Direction::parse(parts[0])
                        .or_else(|_| match parts[0] {
                            "il" => Ok(Direction::Inline),
                            "xl" => Ok(Direction::Crossline),
                            other => Err(HorizonError::Argument(format!(
                                "faults: unknown axis '{other}'"
                            ))),
                        })?,
                    line: parts[1].parse().map_err(|_| {
                        HorizonError::Argument(format!("faults: bad line '{}'", parts[1]))
                    })?,
                    throw_samples: parts[2].parse().map_err(|_| {
                        HorizonError::Argument(format!("faults: bad throw '{}'", parts[2]))
                    })?,
                })
            })
            .collect::<Result<_>>()?;
    }
    Ok(spec)
}

pub fn run(spec_file: Option<&Path>, out_dir: &Path, seed: u64) -> Result<()> {
    let spec = match spec_file {
        Some(path) => {
            super::require_file(path, "synthetic spec")?;
            spec_from_config(&KvConfig::load(path)?, seed)?
        }
        None => SynthSpec::desk_default(seed),
    };
    let (volume, truth) = generate(&spec)?;
    ensure_dir(out_dir)?;
    let vol_path = out_dir.join("synthetic.vol");
    save_volume(&volume, &vol_path)?;
    let truth_path = out_dir.join("truth.csv");
    save_horizon(&truth, &truth_path)?;
    println!(
        "synth: wrote {} ({}x{}x{} at {} ms) and {}",
        vol_path.display(),
        volume.n_il,
        volume.n_xl,
        volume.n_t,
        volume.dt_ms,
        truth_path.display()
    );
    Ok(())
}
