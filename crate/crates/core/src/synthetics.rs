//! Synthetic seismic volumes with exactly known horizons.
//!
//! Layered reflectivity is convolved with a Ricker wavelet along time;
//! faults displace all interfaces on one side of a strike line; Gaussian
//! noise is optional. The returned ground truth is the exact target-layer
//! surface, which makes the whole pipeline verifiable at desk scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{HorizonError, Result};
use crate::volume::{Direction, HorizonGrid, Volume};

/// One smooth reflecting interface.
#[derive(Clone, Copy, Debug)]
pub struct Interface {
    pub base_ms: f32,
    /// Undulation amplitude of each sine component.
    pub amp_ms: f32,
    pub cycles_il: f32,
    pub cycles_xl: f32,
    pub phase_il: f32,
    pub phase_xl: f32,
    /// Total dip across the volume along each axis.
    pub tilt_il_ms: f32,
    pub tilt_xl_ms: f32,
    /// Reflection coefficient of the spike placed at this interface.
    pub refl: f32,
}

impl Interface {
    pub fn flat(base_ms: f32, refl: f32) -> Self {
        Interface {
            base_ms,
            amp_ms: 0.0,
            cycles_il: 0.0,
            cycles_xl: 0.0,
            phase_il: 0.0,
            phase_xl: 0.0,
            tilt_il_ms: 0.0,
            tilt_xl_ms: 0.0,
            refl,
        }
    }

    fn twt(&self, il: usize, xl: usize, n_il: usize, n_xl: usize) -> f32 {
        let u = il as f32 / (n_il.max(2) - 1) as f32;
        let v = xl as f32 / (n_xl.max(2) - 1) as f32;
        let tau = std::f32::consts::TAU;
        self.base_ms
            + 0.5
                * self.amp_ms
                * ((tau * self.cycles_il * u + self.phase_il).sin()
                    + (tau * self.cycles_xl * v + self.phase_xl).sin())
            + self.tilt_il_ms * (u - 0.5)
            + self.tilt_xl_ms * (v - 0.5)
    }
}

/// Vertical fault: columns whose index along `axis` exceeds `line` are
/// displaced down (positive throw) by `throw_samples` time samples.
#[derive(Clone, Copy, Debug)]
pub struct Fault {
    pub axis: Direction,
    pub line: usize,
    pub throw_samples: i32,
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub n_il: usize,
    pub n_xl: usize,
    pub n_t: usize,
    pub dt_ms: f32,
    pub peak_hz: f32,
    pub interfaces: Vec<Interface>,
    /// Index into `interfaces` of the layer reported as ground truth.
    pub target_layer: usize,
    pub faults: Vec<Fault>,
    pub noise_std: f32,
    pub seed: u64,
}

impl SynthSpec {
    /// Desk-scale fixture: 96×96×96 at 4 ms, five layers, one fault through
    /// the crossline axis, mild undulation and dip.
    pub fn desk_default(seed: u64) -> Self {
        let bases = [80.0, 140.0, 200.0, 260.0, 320.0];
        let refls = [0.7, -0.6, 1.0, -0.65, 0.55];
        let interfaces = bases
            .iter()
            .zip(refls)
            .enumerate()
            .map(|(i, (&base_ms, refl))| Interface {
                base_ms,
                amp_ms: 6.0,
                cycles_il: 1.0 + 0.25 * i as f32,
                cycles_xl: 0.75,
                phase_il: 0.9 * i as f32,
                phase_xl: 0.4 * i as f32 + 1.0,
                tilt_il_ms: 8.0,
                tilt_xl_ms: -6.0,
                refl,
            })
            .collect();
        SynthSpec {
            n_il: 96,
            n_xl: 96,
            n_t: 96,
            dt_ms: 4.0,
            peak_hz: 30.0,
            interfaces,
            target_layer: 2,
            faults: vec![Fault {
                axis: Direction::Crossline,
                line: 47,
                throw_samples: 4,
            }],
            noise_std: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_il < 1 || self.n_xl < 1 || self.n_t < 4 {
            return Err(HorizonError::Argument(
                "synthetic volume extents too small".into(),
            ));
        }
        if self.dt_ms <= 0.0 || self.peak_hz <= 0.0 {
            return Err(HorizonError::Argument(
                "dt_ms and peak_hz must be positive".into(),
            ));
        }
        if self.interfaces.is_empty() {
            return Err(HorizonError::Argument(
                "at least one interface is required".into(),
            ));
        }
        if self.target_layer >= self.interfaces.len() {
            return Err(HorizonError::Argument(format!(
                "target_layer {} out of range for {} interfaces",
                self.target_layer,
                self.interfaces.len()
            )));
        }
        for f in &self.faults {
            if f.throw_samples.unsigned_abs() as usize >= self.n_t / 4 {
                return Err(HorizonError::Argument(format!(
                    "fault throw {} must stay below n_t/4 = {}",
                    f.throw_samples,
                    self.n_t / 4
                )));
            }
            let extent = match f.axis {
                Direction::Inline => self.n_il,
                Direction::Crossline => self.n_xl,
            };
            if f.line >= extent {
                return Err(HorizonError::Argument(format!(
                    "fault strike line {} outside the {} axis",
                    f.line, f.axis
                )));
            }
        }
        Ok(())
    }
}

/// `(1 − 2π²f²t²)·exp(−π²f²t²)` sampled at `dt_ms`, `half_len` samples to
/// each side of the unit peak at t = 0.
pub fn ricker_wavelet(peak_hz: f64, dt_ms: f64, half_len: usize) -> Vec<f64> {
    assert!(peak_hz > 0.0, "peak frequency must be positive");
    let mut w = Vec::with_capacity(2 * half_len + 1);
    for lag in -(half_len as i64)..=(half_len as i64) {
        let t = lag as f64 * dt_ms / 1000.0;
        let a = (std::f64::consts::PI * peak_hz * t).powi(2);
        w.push((1.0 - 2.0 * a) * (-a).exp());
    }
    w
}

/// Number of samples covering three wavelet periods; enough support for the
/// discrete wavelet to be numerically zero-mean.
pub fn default_half_len(peak_hz: f64, dt_ms: f64) -> usize {
    (3.0 * 1000.0 / (peak_hz * dt_ms)).ceil() as usize
}

/// Target-layer surfaces for every interface, faults applied.
fn interface_grids(spec: &SynthSpec) -> Vec<HorizonGrid> {
    spec.interfaces
        .iter()
        .map(|iface| {
            let mut g = HorizonGrid::empty(spec.n_il, spec.n_xl);
            for il in 0..spec.n_il {
                for xl in 0..spec.n_xl {
                    let mut twt = iface.twt(il, xl, spec.n_il, spec.n_xl);
                    for f in &spec.faults {
                        let idx = match f.axis {
                            Direction::Inline => il,
                            Direction::Crossline => xl,
                        };
                        if idx > f.line {
                            twt += f.throw_samples as f32 * spec.dt_ms;
                        }
                    }
                    g.set(il, xl, twt);
                }
            }
            g
        })
        .collect()
}

/// Renders the volume and returns it with the exact target-layer surface.
pub fn generate(spec: &SynthSpec) -> Result<(Volume, HorizonGrid)> {
    spec.validate()?;
    let grids = interface_grids(spec);

    // The target layer must stay clear of the volume's top and bottom.
    let t_lo = 3.0 * spec.dt_ms;
    let t_hi = (spec.n_t as f32 - 4.0) * spec.dt_ms;
    for (il, xl, twt) in grids[spec.target_layer].iter_defined() {
        if twt < t_lo || twt > t_hi {
            return Err(HorizonError::Argument(format!(
                "target surface leaves the safe band at (il={il}, xl={xl}): {twt} ms"
            )));
        }
    }

    let half = default_half_len(spec.peak_hz as f64, spec.dt_ms as f64);
    let wavelet = ricker_wavelet(spec.peak_hz as f64, spec.dt_ms as f64, half);

    let mut volume = Volume::zeros(spec.n_il, spec.n_xl, spec.n_t, spec.dt_ms);
    for il in 0..spec.n_il {
        for xl in 0..spec.n_xl {
            for (iface, grid) in spec.interfaces.iter().zip(&grids) {
                let twt = grid.get(il, xl).expect("interface grids are dense");
                let k = (twt / spec.dt_ms).round() as i64;
                let trace = volume.trace_mut(il, xl);
                for (w_idx, &w) in wavelet.iter().enumerate() {
                    let s = k + w_idx as i64 - half as i64;
                    if s >= 0 && (s as usize) < trace.len() {
                        trace[s as usize] += iface.refl * w as f32;
                    }
                }
            }
        }
    }

    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0f64, spec.noise_std as f64)
            .map_err(|e| HorizonError::Argument(format!("bad noise_std: {e}")))?;
        for il in 0..spec.n_il {
            for xl in 0..spec.n_xl {
                for v in volume.trace_mut(il, xl) {
                    *v += normal.sample(&mut rng) as f32;
                }
            }
        }
    }

    Ok((volume, grids[spec.target_layer].clone()))
}
