//! Seismic volume and horizon containers, label-mask construction, and the
//! systematic sparse train/validation splits.

mod io;

pub use io::{
    load_horizon, load_point_cloud, load_surface, load_volume, save_horizon, save_point_cloud,
    save_surface, save_volume,
};

use crate::error::{HorizonError, Result};

/// Orthogonal section direction of a 3D survey.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Direction {
    Inline,
    Crossline,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Inline => "inline",
            Direction::Crossline => "crossline",
        }
    }

    pub fn parse(s: &str) -> Result<Direction> {
        match s {
            "inline" => Ok(Direction::Inline),
            "crossline" => Ok(Direction::Crossline),
            _ => Err(HorizonError::Argument(format!(
                "unknown direction '{s}'; valid: inline, crossline"
            ))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Plain 2D float grid used for sections, labels, and stitched maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2 {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image2 {
    pub fn zeros(h: usize, w: usize) -> Self {
        Image2 {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.w + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.w..(i + 1) * self.w]
    }
}

/// 3D amplitude grid, stored inline-major, then crossline, then time.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub n_il: usize,
    pub n_xl: usize,
    pub n_t: usize,
    /// Sample interval along the time axis, in milliseconds.
    pub dt_ms: f32,
    pub il0: i64,
    pub xl0: i64,
    data: Vec<f32>,
}

impl Volume {
    pub fn zeros(n_il: usize, n_xl: usize, n_t: usize, dt_ms: f32) -> Self {
        Volume {
            n_il,
            n_xl,
            n_t,
            dt_ms,
            il0: 0,
            xl0: 0,
            data: vec![0.0; n_il * n_xl * n_t],
        }
    }

    pub fn from_data(
        n_il: usize,
        n_xl: usize,
        n_t: usize,
        dt_ms: f32,
        data: Vec<f32>,
    ) -> Result<Self> {
        if n_il < 1 || n_xl < 1 || n_t < 1 {
            return Err(HorizonError::Argument(
                "volume extents must all be >= 1".into(),
            ));
        }
        if dt_ms <= 0.0 {
            return Err(HorizonError::Argument("dt_ms must be positive".into()));
        }
        if data.len() != n_il * n_xl * n_t {
            return Err(HorizonError::Argument(format!(
                "payload length {} does not match {n_il}x{n_xl}x{n_t}",
                data.len()
            )));
        }
        Ok(Volume {
            n_il,
            n_xl,
            n_t,
            dt_ms,
            il0: 0,
            xl0: 0,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_il, self.n_xl, self.n_t)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, il: usize, xl: usize, t: usize) -> f32 {
        self.data[(il * self.n_xl + xl) * self.n_t + t]
    }

    #[inline]
    pub fn set(&mut self, il: usize, xl: usize, t: usize, v: f32) {
        self.data[(il * self.n_xl + xl) * self.n_t + t] = v;
    }

    /// Contiguous time trace at one (inline, crossline) position.
    pub fn trace(&self, il: usize, xl: usize) -> &[f32] {
        let off = (il * self.n_xl + xl) * self.n_t;
        &self.data[off..off + self.n_t]
    }

    pub fn trace_mut(&mut self, il: usize, xl: usize) -> &mut [f32] {
        let off = (il * self.n_xl + xl) * self.n_t;
        &mut self.data[off..off + self.n_t]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn line_count(&self, direction: Direction) -> usize {
        match direction {
            Direction::Inline => self.n_il,
            Direction::Crossline => self.n_xl,
        }
    }

    /// 2D section along the given direction; rows are the other horizontal
    /// axis, columns are time samples.
    pub fn slice(&self, direction: Direction, line: usize) -> Image2 {
        match direction {
            Direction::Inline => {
                let mut img = Image2::zeros(self.n_xl, self.n_t);
                for xl in 0..self.n_xl {
                    img.data[xl * self.n_t..(xl + 1) * self.n_t]
                        .copy_from_slice(self.trace(line, xl));
                }
                img
            }
            Direction::Crossline => {
                let mut img = Image2::zeros(self.n_il, self.n_t);
                for il in 0..self.n_il {
                    img.data[il * self.n_t..(il + 1) * self.n_t]
                        .copy_from_slice(self.trace(il, line));
                }
                img
            }
        }
    }

    /// Writes a 2D section back into the volume (inverse of [`Volume::slice`]).
    pub fn set_slice(&mut self, direction: Direction, line: usize, img: &Image2) {
        let n_t = self.n_t;
        match direction {
            Direction::Inline => {
                for xl in 0..self.n_xl {
                    self.trace_mut(line, xl)
                        .copy_from_slice(&img.data[xl * n_t..(xl + 1) * n_t]);
                }
            }
            Direction::Crossline => {
                for il in 0..self.n_il {
                    self.trace_mut(il, line)
                        .copy_from_slice(&img.data[il * n_t..(il + 1) * n_t]);
                }
            }
        }
    }
}

/// A [`Volume`] whose samples are probabilities in [0, 1].
#[derive(Clone, Debug)]
pub struct ProbVolume(Volume);

impl ProbVolume {
    pub fn new(v: Volume) -> Result<Self> {
        if !v.data.iter().all(|&p| (0.0..=1.0).contains(&p)) {
            return Err(HorizonError::Validation(
                "probability volume has samples outside [0, 1]".into(),
            ));
        }
        Ok(ProbVolume(v))
    }

    pub fn as_volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }
}

/// Per-(inline, crossline) two-way-time surface in ms; NaN marks columns
/// without an interpretation.
#[derive(Clone, Debug)]
pub struct HorizonGrid {
    pub n_il: usize,
    pub n_xl: usize,
    twt_ms: Vec<f32>,
}

impl HorizonGrid {
    pub fn empty(n_il: usize, n_xl: usize) -> Self {
        HorizonGrid {
            n_il,
            n_xl,
            twt_ms: vec![f32::NAN; n_il * n_xl],
        }
    }

    #[inline]
    pub fn get(&self, il: usize, xl: usize) -> Option<f32> {
        let v = self.twt_ms[il * self.n_xl + xl];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    #[inline]
    pub fn set(&mut self, il: usize, xl: usize, twt_ms: f32) {
        self.twt_ms[il * self.n_xl + xl] = twt_ms;
    }

    pub fn clear(&mut self, il: usize, xl: usize) {
        self.twt_ms[il * self.n_xl + xl] = f32::NAN;
    }

    pub fn raw(&self) -> &[f32] {
        &self.twt_ms
    }

    pub fn defined_count(&self) -> usize {
        self.twt_ms.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn iter_defined(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        (0..self.n_il).flat_map(move |il| {
            (0..self.n_xl).filter_map(move |xl| self.get(il, xl).map(|v| (il, xl, v)))
        })
    }
}

/// Binary voxel labels, same dims as the originating volume.
#[derive(Clone, Debug)]
pub struct MaskVolume {
    pub n_il: usize,
    pub n_xl: usize,
    pub n_t: usize,
    data: Vec<u8>,
}

impl MaskVolume {
    pub fn zeros(n_il: usize, n_xl: usize, n_t: usize) -> Self {
        MaskVolume {
            n_il,
            n_xl,
            n_t,
            data: vec![0; n_il * n_xl * n_t],
        }
    }

    #[inline]
    pub fn at(&self, il: usize, xl: usize, t: usize) -> bool {
        self.data[(il * self.n_xl + xl) * self.n_t + t] != 0
    }

    #[inline]
    pub fn set(&mut self, il: usize, xl: usize, t: usize, v: bool) {
        self.data[(il * self.n_xl + xl) * self.n_t + t] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Label section along a direction, as a 0/1 float image.
    pub fn slice(&self, direction: Direction, line: usize) -> Image2 {
        let (rows, get): (usize, Box<dyn Fn(usize, usize) -> bool>) = match direction {
            Direction::Inline => (self.n_xl, Box::new(move |r, t| self.at(line, r, t))),
            Direction::Crossline => (self.n_il, Box::new(move |r, t| self.at(r, line, t))),
        };
        let mut img = Image2::zeros(rows, self.n_t);
        for r in 0..rows {
            for t in 0..self.n_t {
                if get(r, t) {
                    img.set(r, t, 1.0);
                }
            }
        }
        img
    }
}

/// Rasterizes a horizon surface into a voxel mask: a vertical band of
/// `2·⌊band_px/2⌋+1` samples centered on `round(twt/dt)` per interpreted
/// column, clipped to the volume.
pub fn horizon_to_mask(
    horizon: &HorizonGrid,
    dims: (usize, usize, usize),
    dt_ms: f32,
    band_px: usize,
) -> Result<MaskVolume> {
    let (n_il, n_xl, n_t) = dims;
    if horizon.n_il != n_il || horizon.n_xl != n_xl {
        return Err(HorizonError::Shape(format!(
            "horizon grid {}x{} does not match volume {n_il}x{n_xl}",
            horizon.n_il, horizon.n_xl
        )));
    }
    let t_max = (n_t - 1) as f32 * dt_ms;
    let half = (band_px / 2) as isize;
    let mut mask = MaskVolume::zeros(n_il, n_xl, n_t);
    for il in 0..n_il {
        for xl in 0..n_xl {
            let Some(twt) = horizon.get(il, xl) else {
                continue;
            };
            if twt < 0.0 || twt > t_max {
                return Err(HorizonError::Argument(format!(
                    "horizon value {twt} ms at column (il={il}, xl={xl}) outside [0, {t_max}]"
                )));
            }
            let k = (twt / dt_ms).round() as isize;
            for t in (k - half)..=(k + half) {
                if t >= 0 && (t as usize) < n_t {
                    mask.set(il, xl, t as usize, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Systematic split: every `spacing`-th line trains, the rest validate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub direction: Direction,
    pub spacing: usize,
    pub train_lines: Vec<usize>,
    pub valid_lines: Vec<usize>,
}

pub fn make_split(n_lines: usize, direction: Direction, spacing: usize) -> Result<SplitPlan> {
    if spacing < 1 {
        return Err(HorizonError::Argument("spacing must be >= 1".into()));
    }
    if spacing > n_lines {
        return Err(HorizonError::Argument(format!(
            "spacing {spacing} exceeds line count {n_lines}"
        )));
    }
    let train_lines: Vec<usize> = (0..n_lines).step_by(spacing).collect();
    let valid_lines: Vec<usize> = (0..n_lines).filter(|i| i % spacing != 0).collect();
    if valid_lines.is_empty() {
        return Err(HorizonError::Argument(
            "split leaves no validation lines; use a spacing >= 2".into(),
        ));
    }
    Ok(SplitPlan {
        direction,
        spacing,
        train_lines,
        valid_lines,
    })
}

/// One (amplitude section, label section) pair.
#[derive(Clone, Debug)]
pub struct SlicePair {
    pub line: usize,
    pub image: Image2,
    pub label: Image2,
}

/// Section pairs for the plan's training and validation lines.
pub fn extract_labeled_slices(
    volume: &Volume,
    mask: &MaskVolume,
    plan: &SplitPlan,
) -> Result<(Vec<SlicePair>, Vec<SlicePair>)> {
    if volume.dims() != (mask.n_il, mask.n_xl, mask.n_t) {
        return Err(HorizonError::Shape(
            "mask dims do not match volume dims".into(),
        ));
    }
    let pull = |lines: &[usize]| -> Vec<SlicePair> {
        lines
            .iter()
            .map(|&line| SlicePair {
                line,
                image: volume.slice(plan.direction, line),
                label: mask.slice(plan.direction, line),
            })
            .collect()
    };
    Ok((pull(&plan.train_lines), pull(&plan.valid_lines)))
}
