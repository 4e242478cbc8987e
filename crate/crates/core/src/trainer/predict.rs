//! Full-slice and full-volume inference with 50%-overlap tiling and
//! per-pixel mean stitching.

use rayon::prelude::*;

use crate::arch::{forward_eval, Weights};
use crate::error::Result;
use crate::tensor::{Graph, Shape4, Tensor4};
use crate::volume::{Direction, Image2, ProbVolume, Volume};

use super::data::{reflect_pad, standardize, tile_starts};

/// Probability map for one section: standardize, pad to the patch size,
/// run every 50%-overlap tile in eval mode, average overlapping pixels, and
/// crop back to the section extent.
pub fn predict_slice(weights: &Weights, slice: &Image2) -> Result<Image2> {
    let (ph, pw, _) = weights.spec.input;
    let std_slice = standardize(slice);
    let padded = reflect_pad(&std_slice, ph, pw);
    let rows = tile_starts(padded.h, ph);
    let cols = tile_starts(padded.w, pw);

    let tiles: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
        .collect();
    let outputs: Vec<(usize, usize, Tensor4<f32>)> = tiles
        .par_iter()
        .map(|&(i0, j0)| {
            let input = Tensor4::from_fn(Shape4::new(1, 1, ph, pw), |_, _, i, j| {
                padded.at(i0 + i, j0 + j)
            });
            let mut g: Graph<f32> = Graph::new();
            let iv = g.leaf(input, false);
            let out = forward_eval(weights, &mut g, iv)?;
            Ok((i0, j0, g.value(out).clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sum = vec![0.0f64; padded.h * padded.w];
    let mut count = vec![0u32; padded.h * padded.w];
    for (i0, j0, tile) in outputs {
        for i in 0..ph {
            for j in 0..pw {
                let idx = (i0 + i) * padded.w + j0 + j;
                sum[idx] += tile.at(0, 0, i, j) as f64;
                count[idx] += 1;
            }
        }
    }

    let top = (padded.h - slice.h) / 2;
    let left = (padded.w - slice.w) / 2;
    let mut out = Image2::zeros(slice.h, slice.w);
    for i in 0..slice.h {
        for j in 0..slice.w {
            let idx = (i + top) * padded.w + j + left;
            out.set(i, j, (sum[idx] / count[idx] as f64) as f32);
        }
    }
    Ok(out)
}

/// Applies [`predict_slice`] to every section along `direction` and stacks
/// the maps into a probability volume with the input's dimensions.
pub fn predict_volume(
    weights: &Weights,
    volume: &Volume,
    direction: Direction,
) -> Result<ProbVolume> {
    let lines = volume.line_count(direction);
    let maps: Vec<Image2> = (0..lines)
        .into_par_iter()
        .map(|line| predict_slice(weights, &volume.slice(direction, line)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Volume::zeros(volume.n_il, volume.n_xl, volume.n_t, volume.dt_ms);
    out.il0 = volume.il0;
    out.xl0 = volume.xl0;
    for (line, map) in maps.iter().enumerate() {
        out.set_slice(direction, line, map);
    }
    ProbVolume::new(out)
}
