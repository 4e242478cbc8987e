//! Patch pipeline: per-slice standardization, reflect padding, 50%-overlap
//! tiling, and balanced patch extraction from labeled sections.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape4, Tensor4};
use crate::volume::{Image2, SlicePair};

/// One training example: standardized amplitude patch and its binary label.
#[derive(Clone, Debug)]
pub struct Patch {
    pub image: Tensor4<f32>,
    pub label: Tensor4<f32>,
}

/// Subtract the slice mean, divide by the slice standard deviation.
pub fn standardize(img: &Image2) -> Image2 {
    let n = img.data.len() as f64;
    let mean = img.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img
        .data
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt().max(1e-12);
    Image2 {
        h: img.h,
        w: img.w,
        data: img
            .data
            .iter()
            .map(|&v| ((v as f64 - mean) / std) as f32)
            .collect(),
    }
}

fn mirror(i: isize, n: usize) -> usize {
    // Reflection without edge repetition, period 2(n-1); n == 1 replicates.
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Pads symmetrically by reflection until both extents reach the minima.
pub fn reflect_pad(img: &Image2, min_h: usize, min_w: usize) -> Image2 {
    if img.h >= min_h && img.w >= min_w {
        return img.clone();
    }
    let out_h = img.h.max(min_h);
    let out_w = img.w.max(min_w);
    let top = (out_h - img.h) / 2;
    let left = (out_w - img.w) / 2;
    let mut out = Image2::zeros(out_h, out_w);
    for i in 0..out_h {
        let src_i = mirror(i as isize - top as isize, img.h);
        for j in 0..out_w {
            let src_j = mirror(j as isize - left as isize, img.w);
            out.set(i, j, img.at(src_i, src_j));
        }
    }
    out
}

/// Window start offsets covering `extent` with 50% overlap; the final window
/// is flush with the end.
pub fn tile_starts(extent: usize, window: usize) -> Vec<usize> {
    assert!(extent >= window, "extent must be padded up to the window");
    let stride = window / 2;
    let mut starts = Vec::new();
    let mut s = 0usize;
    while s + window <= extent {
        starts.push(s);
        s += stride;
    }
    if *starts.last().expect("at least one window") + window < extent {
        starts.push(extent - window);
    }
    starts
}

fn window_tensor(img: &Image2, i0: usize, j0: usize, win: usize) -> Tensor4<f32> {
    Tensor4::from_fn(Shape4::new(1, 1, win, win), |_, _, i, j| {
        img.at(i0 + i, j0 + j)
    })
}

/// Cuts `window`-sized patches from each pair. With `balance_negatives`,
/// patches whose label window touches the horizon band are all kept and an
/// equal count of randomly chosen empty patches joins them; otherwise every
/// tile is kept.
pub fn extract_patches(
    pairs: &[SlicePair],
    window: usize,
    rng: &mut ChaCha8Rng,
    balance_negatives: bool,
) -> Vec<Patch> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for pair in pairs {
        let image = reflect_pad(&standardize(&pair.image), window, window);
        let label = reflect_pad(&pair.label, window, window);
        for &i0 in &tile_starts(image.h, window) {
            for &j0 in &tile_starts(image.w, window) {
                let label_t = window_tensor(&label, i0, j0, window);
                let has_horizon = label_t.data().iter().any(|&v| v > 0.5);
                let patch = Patch {
                    image: window_tensor(&image, i0, j0, window),
                    label: label_t,
                };
                if has_horizon {
                    positives.push(patch);
                } else {
                    negatives.push(patch);
                }
            }
        }
    }
    if !balance_negatives {
        positives.extend(negatives);
        return positives;
    }
    // Sample negatives without replacement up to the positive count.
    let want = positives.len().min(negatives.len());
    for i in 0..want {
        let j = rng.gen_range(i..negatives.len());
        negatives.swap(i, j);
    }
    positives.extend(negatives.drain(..want));
    positives
}

/// Stacks single-item patches into one (b, 1, h, w) batch pair.
pub fn stack_batch(patches: &[&Patch]) -> (Tensor4<f32>, Tensor4<f32>) {
    let shape = patches[0].image.shape();
    let (h, w) = (shape.h, shape.w);
    let b = patches.len();
    let mut image = Tensor4::zeros(Shape4::new(b, 1, h, w));
    let mut label = Tensor4::zeros(Shape4::new(b, 1, h, w));
    for (n, p) in patches.iter().enumerate() {
        let off = n * h * w;
        image.data_mut()[off..off + h * w].copy_from_slice(p.image.data());
        label.data_mut()[off..off + h * w].copy_from_slice(p.label.data());
    }
    (image, label)
}
