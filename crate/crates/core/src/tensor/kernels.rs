//! Raw compute kernels behind the graph ops.
//!
//! Convolutions are lowered to im2col + GEMM. Wide GEMMs are split into
//! fixed-size column chunks processed in parallel; chunk boundaries depend
//! only on the problem size, so results are bit-identical for any worker
//! count.

use rayon::prelude::*;

use super::{Scalar, Shape4, Tensor4};

/// Columns per parallel GEMM chunk. Fixed so the split (and therefore the
/// floating-point result) does not depend on the thread count.
const GEMM_CHUNK_COLS: usize = 4096;

thread_local! {
    static SCRATCH_F32: std::cell::RefCell<Vec<f32>> = const { std::cell::RefCell::new(Vec::new()) };
    static SCRATCH_F64: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Reusable per-thread buffer for im2col matrices. Callers must overwrite
/// every element they read; contents are unspecified on entry.
fn with_scratch<S: Scalar, R>(len: usize, f: impl FnOnce(&mut [S]) -> R) -> R {
    use std::any::TypeId;
    fn run<T: Default + Clone, R>(
        cell: &std::cell::RefCell<Vec<T>>,
        len: usize,
        f: impl FnOnce(&mut [T]) -> R,
    ) -> R {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, T::default());
        }
        f(&mut buf[..len])
    }
    if TypeId::of::<S>() == TypeId::of::<f32>() {
        SCRATCH_F32.with(|c| {
            run(c, len, |buf| {
                // S == f32 checked above.
                let slice = unsafe { &mut *(buf as *mut [f32] as *mut [S]) };
                f(slice)
            })
        })
    } else {
        SCRATCH_F64.with(|c| {
            run(c, len, |buf| {
                let slice = unsafe { &mut *(buf as *mut [f64] as *mut [S]) };
                f(slice)
            })
        })
    }
}

pub(crate) fn conv_out_extent(input: usize, kernel: usize, pad: usize, stride: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// im2col for one batch item: `col[(ic·kh+r)·kw+s][oy·ow+ox] = x[ic][oy·st+r−ph][ox·st+s−pw]`.
fn im2col<S: Scalar>(
    x: &Tensor4<S>,
    n: usize,
    kh: usize,
    kw: usize,
    pad_h: usize,
    pad_w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    col: &mut [S],
) {
    let s = x.shape();
    let (h, w) = (s.h, s.w);
    debug_assert_eq!(col.len(), s.c * kh * kw * oh * ow);
    for ic in 0..s.c {
        let plane = x.plane(n, ic);
        for r in 0..kh {
            for q in 0..kw {
                let row = &mut col[((ic * kh + r) * kw + q) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + r) as isize - pad_h as isize;
                    let dst = &mut row[oy * ow..oy * ow + ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(S::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..iy as usize * w + w];
                    if stride == 1 {
                        // Middle segment is a contiguous copy; edges are pad.
                        let ix0 = q as isize - pad_w as isize;
                        let lead = ((-ix0).max(0) as usize).min(ow);
                        let start = ix0.max(0) as usize;
                        let avail = w.saturating_sub(start);
                        let count = avail.min(ow - lead);
                        dst[..lead].fill(S::zero());
                        dst[lead..lead + count].copy_from_slice(&src_row[start..start + count]);
                        dst[lead + count..].fill(S::zero());
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + q) as isize - pad_w as isize;
                            *d = if ix >= 0 && ix < w as isize {
                                src_row[ix as usize]
                            } else {
                                S::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into an image plane set.
#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad_h: usize,
    pad_w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    out: &mut [S],
) {
    debug_assert_eq!(out.len(), c * h * w);
    for ic in 0..c {
        let plane = &mut out[ic * h * w..(ic + 1) * h * w];
        for r in 0..kh {
            for q in 0..kw {
                let row = &col[((ic * kh + r) * kw + q) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + r) as isize - pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..iy as usize * w + w];
                    for ox in 0..ow {
                        let ix = (ox * stride + q) as isize - pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

struct SendConst<S>(*const S);
unsafe impl<S> Send for SendConst<S> {}
unsafe impl<S> Sync for SendConst<S> {}
impl<S> SendConst<S> {
    fn get(&self) -> *const S {
        self.0
    }
}
struct SendMut<S>(*mut S);
unsafe impl<S> Send for SendMut<S> {}
unsafe impl<S> Sync for SendMut<S> {}
impl<S> SendMut<S> {
    fn get(&self) -> *mut S {
        self.0
    }
}

/// Strided GEMM dispatching on the element type (only f32/f64 implement
/// [`Scalar`]).
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_strided<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: *const S,
    rsa: isize,
    csa: isize,
    b: *const S,
    rsb: isize,
    csb: isize,
    c: *mut S,
    rsc: isize,
    csc: isize,
) {
    use std::any::TypeId;
    if TypeId::of::<S>() == TypeId::of::<f32>() {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a as *const f32, rsa, csa, b as *const f32, rsb, csb, 0.0,
            c as *mut f32, rsc, csc,
        );
    } else {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a as *const f64, rsa, csa, b as *const f64, rsb, csb, 0.0,
            c as *mut f64, rsc, csc,
        );
    }
}

/// `out(m×n) = a(m×k)·b(k×n)` with the column axis split into fixed chunks
/// dispatched to the worker pool. Each chunk owns a disjoint column band.
fn gemm_cols_parallel<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    if n <= GEMM_CHUNK_COLS {
        S::gemm(m, k, n, S::one(), a, false, b, false, S::zero(), out);
        return;
    }
    let nchunks = n.div_ceil(GEMM_CHUNK_COLS);
    let a_ptr = SendConst(a.as_ptr());
    let b_ptr = SendConst(b.as_ptr());
    let c_ptr = SendMut(out.as_mut_ptr());
    (0..nchunks).into_par_iter().for_each(|chunk| {
        let j0 = chunk * GEMM_CHUNK_COLS;
        let cols = GEMM_CHUNK_COLS.min(n - j0);
        unsafe {
            gemm_strided(
                m,
                k,
                cols,
                a_ptr.get(),
                k as isize,
                1,
                b_ptr.get().add(j0),
                n as isize,
                1,
                c_ptr.get().add(j0),
                n as isize,
                1,
            );
        }
    });
}

/// Forward convolution. Kernel layout `[out_c, in_c, kh, kw]`.
pub(crate) fn conv2d_forward<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
    bias: Option<&[S]>,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
) -> Tensor4<S> {
    let xs = x.shape();
    let ks = kernel.shape();
    let (oc, ic, kh, kw) = (ks.n, ks.c, ks.h, ks.w);
    debug_assert_eq!(ic, xs.c);
    let oh = conv_out_extent(xs.h, kh, pad_h, stride);
    let ow = conv_out_extent(xs.w, kw, pad_w, stride);
    let npix = oh * ow;
    let kdim = ic * kh * kw;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, oc, oh, ow));

    let out_batch = oc * npix;
    out.data_mut()
        .chunks_mut(out_batch)
        .enumerate()
        .for_each(|(n, out_n)| {
            with_scratch(kdim * npix, |col: &mut [S]| {
                im2col(x, n, kh, kw, pad_h, pad_w, stride, oh, ow, col);
                gemm_cols_parallel(oc, kdim, npix, kernel.data(), col, out_n);
            });
            if let Some(bias) = bias {
                for (row, &bv) in out_n.chunks_mut(npix).zip(bias.iter()) {
                    for v in row {
                        *v += bv;
                    }
                }
            }
        });
    out
}

pub(crate) struct ConvGrads<S> {
    pub dx: Option<Tensor4<S>>,
    pub dk: Option<Tensor4<S>>,
    pub db: Option<Vec<S>>,
}

/// Backward pass of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
    dy: &Tensor4<S>,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    need_dx: bool,
    need_dk: bool,
    need_db: bool,
) -> ConvGrads<S> {
    let xs = x.shape();
    let ks = kernel.shape();
    let ys = dy.shape();
    let (oc, ic, kh, kw) = (ks.n, ks.c, ks.h, ks.w);
    let (oh, ow) = (ys.h, ys.w);
    let npix = oh * ow;
    let kdim = ic * kh * kw;

    let db = need_db.then(|| {
        let mut db = vec![S::zero(); oc];
        for n in 0..xs.n {
            for (o, acc) in db.iter_mut().enumerate() {
                let mut s = S::zero();
                for &v in dy.plane(n, o) {
                    s += v;
                }
                *acc += s;
            }
        }
        db
    });

    let dk = need_dk.then(|| {
        let mut dk = Tensor4::zeros(ks);
        for n in 0..xs.n {
            with_scratch(kdim * npix, |col: &mut [S]| {
                im2col(x, n, kh, kw, pad_h, pad_w, stride, oh, ow, col);
                // dK(oc×kdim) += dy_n(oc×npix) · colᵀ(npix×kdim)
                let dy_n = &dy.data()[n * oc * npix..(n + 1) * oc * npix];
                S::gemm(
                    oc,
                    npix,
                    kdim,
                    S::one(),
                    dy_n,
                    false,
                    col,
                    true,
                    S::one(),
                    dk.data_mut(),
                );
            });
        }
        dk
    });

    let dx = need_dx.then(|| {
        if stride == 1 {
            // dX = conv(dy, K flipped and channel-swapped) at complementary padding.
            let mut kflip = Tensor4::zeros(Shape4::new(ic, oc, kh, kw));
            for o in 0..oc {
                for i in 0..ic {
                    for r in 0..kh {
                        for q in 0..kw {
                            kflip.set(i, o, kh - 1 - r, kw - 1 - q, kernel.at(o, i, r, q));
                        }
                    }
                }
            }
            conv2d_forward(dy, &kflip, None, 1, kh - 1 - pad_h, kw - 1 - pad_w)
        } else {
            let mut dx = Tensor4::zeros(xs);
            let mut dcol = vec![S::zero(); kdim * npix];
            let plane = xs.c * xs.h * xs.w;
            for n in 0..xs.n {
                let dy_n = &dy.data()[n * oc * npix..(n + 1) * oc * npix];
                // dcol(kdim×npix) = Kᵀ(kdim×oc) · dy_n(oc×npix)
                S::gemm(
                    kdim,
                    oc,
                    npix,
                    S::one(),
                    kernel.data(),
                    true,
                    dy_n,
                    false,
                    S::zero(),
                    &mut dcol,
                );
                col2im(
                    &dcol,
                    xs.c,
                    xs.h,
                    xs.w,
                    kh,
                    kw,
                    pad_h,
                    pad_w,
                    stride,
                    oh,
                    ow,
                    &mut dx.data_mut()[n * plane..(n + 1) * plane],
                );
            }
            dx
        }
    });

    ConvGrads { dx, dk, db }
}

/// Transposed convolution, stride 2, kernel 2×2, layout `[in_c, out_c, 2, 2]`.
/// Adjoint of the stride-2 valid convolution with the same kernel tensor.
pub(crate) fn conv2d_transpose_forward<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
) -> Tensor4<S> {
    let xs = x.shape();
    let ks = kernel.shape();
    let (cg, oc) = (ks.n, ks.c);
    debug_assert_eq!(cg, xs.c);
    let (oh, ow) = (2 * xs.h, 2 * xs.w);
    let npix = xs.h * xs.w;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, oc, oh, ow));
    // block(oc·4 × npix) = K(cg × oc·4)ᵀ · x_n(cg × npix); each of the four
    // kernel taps lands on its own (2i+di, 2j+dj) output lattice.
    let mut block = vec![S::zero(); oc * 4 * npix];
    for n in 0..xs.n {
        let x_n = &x.data()[n * cg * npix..(n + 1) * cg * npix];
        S::gemm(
            oc * 4,
            cg,
            npix,
            S::one(),
            kernel.data(),
            true,
            x_n,
            false,
            S::zero(),
            &mut block,
        );
        for o in 0..oc {
            for di in 0..2 {
                for dj in 0..2 {
                    let src = &block[((o * 2 + di) * 2 + dj) * npix..][..npix];
                    for i in 0..xs.h {
                        let dst_row = (n * oc + o) * oh * ow + (2 * i + di) * ow;
                        let dst = &mut out.data_mut()[dst_row..dst_row + ow];
                        for j in 0..xs.w {
                            dst[2 * j + dj] = src[i * xs.w + j];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_transpose_backward<S: Scalar>(
    x: &Tensor4<S>,
    kernel: &Tensor4<S>,
    dy: &Tensor4<S>,
    need_dx: bool,
    need_dk: bool,
) -> (Option<Tensor4<S>>, Option<Tensor4<S>>) {
    let xs = x.shape();
    let ks = kernel.shape();
    let (cg, oc) = (ks.n, ks.c);
    let npix = xs.h * xs.w;
    let (oh, ow) = (2 * xs.h, 2 * xs.w);

    let mut dblock = vec![S::zero(); oc * 4 * npix];
    let mut dx = need_dx.then(|| Tensor4::zeros(xs));
    let mut dk = need_dk.then(|| Tensor4::zeros(ks));
    for n in 0..xs.n {
        // Gather dy into the tap-major block layout used by the forward pass.
        for o in 0..oc {
            for di in 0..2 {
                for dj in 0..2 {
                    let dst = &mut dblock[((o * 2 + di) * 2 + dj) * npix..][..npix];
                    for i in 0..xs.h {
                        let src_row = (n * oc + o) * oh * ow + (2 * i + di) * ow;
                        let src = &dy.data()[src_row..src_row + ow];
                        for j in 0..xs.w {
                            dst[i * xs.w + j] = src[2 * j + dj];
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dx_n(cg×npix) = K(cg×oc·4) · dblock(oc·4×npix)
            S::gemm(
                cg,
                oc * 4,
                npix,
                S::one(),
                kernel.data(),
                false,
                &dblock,
                false,
                S::zero(),
                &mut dx.data_mut()[n * cg * npix..(n + 1) * cg * npix],
            );
        }
        if let Some(dk) = dk.as_mut() {
            // dK(cg×oc·4) += x_n(cg×npix) · dblockᵀ(npix×oc·4)
            let x_n = &x.data()[n * cg * npix..(n + 1) * cg * npix];
            S::gemm(
                cg,
                npix,
                oc * 4,
                S::one(),
                x_n,
                false,
                &dblock,
                true,
                S::one(),
                dk.data_mut(),
            );
        }
    }
    (dx, dk)
}

/// 2×2 max-pool with stride 2. Returns the pooled tensor and the flat input
/// index of each window maximum (first maximum in row-major window order).
pub(crate) fn maxpool2_forward<S: Scalar>(x: &Tensor4<S>) -> (Tensor4<S>, Vec<u32>) {
    let xs = x.shape();
    let (oh, ow) = (xs.h / 2, xs.w / 2);
    let mut out = Tensor4::zeros(Shape4::new(xs.n, xs.c, oh, ow));
    let mut argmax = vec![0u32; xs.n * xs.c * oh * ow];
    let hw = xs.h * xs.w;
    for n in 0..xs.n {
        for c in 0..xs.c {
            let plane = x.plane(n, c);
            let base = (n * xs.c + c) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = S::neg_infinity();
                    let mut best_idx = 0usize;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = (2 * oy + di) * xs.w + 2 * ox + dj;
                            let v = plane[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[base + oy * ow + ox] = best;
                    argmax[base + oy * ow + ox] = ((n * xs.c + c) * hw + best_idx) as u32;
                }
            }
        }
    }
    (out, argmax)
}

/// Depthwise 3×3 correlation with a fixed kernel, zero same-padding.
pub(crate) fn depthwise3x3<S: Scalar>(x: &Tensor4<S>, k: &[[f64; 3]; 3]) -> Tensor4<S> {
    let xs = x.shape();
    let mut out = Tensor4::zeros(xs);
    let k: Vec<S> = k
        .iter()
        .flat_map(|row| row.iter().map(|&v| S::from_f64(v)))
        .collect();
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = x.plane(n, c);
            let base = (n * xs.c + c) * xs.h * xs.w;
            for i in 0..xs.h {
                for j in 0..xs.w {
                    let mut acc = S::zero();
                    for (r, krow) in k.chunks(3).enumerate() {
                        let y = i as isize + r as isize - 1;
                        if y < 0 || y >= xs.h as isize {
                            continue;
                        }
                        let row = &src[y as usize * xs.w..(y as usize + 1) * xs.w];
                        for (q, &kv) in krow.iter().enumerate() {
                            let xx = j as isize + q as isize - 1;
                            if xx >= 0 && xx < xs.w as isize {
                                acc += kv * row[xx as usize];
                            }
                        }
                    }
                    out.data_mut()[base + i * xs.w + j] = acc;
                }
            }
        }
    }
    out
}
