//! Operation recording and reverse-mode differentiation.

use rand::Rng;

use crate::error::{HorizonError, Result};

use super::kernels;
use super::{Scalar, Shape4, Tensor4};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

/// Zero-fill padding mode for [`Graph::conv2d`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Padding {
    /// Pad by (k−1)/2 so stride-1 convolutions preserve the spatial extent.
    Same,
    /// No padding.
    Valid,
}

/// Batch-norm execution mode.
pub enum BnMode<S> {
    /// Normalize with batch statistics (saved for running-stat updates).
    Train,
    /// Normalize with the supplied running statistics.
    Eval { mean: Vec<S>, var: Vec<S> },
}

const BN_EPS: f64 = 1e-5;

/// Fixed horizontal-gradient kernel; the vertical kernel is its transpose.
pub const SOBEL_GX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_GY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

enum Op<S> {
    Leaf,
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad_h: usize,
        pad_w: usize,
    },
    ConvT2d {
        x: Var,
        kernel: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<S>,
        invstd: Vec<S>,
        /// Biased batch variance (train mode only; drives running updates).
        batch_var: Option<Vec<S>>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulChannel {
        x: Var,
        alpha: Var,
    },
    Scale {
        x: Var,
        k: S,
    },
    AddConst {
        x: Var,
    },
    Ln {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: S,
        hi: S,
    },
    Sum {
        x: Var,
    },
    DivScalar {
        num: Var,
        den: Var,
    },
    Upsample2 {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<S>,
    },
    Sobel {
        x: Var,
    },
}

struct Node<S> {
    value: Tensor4<S>,
    grad: Option<Tensor4<S>>,
    /// True for leaves with `requires_grad` and for every node downstream of
    /// one; gradients are only computed and stored where this holds.
    needs_grad: bool,
    op: Op<S>,
}

/// Ordered op tape. Nodes are appended in forward order, so reverse creation
/// order is a valid reverse-topological order for the backward sweep.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    backward_done: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4<S> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor4<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    /// Batch statistics (mean, biased variance) saved by a train-mode
    /// batch-norm node.
    pub fn bn_batch_stats(&self, v: Var) -> Option<(&[S], &[S])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                mean,
                batch_var: Some(var),
                ..
            } => Some((mean.as_slice(), var.as_slice())),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor4<S>, op: Op<S>, inputs: &[Var], requires_grad: bool) -> Var {
        let needs_grad = requires_grad || inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor4<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, &[], requires_grad)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        if stride < 1 {
            return Err(HorizonError::Argument("conv2d stride must be >= 1".into()));
        }
        let xs = self.shape(x);
        let ks = self.shape(kernel);
        if ks.c != xs.c {
            return Err(HorizonError::Shape(format!(
                "conv2d: kernel expects {} input channels, tensor has {}",
                ks.c, xs.c
            )));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.c != ks.n || bs.n != 1 || bs.h != 1 || bs.w != 1 {
                return Err(HorizonError::Shape(format!(
                    "conv2d: bias shape {bs} does not match {} output channels",
                    ks.n
                )));
            }
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => ((ks.h - 1) / 2, (ks.w - 1) / 2),
            Padding::Valid => (0, 0),
        };
        if xs.h + 2 * pad_h < ks.h || xs.w + 2 * pad_w < ks.w {
            return Err(HorizonError::Shape(format!(
                "conv2d: kernel {}x{} larger than padded input {}x{}",
                ks.h,
                ks.w,
                xs.h + 2 * pad_h,
                xs.w + 2 * pad_w
            )));
        }
        let bias_slice = bias.map(|b| self.nodes[b.0].value.data().to_vec());
        let out = kernels::conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[kernel.0].value,
            bias_slice.as_deref(),
            stride,
            pad_h,
            pad_w,
        );
        let mut inputs = vec![x, kernel];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad_h,
                pad_w,
            },
            &inputs,
            false,
        ))
    }

    /// Stride-2 transposed convolution with a 2×2 kernel laid out
    /// `[in_c, out_c, 2, 2]`; doubles both spatial extents.
    pub fn conv2d_transpose(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ks = self.shape(kernel);
        if ks.h != 2 || ks.w != 2 {
            return Err(HorizonError::Argument(format!(
                "conv2d_transpose supports 2x2 kernels at stride 2, got {}x{}",
                ks.h, ks.w
            )));
        }
        if ks.n != xs.c {
            return Err(HorizonError::Shape(format!(
                "conv2d_transpose: kernel expects {} input channels, tensor has {}",
                ks.n, xs.c
            )));
        }
        let out =
            kernels::conv2d_transpose_forward(&self.nodes[x.0].value, &self.nodes[kernel.0].value);
        Ok(self.push(out, Op::ConvT2d { x, kernel }, &[x, kernel], false))
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.h % 2 != 0 || xs.w % 2 != 0 {
            return Err(HorizonError::Argument(format!(
                "maxpool2d requires even spatial extents, got {}x{}",
                xs.h, xs.w
            )));
        }
        let (out, argmax) = kernels::maxpool2_forward(&self.nodes[x.0].value);
        Ok(self.push(out, Op::MaxPool { x, argmax }, &[x], false))
    }

    pub fn batchnorm2d(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<S>) -> Result<Var> {
        let xs = self.shape(x);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(v);
            if s.c != xs.c || s.n != 1 || s.h != 1 || s.w != 1 {
                return Err(HorizonError::Shape(format!(
                    "batchnorm2d: {name} shape {s} does not match {} channels",
                    xs.c
                )));
            }
        }
        let m = xs.n * xs.h * xs.w;
        let eps = S::from_f64(BN_EPS);
        let (mean, var, batch_var) = match mode {
            BnMode::Train => {
                if m < 2 {
                    return Err(HorizonError::Argument(
                        "batchnorm2d train mode needs batch*spatial count >= 2 per channel".into(),
                    ));
                }
                let (mean, var) = batch_stats(&self.nodes[x.0].value);
                (mean.clone(), var.clone(), Some(var))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != xs.c || var.len() != xs.c {
                    return Err(HorizonError::Shape(
                        "batchnorm2d: running stats length mismatch".into(),
                    ));
                }
                (mean, var, None)
            }
        };
        let invstd: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let xt = &self.nodes[x.0].value;
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        let mut out = Tensor4::zeros(xs);
        for n in 0..xs.n {
            for c in 0..xs.c {
                let gc = g.data()[c];
                let bc = b.data()[c];
                let mc = mean[c];
                let ic = invstd[c];
                let src = xt.plane(n, c);
                let off = (n * xs.c + c) * xs.h * xs.w;
                let dst = &mut out.data_mut()[off..off + xs.h * xs.w];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = gc * (s - mc) * ic + bc;
                }
            }
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                batch_var,
            },
            &[x, gamma, beta],
            false,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v.max(S::zero()));
        self.push(out, Op::Relu { x }, &[x], false)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0]
            .value
            .map(|v| S::one() / (S::one() + (-v).exp()));
        self.push(out, Op::Sigmoid { x }, &[x], false)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(HorizonError::Shape(format!(
                "concat_channels: {sa} vs {sb} disagree outside the channel axis"
            )));
        }
        let shape = Shape4::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut out = Tensor4::zeros(shape);
        let hw = sa.h * sa.w;
        for n in 0..sa.n {
            for c in 0..sa.c {
                let off = (n * shape.c + c) * hw;
                out.data_mut()[off..off + hw].copy_from_slice(self.nodes[a.0].value.plane(n, c));
            }
            for c in 0..sb.c {
                let off = (n * shape.c + sa.c + c) * hw;
                out.data_mut()[off..off + hw].copy_from_slice(self.nodes[b.0].value.plane(n, c));
            }
        }
        Ok(self.push(out, Op::Concat { a, b }, &[a, b], false))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, name: &str) -> Result<()> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(HorizonError::Shape(format!("{name}: {sa} vs {sb}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b }, &[a, b], false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        Ok(self.push(out, Op::Sub { a, b }, &[a, b], false))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        Ok(self.push(out, Op::Mul { a, b }, &[a, b], false))
    }

    /// `x (n,C,h,w) ⊙ alpha (n,1,h,w)`, alpha broadcast across channels.
    pub fn mul_channel(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let xs = self.shape(x);
        let al = self.shape(alpha);
        if al.c != 1 || al.n != xs.n || al.h != xs.h || al.w != xs.w {
            return Err(HorizonError::Shape(format!(
                "mul_channel: alpha {al} must be (n,1,h,w) matching {xs}"
            )));
        }
        let hw = xs.h * xs.w;
        let mut out = Tensor4::zeros(xs);
        for n in 0..xs.n {
            let av = self.nodes[alpha.0].value.plane(n, 0);
            for c in 0..xs.c {
                let src = self.nodes[x.0].value.plane(n, c);
                let off = (n * xs.c + c) * hw;
                let dst = &mut out.data_mut()[off..off + hw];
                for ((d, &s), &a) in dst.iter_mut().zip(src).zip(av) {
                    *d = s * a;
                }
            }
        }
        Ok(self.push(out, Op::MulChannel { x, alpha }, &[x, alpha], false))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let ks = S::from_f64(k);
        let out = self.nodes[x.0].value.map(|v| v * ks);
        self.push(out, Op::Scale { x, k: ks }, &[x], false)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        let out = self.nodes[x.0].value.map(|v| v + cs);
        self.push(out, Op::AddConst { x }, &[x], false)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| v.ln());
        self.push(out, Op::Ln { x }, &[x], false)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (S::from_f64(lo), S::from_f64(hi));
        let out = self.nodes[x.0].value.map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { x, lo, hi }, &[x], false)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = S::zero();
        for &v in self.nodes[x.0].value.data() {
            acc += v;
        }
        self.push(Tensor4::scalar(acc), Op::Sum { x }, &[x], false)
    }

    /// Scalar ratio of two (1,1,1,1) tensors.
    pub fn div_scalar(&mut self, num: Var, den: Var) -> Result<Var> {
        for v in [num, den] {
            if self.shape(v) != Shape4::scalar() {
                return Err(HorizonError::Argument(
                    "div_scalar operands must be scalar tensors".into(),
                ));
            }
        }
        let q = self.nodes[num.0].value.scalar_value() / self.nodes[den.0].value.scalar_value();
        Ok(self.push(Tensor4::scalar(q), Op::DivScalar { num, den }, &[num, den], false))
    }

    /// Nearest-neighbor ×2 upsampling (non-learned).
    pub fn upsample2_nearest(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let shape = Shape4::new(xs.n, xs.c, 2 * xs.h, 2 * xs.w);
        let mut out = Tensor4::zeros(shape);
        for n in 0..xs.n {
            for c in 0..xs.c {
                let src = self.nodes[x.0].value.plane(n, c);
                let off = (n * xs.c + c) * shape.h * shape.w;
                for i in 0..xs.h {
                    for j in 0..xs.w {
                        let v = src[i * xs.w + j];
                        for di in 0..2 {
                            let row = off + (2 * i + di) * shape.w + 2 * j;
                            out.data_mut()[row] = v;
                            out.data_mut()[row + 1] = v;
                        }
                    }
                }
            }
        }
        self.push(out, Op::Upsample2 { x }, &[x], false)
    }

    /// Inverted dropout: kept activations are scaled by 1/(1−rate) so the
    /// expectation matches eval mode. Only inserted on the training path.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        let keep_scale = S::from_f64(1.0 / (1.0 - rate));
        let len = self.nodes[x.0].value.shape().len();
        let mask: Vec<S> = (0..len)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    S::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let shape = self.shape(x);
        let data: Vec<S> = self.nodes[x.0]
            .value
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Tensor4::new(shape, data).expect("dropout preserves shape");
        self.push(out, Op::Dropout { x, mask }, &[x], false)
    }

    /// Fixed-weight depthwise Sobel responses: output has 2C channels, the
    /// horizontal block first, then the vertical block. The kernels are
    /// constants, not graph leaves.
    pub fn sobel_features(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let gx = kernels::depthwise3x3(&self.nodes[x.0].value, &SOBEL_GX);
        let gy = kernels::depthwise3x3(&self.nodes[x.0].value, &SOBEL_GY);
        let shape = Shape4::new(xs.n, 2 * xs.c, xs.h, xs.w);
        let hw = xs.h * xs.w;
        let mut out = Tensor4::zeros(shape);
        for n in 0..xs.n {
            for c in 0..xs.c {
                let off = (n * shape.c + c) * hw;
                out.data_mut()[off..off + hw].copy_from_slice(gx.plane(n, c));
                let off = (n * shape.c + xs.c + c) * hw;
                out.data_mut()[off..off + hw].copy_from_slice(gy.plane(n, c));
            }
        }
        self.push(out, Op::Sobel { x }, &[x], false)
    }

    /// Reverse sweep from a scalar loss. Fills `grad` for every leaf with
    /// `requires_grad`; interior gradients are released as soon as they have
    /// been propagated. Errors on a non-scalar loss or a repeated call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(HorizonError::Invariant(
                "backward already ran on this graph".into(),
            ));
        }
        if self.shape(loss) != Shape4::scalar() {
            return Err(HorizonError::Argument(format!(
                "backward requires a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(Tensor4::scalar(S::one()));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue; // keep leaf gradients for retrieval
            }
            let dy = self.nodes[id].grad.take().expect("grad checked above");
            let contribs = self.op_backward(id, &dy);
            for (target, tensor) in contribs {
                self.accumulate(target, tensor);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&mut self, target: usize, tensor: Tensor4<S>) {
        match &mut self.nodes[target].grad {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(tensor.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(tensor),
        }
    }

    fn op_backward(&self, id: usize, dy: &Tensor4<S>) -> Vec<(usize, Tensor4<S>)> {
        let mut out: Vec<(usize, Tensor4<S>)> = Vec::new();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad_h,
                pad_w,
            } => {
                let need_db = bias.map(|b| self.needs(b)).unwrap_or(false);
                let grads = kernels::conv2d_backward(
                    &self.nodes[x.0].value,
                    &self.nodes[kernel.0].value,
                    dy,
                    *stride,
                    *pad_h,
                    *pad_w,
                    self.needs(*x),
                    self.needs(*kernel),
                    need_db,
                );
                if let Some(dx) = grads.dx {
                    out.push((x.0, dx));
                }
                if let Some(dk) = grads.dk {
                    out.push((kernel.0, dk));
                }
                if let (Some(db), Some(b)) = (grads.db, bias) {
                    let t = Tensor4::new(Shape4::new(1, db.len(), 1, 1), db)
                        .expect("bias grad shape");
                    out.push((b.0, t));
                }
            }
            Op::ConvT2d { x, kernel } => {
                let (dx, dk) = kernels::conv2d_transpose_backward(
                    &self.nodes[x.0].value,
                    &self.nodes[kernel.0].value,
                    dy,
                    self.needs(*x),
                    self.needs(*kernel),
                );
                if let Some(dx) = dx {
                    out.push((x.0, dx));
                }
                if let Some(dk) = dk {
                    out.push((kernel.0, dk));
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.needs(*x) {
                    let mut dx = Tensor4::zeros(self.shape(*x));
                    for (&src_idx, &g) in argmax.iter().zip(dy.data()) {
                        dx.data_mut()[src_idx as usize] += g;
                    }
                    out.push((x.0, dx));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                batch_var,
            } => {
                let xs = self.shape(*x);
                let xv = &self.nodes[x.0].value;
                let gv = &self.nodes[gamma.0].value;
                let m = S::from_f64((xs.n * xs.h * xs.w) as f64);
                let hw = xs.h * xs.w;

                // Per-channel reductions over (n, h, w).
                let mut sum_dy = vec![S::zero(); xs.c];
                let mut sum_dy_xhat = vec![S::zero(); xs.c];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let src = xv.plane(n, c);
                        let g = dy.plane(n, c);
                        let (mc, ic) = (mean[c], invstd[c]);
                        let mut s0 = S::zero();
                        let mut s1 = S::zero();
                        for (&xi, &gi) in src.iter().zip(g) {
                            s0 += gi;
                            s1 += gi * (xi - mc) * ic;
                        }
                        sum_dy[c] += s0;
                        sum_dy_xhat[c] += s1;
                    }
                }
                if self.needs(*gamma) {
                    let t = Tensor4::new(Shape4::new(1, xs.c, 1, 1), sum_dy_xhat.clone())
                        .expect("gamma grad shape");
                    out.push((gamma.0, t));
                }
                if self.needs(*beta) {
                    let t = Tensor4::new(Shape4::new(1, xs.c, 1, 1), sum_dy.clone())
                        .expect("beta grad shape");
                    out.push((beta.0, t));
                }
                if self.needs(*x) {
                    let mut dx = Tensor4::zeros(xs);
                    let train = batch_var.is_some();
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let (mc, ic, gc) = (mean[c], invstd[c], gv.data()[c]);
                            let mdy = sum_dy[c] / m;
                            let mdyx = sum_dy_xhat[c] / m;
                            let src = xv.plane(n, c);
                            let g = dy.plane(n, c);
                            let off = (n * xs.c + c) * hw;
                            let dst = &mut dx.data_mut()[off..off + hw];
                            if train {
                                for ((d, &xi), &gi) in dst.iter_mut().zip(src).zip(g) {
                                    let xhat = (xi - mc) * ic;
                                    *d = gc * ic * (gi - mdy - xhat * mdyx);
                                }
                            } else {
                                for (d, &gi) in dst.iter_mut().zip(g) {
                                    *d = gc * ic * gi;
                                }
                            }
                        }
                    }
                    out.push((x.0, dx));
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let xv = &self.nodes[x.0].value;
                    let dx = zip_map(dy, xv, |g, v| if v > S::zero() { g } else { S::zero() });
                    out.push((x.0, dx));
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(*x) {
                    let yv = &self.nodes[id].value;
                    let dx = zip_map(dy, yv, |g, y| g * y * (S::one() - y));
                    out.push((x.0, dx));
                }
            }
            Op::Concat { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let hw = sa.h * sa.w;
                if self.needs(*a) {
                    let mut da = Tensor4::zeros(sa);
                    for n in 0..sa.n {
                        for c in 0..sa.c {
                            let off = (n * sa.c + c) * hw;
                            da.data_mut()[off..off + hw].copy_from_slice(dy.plane(n, c));
                        }
                    }
                    out.push((a.0, da));
                }
                if self.needs(*b) {
                    let mut db = Tensor4::zeros(sb);
                    for n in 0..sb.n {
                        for c in 0..sb.c {
                            let off = (n * sb.c + c) * hw;
                            db.data_mut()[off..off + hw].copy_from_slice(dy.plane(n, sa.c + c));
                        }
                    }
                    out.push((b.0, db));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    out.push((a.0, dy.clone()));
                }
                if self.needs(*b) {
                    out.push((b.0, dy.clone()));
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    out.push((a.0, dy.clone()));
                }
                if self.needs(*b) {
                    out.push((b.0, dy.map(|v| -v)));
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    out.push((a.0, zip_map(dy, &self.nodes[b.0].value, |g, v| g * v)));
                }
                if self.needs(*b) {
                    out.push((b.0, zip_map(dy, &self.nodes[a.0].value, |g, v| g * v)));
                }
            }
            Op::MulChannel { x, alpha } => {
                let xs = self.shape(*x);
                let hw = xs.h * xs.w;
                if self.needs(*x) {
                    let mut dx = Tensor4::zeros(xs);
                    for n in 0..xs.n {
                        let av = self.nodes[alpha.0].value.plane(n, 0);
                        for c in 0..xs.c {
                            let g = dy.plane(n, c);
                            let off = (n * xs.c + c) * hw;
                            let dst = &mut dx.data_mut()[off..off + hw];
                            for ((d, &gi), &ai) in dst.iter_mut().zip(g).zip(av) {
                                *d = gi * ai;
                            }
                        }
                    }
                    out.push((x.0, dx));
                }
                if self.needs(*alpha) {
                    let mut da = Tensor4::zeros(self.shape(*alpha));
                    for n in 0..xs.n {
                        let off = n * hw;
                        for c in 0..xs.c {
                            let g = dy.plane(n, c);
                            let src = self.nodes[x.0].value.plane(n, c);
                            let dst = &mut da.data_mut()[off..off + hw];
                            for ((d, &gi), &xi) in dst.iter_mut().zip(g).zip(src) {
                                *d += gi * xi;
                            }
                        }
                    }
                    out.push((alpha.0, da));
                }
            }
            Op::Scale { x, k } => {
                if self.needs(*x) {
                    let k = *k;
                    out.push((x.0, dy.map(|v| v * k)));
                }
            }
            Op::AddConst { x } => {
                if self.needs(*x) {
                    out.push((x.0, dy.clone()));
                }
            }
            Op::Ln { x } => {
                if self.needs(*x) {
                    out.push((x.0, zip_map(dy, &self.nodes[x.0].value, |g, v| g / v)));
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.needs(*x) {
                    let (lo, hi) = (*lo, *hi);
                    let dx = zip_map(dy, &self.nodes[x.0].value, |g, v| {
                        if v > lo && v < hi {
                            g
                        } else {
                            S::zero()
                        }
                    });
                    out.push((x.0, dx));
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let g = dy.scalar_value();
                    out.push((x.0, Tensor4::full(self.shape(*x), g)));
                }
            }
            Op::DivScalar { num, den } => {
                let g = dy.scalar_value();
                let nv = self.nodes[num.0].value.scalar_value();
                let dv = self.nodes[den.0].value.scalar_value();
                if self.needs(*num) {
                    out.push((num.0, Tensor4::scalar(g / dv)));
                }
                if self.needs(*den) {
                    out.push((den.0, Tensor4::scalar(-g * nv / (dv * dv))));
                }
            }
            Op::Upsample2 { x } => {
                if self.needs(*x) {
                    let xs = self.shape(*x);
                    let mut dx = Tensor4::zeros(xs);
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let g = dy.plane(n, c);
                            let off = (n * xs.c + c) * xs.h * xs.w;
                            let dst = &mut dx.data_mut()[off..off + xs.h * xs.w];
                            for i in 0..xs.h {
                                for j in 0..xs.w {
                                    let mut acc = S::zero();
                                    for di in 0..2 {
                                        for dj in 0..2 {
                                            acc += g[(2 * i + di) * 2 * xs.w + 2 * j + dj];
                                        }
                                    }
                                    dst[i * xs.w + j] = acc;
                                }
                            }
                        }
                    }
                    out.push((x.0, dx));
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs(*x) {
                    let shape = self.shape(*x);
                    let data: Vec<S> = dy
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&g, &m)| g * m)
                        .collect();
                    out.push((x.0, Tensor4::new(shape, data).expect("dropout grad shape")));
                }
            }
            Op::Sobel { x } => {
                if self.needs(*x) {
                    let xs = self.shape(*x);
                    let hw = xs.h * xs.w;
                    // Split dy into the Gx / Gy channel blocks.
                    let mut dgx = Tensor4::zeros(xs);
                    let mut dgy = Tensor4::zeros(xs);
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let off = (n * xs.c + c) * hw;
                            dgx.data_mut()[off..off + hw].copy_from_slice(dy.plane(n, c));
                            dgy.data_mut()[off..off + hw].copy_from_slice(dy.plane(n, xs.c + c));
                        }
                    }
                    // Adjoint of correlation is correlation with the 180°
                    // rotation (equal to −K for these odd kernels).
                    let rot180 = |k: &[[f64; 3]; 3]| {
                        let mut r = [[0.0; 3]; 3];
                        for i in 0..3 {
                            for j in 0..3 {
                                r[i][j] = k[2 - i][2 - j];
                            }
                        }
                        r
                    };
                    let a = kernels::depthwise3x3(&dgx, &rot180(&SOBEL_GX));
                    let b = kernels::depthwise3x3(&dgy, &rot180(&SOBEL_GY));
                    out.push((x.0, zip_map(&a, &b, |p, q| p + q)));
                }
            }
        }
        out
    }
}

fn zip_map<S: Scalar>(a: &Tensor4<S>, b: &Tensor4<S>, f: impl Fn(S, S) -> S) -> Tensor4<S> {
    debug_assert_eq!(a.shape(), b.shape());
    let data: Vec<S> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor4::new(a.shape(), data).expect("zip_map preserves shape")
}

/// Per-channel mean and biased variance over (batch, rows, cols).
fn batch_stats<S: Scalar>(x: &Tensor4<S>) -> (Vec<S>, Vec<S>) {
    let s = x.shape();
    let m = S::from_f64((s.n * s.h * s.w) as f64);
    let mut mean = vec![S::zero(); s.c];
    let mut var = vec![S::zero(); s.c];
    for c in 0..s.c {
        let mut acc = S::zero();
        for n in 0..s.n {
            for &v in x.plane(n, c) {
                acc += v;
            }
        }
        mean[c] = acc / m;
    }
    for c in 0..s.c {
        let mu = mean[c];
        let mut acc = S::zero();
        for n in 0..s.n {
            for &v in x.plane(n, c) {
                let d = v - mu;
                acc += d * d;
            }
        }
        var[c] = acc / m;
    }
    (mean, var)
}
