//! Minimal reverse-mode autodiff engine.
//!
//! [`Tensor4`] is a dense 4-axis array (batch, channel, row, col). [`Graph`]
//! records forward operations on tensors and replays them in reverse to
//! produce gradients for every leaf marked `requires_grad`. The op set is
//! exactly what the segmentation networks need: convolution, transposed
//! convolution, max-pooling, batch normalization, activations, channel
//! concatenation, and the elementwise/scalar pieces the losses are built from.
//!
//! Training runs in `f32`; gradient-check oracles instantiate the same code
//! in `f64` through the [`Scalar`] trait.

mod graph;
mod kernels;

pub mod finite_diff;


pub use graph::{BnMode, Graph, Padding, Var};

use std::fmt;

use num_traits::Float;

use crate::error::{HorizonError, Result};

/// Element type the engine is generic over. `f32` for training, `f64` for
/// finite-difference oracles.
pub trait Scalar:
    Float + num_traits::NumAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c (m×n) += alpha * op(a) · op(b)`, all buffers row-major contiguous.
    /// `beta` scales the existing contents of `c`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: lhs length");
                assert_eq!(b.len(), k * n, "gemm: rhs length");
                assert_eq!(c.len(), m * n, "gemm: out length");
                let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Extents of a [`Tensor4`]: (batch, channels, rows, cols).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scalar() -> Self {
        Shape4::new(1, 1, 1, 1)
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-axis array, row-major in (n, c, h, w) order.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor4<S> {
    shape: Shape4,
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn new(shape: Shape4, data: Vec<S>) -> Result<Self> {
        if shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1 {
            return Err(HorizonError::Shape(format!(
                "all four extents must be >= 1, got {shape}"
            )));
        }
        if data.len() != shape.len() {
            return Err(HorizonError::Shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Self {
        Tensor4 {
            shape,
            data: vec![S::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape4, v: S) -> Self {
        Tensor4 {
            shape,
            data: vec![v; shape.len()],
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor4 {
            shape: Shape4::scalar(),
            data: vec![v],
        }
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        let s = &self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: S) {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w] = v;
    }

    /// Contiguous (h·w) plane of one (batch, channel) pair.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let hw = self.shape.h * self.shape.w;
        let off = (n * self.shape.c + c) * hw;
        &self.data[off..off + hw]
    }

    /// The single element of a (1,1,1,1) tensor.
    pub fn scalar_value(&self) -> S {
        assert_eq!(self.shape.len(), 1, "scalar_value on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts element type; used to lift `f32` weights into `f64` oracles.
    pub fn cast<T: Scalar>(&self) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }
}
