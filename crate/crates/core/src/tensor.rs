//! Dense activation tensors and the low-level kernels the networks are built from.
//!
//! Activations are stored channel-major as `(channels, batch, height, width)`.
//! With that layout a convolution over the whole batch is a single GEMM between
//! the weight matrix and an im2col matrix whose columns run over `(batch, y, x)`,
//! and every `(channel, image)` plane is contiguous for instance normalization.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the networks.
///
/// Training runs in `f32`; gradient checks run the same code in `f64`.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static {
    /// `c = a · b (+ c if accumulate)` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
        accumulate: bool,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the slice lengths were checked above against the
                // dense extents described by the strides passed by `matmul`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
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

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Row-major `c[m×n] = op(a)[m×k] · op(b)[k×n]`, optionally accumulating.
///
/// `a_t` means `a` is stored as `k×m`; `b_t` means `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    T::gemm_strided(m, k, n, a, rsa, csa, b, rsb, csb, c, accumulate);
}

/// A batch of feature maps in `(channels, batch, height, width)` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    pub fn filled(channels: usize, batch: usize, height: usize, width: usize, value: T) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![value; channels * batch * height * width],
        }
    }

    pub fn from_vec(channels: usize, batch: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * batch * height * width, "tensor size");
        Self {
            channels,
            batch,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.batch, self.height, self.width]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, channel: usize, item: usize) -> &[T] {
        let p = self.plane_len();
        let start = (channel * self.batch + item) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, channel: usize, item: usize) -> &mut [T] {
        let p = self.plane_len();
        let start = (channel * self.batch + item) * p;
        &mut self.data[start..start + p]
    }

    /// Copies out one batch item as a single-item tensor.
    pub fn item(&self, item: usize) -> Self {
        let mut out = Self::zeros(self.channels, 1, self.height, self.width);
        for c in 0..self.channels {
            out.plane_mut(c, 0).copy_from_slice(self.plane(c, item));
        }
        out
    }

    /// Concatenates single- or multi-item tensors along the batch axis.
    pub fn concat_batch(parts: &[Self]) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let (c, h, w) = (parts[0].channels, parts[0].height, parts[0].width);
        let batch = parts.iter().map(|p| p.batch).sum();
        let mut out = Self::zeros(c, batch, h, w);
        let mut offset = 0;
        for part in parts {
            assert_eq!((part.channels, part.height, part.width), (c, h, w));
            for ch in 0..c {
                for i in 0..part.batch {
                    out.plane_mut(ch, offset + i).copy_from_slice(part.plane(ch, i));
                }
            }
            offset += part.batch;
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(mut self, s: T) -> Self {
        for v in &mut self.data {
            *v = *v * s;
        }
        self
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "shape mismatch in add");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}
