//! Forward and adjoint kernels for the layer types the networks use.
//!
//! Every function here comes in a pair: the forward map and its exact
//! transpose (for linear maps) or vector-Jacobian product. Convolutions and
//! transposed convolutions share one im2col/col2im geometry.

use crate::tensor::{Real, Tensor};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Sampling geometry of a convolution from a `large` grid onto a `small` one.
///
/// For an ordinary convolution the input is the large grid. A transposed
/// convolution with the same geometry maps the small grid back onto the large.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub large_h: usize,
    pub large_w: usize,
    pub small_h: usize,
    pub small_w: usize,
}

impl ConvGeom {
    /// Geometry of a convolution over a `h×w` input with the given zero padding.
    pub fn conv(h: usize, w: usize, kernel: usize, stride: usize, pad: (usize, usize, usize, usize)) -> Option<Self> {
        let (top, left, bottom, right) = pad;
        let ph = h + top + bottom;
        let pw = w + left + right;
        if ph < kernel || pw < kernel {
            return None;
        }
        Some(Self {
            kernel,
            stride,
            pad_top: top,
            pad_left: left,
            large_h: h,
            large_w: w,
            small_h: (ph - kernel) / stride + 1,
            small_w: (pw - kernel) / stride + 1,
        })
    }

    pub fn rows(&self, channels: usize) -> usize {
        channels * self.kernel * self.kernel
    }

    pub fn cols(&self, batch: usize) -> usize {
        batch * self.small_h * self.small_w
    }
}

/// Output positions `o` in `0..n_out` whose source `o*stride + offset - pad` lies in `0..n_in`,
/// together with the source index of the first one.
fn valid_span(n_out: usize, n_in: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize, usize) {
    // smallest o with o*stride + offset >= pad
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    // largest o with o*stride + offset - pad <= n_in - 1
    let limit = n_in + pad;
    let hi = if offset >= limit {
        0
    } else {
        ((limit - offset - 1) / stride + 1).min(n_out)
    };
    if lo >= hi {
        return (0, 0, 0);
    }
    (lo, hi, lo * stride + offset - pad)
}

/// Unfolds `x` (on the large grid) into a `(C·k·k) × (N·Hs·Ws)` matrix.
pub fn im2col<T: Real>(x: &Tensor<T>, g: &ConvGeom) -> Vec<T> {
    debug_assert_eq!((x.height, x.width), (g.large_h, g.large_w));
    let k = g.kernel;
    let s = g.stride;
    let ncols = g.cols(x.batch);
    let mut out = vec![T::zero(); g.rows(x.channels) * ncols];
    let (hs, ws, lw) = (g.small_h, g.small_w, g.large_w);
    for c in 0..x.channels {
        for ky in 0..k {
            let (y0, y1, iy0) = valid_span(hs, g.large_h, s, ky, g.pad_top);
            for kx in 0..k {
                let (x0, x1, ix0) = valid_span(ws, lw, s, kx, g.pad_left);
                let row = (c * k + ky) * k + kx;
                let dst_row = &mut out[row * ncols..(row + 1) * ncols];
                if x0 == x1 {
                    continue;
                }
                let run = x1 - x0;
                for n in 0..x.batch {
                    let plane = x.plane(c, n);
                    let dst = &mut dst_row[n * hs * ws..(n + 1) * hs * ws];
                    for (j, oy) in (y0..y1).enumerate() {
                        let src_start = (iy0 + j * s) * lw + ix0;
                        let drow = &mut dst[oy * ws + x0..oy * ws + x1];
                        if s == 1 {
                            drow.copy_from_slice(&plane[src_start..src_start + run]);
                        } else {
                            let src = &plane[src_start..src_start + (run - 1) * s + 1];
                            for (d, v) in drow.iter_mut().zip(src.iter().step_by(s)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: folds a column matrix back onto the large grid, summing overlaps.
pub fn col2im<T: Real>(cols: &[T], channels: usize, batch: usize, g: &ConvGeom) -> Tensor<T> {
    let k = g.kernel;
    let s = g.stride;
    let ncols = g.cols(batch);
    debug_assert_eq!(cols.len(), g.rows(channels) * ncols);
    let mut out = Tensor::zeros(channels, batch, g.large_h, g.large_w);
    let (hs, ws, lw) = (g.small_h, g.small_w, g.large_w);
    for c in 0..channels {
        for ky in 0..k {
            let (y0, y1, iy0) = valid_span(hs, g.large_h, s, ky, g.pad_top);
            for kx in 0..k {
                let (x0, x1, ix0) = valid_span(ws, lw, s, kx, g.pad_left);
                if x0 == x1 {
                    continue;
                }
                let run = x1 - x0;
                let row = (c * k + ky) * k + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..batch {
                    let src = &src_row[n * hs * ws..(n + 1) * hs * ws];
                    let plane = out.plane_mut(c, n);
                    for (j, oy) in (y0..y1).enumerate() {
                        let dst_start = (iy0 + j * s) * lw + ix0;
                        let srow = &src[oy * ws + x0..oy * ws + x1];
                        if s == 1 {
                            for (d, &v) in plane[dst_start..dst_start + run].iter_mut().zip(srow) {
                                *d = *d + v;
                            }
                        } else {
                            let dst = &mut plane[dst_start..dst_start + (run - 1) * s + 1];
                            for (d, &v) in dst.iter_mut().step_by(s).zip(srow) {
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline(always)]
fn dot_unrolled<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ac, at) = a.split_at(a.len() / 8 * 8);
    let (bc, bt) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(8).zip(bc.chunks_exact(8)) {
        for j in 0..8 {
            acc[j] = acc[j] + x[j] * y[j];
        }
    }
    let tail = at.iter().zip(bt).fold(T::zero(), |t, (&x, &y)| t + x * y);
    acc.iter().copied().sum::<T>() + tail
}

#[inline(always)]
fn axpy<T: Real>(dst: &mut [T], alpha: T, src: &[T]) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = *d + alpha * v;
    }
}

// The kernels below are compiled twice: once for the baseline target and once
// with AVX2 enabled, chosen at run time. Their arithmetic order is fixed by
// the source, so both builds produce identical results.
macro_rules! simd_dispatch {
    ($(#[$m:meta])* pub fn $name:ident<$t:ident>($($arg:ident: $ty:ty),*) -> $ret:ty; $imp:ident) => {
        $(#[$m])*
        pub fn $name<$t: Real>($($arg: $ty),*) -> $ret {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2,fma")]
                fn wide<$t: Real>($($arg: $ty),*) -> $ret {
                    $imp($($arg),*)
                }
                if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                    // SAFETY: the required CPU features were detected above.
                    return unsafe { wide($($arg),*) };
                }
            }
            $imp($($arg),*)
        }
    };
}

/// Zero padding as `(top, left, bottom, right)`.
pub fn zero_pad<T: Real>(x: &Tensor<T>, pad: (usize, usize, usize, usize)) -> Tensor<T> {
    let (t, l, b, r) = pad;
    let (h, w) = (x.height, x.width);
    let ow = w + l + r;
    let mut out = Tensor::zeros(x.channels, x.batch, h + t + b, ow);
    for c in 0..x.channels {
        for n in 0..x.batch {
            let src = x.plane(c, n);
            let dst = out.plane_mut(c, n);
            for y in 0..h {
                dst[(y + t) * ow + l..(y + t) * ow + l + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
    }
    out
}

/// Adjoint of [`zero_pad`]: crops the padded border away.
pub fn zero_pad_backward<T: Real>(grad: &Tensor<T>, pad: (usize, usize, usize, usize)) -> Tensor<T> {
    let (t, l, b, r) = pad;
    let (h, w) = (grad.height - t - b, grad.width - l - r);
    let gw = grad.width;
    let mut out = Tensor::zeros(grad.channels, grad.batch, h, w);
    for c in 0..grad.channels {
        for n in 0..grad.batch {
            let src = grad.plane(c, n);
            let dst = out.plane_mut(c, n);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[(y + t) * gw + l..(y + t) * gw + l + w]);
            }
        }
    }
    out
}

/// Geometry of an unpadded stride-1 convolution seen through "wide" rows.
///
/// An output position `(oy, ox)` lives at `oy * in_w + ox`, so every tap is a
/// single contiguous shift of the input plane. Columns `ox >= out_w` of the
/// wide layout are scratch and must hold zeros in gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WideGeom {
    pub kernel: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl WideGeom {
    pub fn new(in_h: usize, in_w: usize, kernel: usize) -> Option<Self> {
        (in_h >= kernel && in_w >= kernel).then_some(Self {
            kernel,
            in_h,
            in_w,
            out_h: in_h - kernel + 1,
            out_w: in_w - kernel + 1,
        })
    }

    fn span(&self) -> usize {
        (self.out_h - 1) * self.in_w + self.out_w
    }

    fn offset(&self, ky: usize, kx: usize) -> usize {
        ky * self.in_w + kx
    }
}

simd_dispatch! {
    /// Stride-1 unpadded convolution without an unfolded matrix, for layers
    /// with very few output channels where packing dominates a matrix product.
    pub fn conv_direct<T>(x: &Tensor<T>, weight: &[T], cout: usize, g: &WideGeom) -> Tensor<T>; conv_direct_impl
}

simd_dispatch! {
    /// Weight gradient of [`conv_direct`], accumulated into `dweight`.
    pub fn conv_direct_weight_grad<T>(x: &Tensor<T>, grad: &Tensor<T>, g: &WideGeom, dweight: &mut [T]) -> (); conv_direct_weight_grad_impl
}

simd_dispatch! {
    /// Input gradient of [`conv_direct`].
    pub fn conv_direct_input_grad<T>(grad: &Tensor<T>, weight: &[T], cin: usize, g: &WideGeom) -> Tensor<T>; conv_direct_input_grad_impl
}

/// Copies a compact `out_h × out_w` plane into wide rows with zero scratch columns.
fn widen<T: Real>(plane: &[T], g: &WideGeom) -> Vec<T> {
    let mut wide = vec![T::zero(); g.span()];
    for oy in 0..g.out_h {
        wide[oy * g.in_w..oy * g.in_w + g.out_w].copy_from_slice(&plane[oy * g.out_w..(oy + 1) * g.out_w]);
    }
    wide
}

#[inline(always)]
fn conv_direct_impl<T: Real>(x: &Tensor<T>, weight: &[T], cout: usize, g: &WideGeom) -> Tensor<T> {
    let (cin, k, span) = (x.channels, g.kernel, g.span());
    let mut out = Tensor::zeros(cout, x.batch, g.out_h, g.out_w);
    let mut wide = vec![T::zero(); span];
    for o in 0..cout {
        for n in 0..x.batch {
            wide.fill(T::zero());
            for c in 0..cin {
                let src = x.plane(c, n);
                for ky in 0..k {
                    for kx in 0..k {
                        let off = g.offset(ky, kx);
                        axpy(
                            &mut wide,
                            weight[((o * cin + c) * k + ky) * k + kx],
                            &src[off..off + span],
                        );
                    }
                }
            }
            let dst = out.plane_mut(o, n);
            for oy in 0..g.out_h {
                dst[oy * g.out_w..(oy + 1) * g.out_w].copy_from_slice(&wide[oy * g.in_w..oy * g.in_w + g.out_w]);
            }
        }
    }
    out
}

#[inline(always)]
fn conv_direct_weight_grad_impl<T: Real>(x: &Tensor<T>, grad: &Tensor<T>, g: &WideGeom, dweight: &mut [T]) {
    let (cin, cout, k, span) = (x.channels, grad.channels, g.kernel, g.span());
    for o in 0..cout {
        for n in 0..x.batch {
            let gw = widen(grad.plane(o, n), g);
            for c in 0..cin {
                let src = x.plane(c, n);
                for ky in 0..k {
                    for kx in 0..k {
                        let off = g.offset(ky, kx);
                        let i = ((o * cin + c) * k + ky) * k + kx;
                        dweight[i] = dweight[i] + dot_unrolled(&gw, &src[off..off + span]);
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn conv_direct_input_grad_impl<T: Real>(grad: &Tensor<T>, weight: &[T], cin: usize, g: &WideGeom) -> Tensor<T> {
    let (cout, k, span) = (grad.channels, g.kernel, g.span());
    let mut out = Tensor::zeros(cin, grad.batch, g.in_h, g.in_w);
    for n in 0..grad.batch {
        let wides: Vec<Vec<T>> = (0..cout).map(|o| widen(grad.plane(o, n), g)).collect();
        for c in 0..cin {
            let dst = out.plane_mut(c, n);
            for (o, gw) in wides.iter().enumerate() {
                for ky in 0..k {
                    for kx in 0..k {
                        let off = g.offset(ky, kx);
                        axpy(&mut dst[off..off + span], weight[((o * cin + c) * k + ky) * k + kx], gw);
                    }
                }
            }
        }
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Mirror padding that does not repeat the edge pixel. Requires `pad < h, w`.
pub fn reflect_pad<T: Real>(x: &Tensor<T>, pad: usize) -> Tensor<T> {
    assert!(pad < x.height && pad < x.width, "reflection pad larger than input");
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(x.channels, x.batch, oh, ow);
    let cols: Vec<usize> = (0..ow).map(|ox| reflect(ox as isize - pad as isize, w)).collect();
    for c in 0..x.channels {
        for n in 0..x.batch {
            let src = x.plane(c, n);
            let dst = out.plane_mut(c, n);
            for oy in 0..oh {
                let iy = reflect(oy as isize - pad as isize, h);
                let srow = &src[iy * w..(iy + 1) * w];
                for (d, &ix) in dst[oy * ow..(oy + 1) * ow].iter_mut().zip(&cols) {
                    *d = srow[ix];
                }
            }
        }
    }
    out
}

/// Vector-Jacobian product of [`reflect_pad`].
pub fn reflect_pad_backward<T: Real>(grad: &Tensor<T>, pad: usize) -> Tensor<T> {
    let (oh, ow) = (grad.height, grad.width);
    let (h, w) = (oh - 2 * pad, ow - 2 * pad);
    let mut out = Tensor::zeros(grad.channels, grad.batch, h, w);
    let cols: Vec<usize> = (0..ow).map(|ox| reflect(ox as isize - pad as isize, w)).collect();
    for c in 0..grad.channels {
        for n in 0..grad.batch {
            let src = grad.plane(c, n);
            let dst = out.plane_mut(c, n);
            for oy in 0..oh {
                let iy = reflect(oy as isize - pad as isize, h);
                let drow = &mut dst[iy * w..(iy + 1) * w];
                for (&s, &ix) in src[oy * ow..(oy + 1) * ow].iter().zip(&cols) {
                    drow[ix] = drow[ix] + s;
                }
            }
        }
    }
    out
}

/// Per-plane normalization without affine parameters.
///
/// Returns the normalized tensor and one inverse standard deviation per plane
/// (ordered `channel * batch + item`).
pub fn instance_norm<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let p = x.plane_len();
    let pn = T::from_usize(p).unwrap();
    let eps = T::from_f64_lossy(INSTANCE_NORM_EPS);
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.channels * x.batch);
    for plane in out.data.chunks_mut(p) {
        let mean = plane.iter().copied().sum::<T>() / pn;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / pn;
        let is = (var + eps).sqrt().recip();
        for v in plane.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    (out, inv_std)
}

/// Vector-Jacobian product of [`instance_norm`] given its output and saved scales.
pub fn instance_norm_backward<T: Real>(normalized: &Tensor<T>, inv_std: &[T], grad: &Tensor<T>) -> Tensor<T> {
    let p = grad.plane_len();
    let pn = T::from_usize(p).unwrap();
    let mut out = grad.clone();
    for ((g, xh), &is) in out.data.chunks_mut(p).zip(normalized.data.chunks(p)).zip(inv_std) {
        let sum_g = g.iter().copied().sum::<T>();
        let sum_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        let scale = is / pn;
        for (gv, &xv) in g.iter_mut().zip(xh) {
            *gv = scale * (pn * *gv - sum_g - xv * sum_gx);
        }
    }
    out
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the saved activation output was not positive.
pub fn relu_backward_inplace<T: Real>(output: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn leaky_relu_inplace<T: Real>(x: &mut Tensor<T>) {
    let slope = T::from_f64_lossy(LEAKY_SLOPE);
    for v in &mut x.data {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

pub fn leaky_relu_backward_inplace<T: Real>(output: &Tensor<T>, grad: &mut Tensor<T>) {
    let slope = T::from_f64_lossy(LEAKY_SLOPE);
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o < T::zero() {
            *g = *g * slope;
        }
    }
}

pub fn tanh_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        *v = v.tanh();
    }
}

pub fn tanh_backward_inplace<T: Real>(output: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        *g = *g * (T::one() - o * o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(c: usize, n: usize, h: usize, w: usize) -> Tensor<f64> {
        let len = c * n * h * w;
        Tensor::from_vec(c, n, h, w, (0..len).map(|i| ((i * 37 % 11) as f64) - 5.0).collect())
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let x = seq(2, 3, 7, 6);
        for (k, s, pad) in [
            (3, 1, (1, 1, 1, 1)),
            (3, 2, (1, 1, 1, 1)),
            (4, 2, (1, 1, 1, 1)),
            (4, 1, (1, 1, 2, 2)),
        ] {
            let g = ConvGeom::conv(7, 6, k, s, pad).unwrap();
            let cols = im2col(&x, &g);
            let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
            let back = col2im(&y, 2, 3, &g);
            assert!((dot(&cols, &y) - dot(&x.data, &back.data)).abs() < 1e-9);
        }
    }

    #[test]
    fn direct_conv_matches_unfolded_product() {
        let x = seq(3, 2, 7, 6);
        let w: Vec<f64> = (0..2 * 3 * 16).map(|i| ((i * 5 % 9) as f64) - 4.0).collect();
        let pad = (1, 1, 2, 2);
        let g = ConvGeom::conv(7, 6, 4, 1, pad).unwrap();
        let cols = im2col(&x, &g);
        let ncols = g.cols(2);
        let mut want = vec![0.0; 2 * ncols];
        crate::tensor::matmul(2, g.rows(3), ncols, &w, false, &cols, false, &mut want, false);
        let xp = zero_pad(&x, pad);
        let wg = WideGeom::new(xp.height, xp.width, 4).unwrap();
        let got = conv_direct(&xp, &w, 2, &wg);
        assert_eq!((got.height, got.width), (g.small_h, g.small_w));
        for (a, b) in got.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
        let gy = Tensor::from_vec(
            2,
            2,
            g.small_h,
            g.small_w,
            (0..2 * ncols).map(|i| ((i * 3 % 5) as f64) - 2.0).collect(),
        );
        let mut dw = vec![0.0; w.len()];
        conv_direct_weight_grad(&xp, &gy, &wg, &mut dw);
        let mut want_dw = vec![0.0; w.len()];
        crate::tensor::matmul(2, ncols, g.rows(3), &gy.data, false, &cols, true, &mut want_dw, false);
        for (a, b) in dw.iter().zip(&want_dw) {
            assert!((a - b).abs() < 1e-9);
        }
        let dx = zero_pad_backward(&conv_direct_input_grad(&gy, &w, 3, &wg), pad);
        assert!((dot(&got.data, &gy.data) - dot(&x.data, &dx.data)).abs() < 1e-8);
    }

    #[test]
    fn reflect_pad_matches_definition_and_adjoint() {
        let x = Tensor::from_vec(1, 1, 3, 3, (1..=9).map(f64::from).collect());
        let p = reflect_pad(&x, 1);
        assert_eq!(p.height, 5);
        // first padded row mirrors input row 1
        assert_eq!(&p.data[0..5], &[5.0, 4.0, 5.0, 6.0, 5.0]);
        let g = seq(1, 1, 5, 5);
        let back = reflect_pad_backward(&g, 1);
        assert!((dot(&p.data, &g.data) - dot(&x.data, &back.data)).abs() < 1e-9);
    }

    #[test]
    fn instance_norm_zero_mean_unit_variance() {
        let x = seq(3, 2, 4, 4);
        let (y, _) = instance_norm(&x);
        for plane in y.data.chunks(16) {
            let m: f64 = plane.iter().sum::<f64>() / 16.0;
            let v: f64 = plane.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_geometry_sizes() {
        assert_eq!(ConvGeom::conv(128, 128, 4, 2, (1, 1, 1, 1)).unwrap().small_h, 64);
        assert_eq!(ConvGeom::conv(16, 16, 4, 1, (1, 1, 2, 2)).unwrap().small_h, 16);
        assert_eq!(ConvGeom::conv(32, 32, 3, 2, (1, 1, 1, 1)).unwrap().small_h, 16);
        assert!(ConvGeom::conv(1, 1, 4, 1, (0, 0, 0, 0)).is_none());
    }
}
