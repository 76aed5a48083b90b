//! A straight-line layer program with residual skips, plus reverse-mode
//! differentiation over it.
//!
//! Both architectures are feed-forward stacks where the only branching is an
//! additive skip around each residual block, so a flat op list with a skip
//! stack is enough to describe them.

use crate::kernels::{self, ConvGeom, WideGeom};
use crate::networks::params::ParamSet;
use crate::tensor::{matmul, Real, Tensor};

/// Zero padding as `(top, left, bottom, right)`.
pub type Padding = (usize, usize, usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    ReflectPad(usize),
    Conv {
        weight: usize,
        bias: Option<usize>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: Padding,
    },
    /// Adjoint of a `kernel`/`stride`/`pad` convolution; output is `stride×` the input.
    ConvTranspose {
        weight: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    InstanceNorm,
    Relu,
    LeakyRelu,
    Tanh,
    SkipSave,
    SkipAdd,
}

impl Op {
    fn has_params(&self) -> bool {
        matches!(self, Op::Conv { .. } | Op::ConvTranspose { .. })
    }
}

enum Cache<T> {
    Nothing,
    ReflectPad(usize),
    Conv {
        cols: Vec<T>,
        geom: ConvGeom,
        batch: usize,
    },
    ConvDirect {
        input: Tensor<T>,
        geom: WideGeom,
        pad: Padding,
    },
    ConvTranspose {
        input: Tensor<T>,
        geom: ConvGeom,
    },
    Norm {
        output: Tensor<T>,
        inv_std: Vec<T>,
    },
    Activation(Tensor<T>),
}

/// Saved intermediate values from a forward pass, consumed by the backward pass.
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
}

fn transpose_geom(op: &Op, h: usize, w: usize) -> ConvGeom {
    let Op::ConvTranspose {
        kernel, stride, pad, ..
    } = *op
    else {
        unreachable!()
    };
    let g =
        ConvGeom::conv(h * stride, w * stride, kernel, stride, (pad, pad, pad, pad)).expect("transposed conv geometry");
    debug_assert_eq!((g.small_h, g.small_w), (h, w));
    g
}

/// Output widths up to this use the direct convolution kernels.
const DIRECT_CONV_MAX_OUT: usize = 4;

/// Spatial output size of the program for an `h×w` input, or `None` if some layer
/// would see an input too small for its kernel or padding.
pub(crate) fn output_size(ops: &[Op], mut h: usize, mut w: usize) -> Option<(usize, usize)> {
    for op in ops {
        match *op {
            Op::ReflectPad(p) => {
                if p >= h || p >= w {
                    return None;
                }
                h += 2 * p;
                w += 2 * p;
            }
            Op::Conv {
                kernel, stride, pad, ..
            } => {
                let g = ConvGeom::conv(h, w, kernel, stride, pad)?;
                if g.small_h == 0 || g.small_w == 0 {
                    return None;
                }
                h = g.small_h;
                w = g.small_w;
            }
            Op::ConvTranspose { stride, .. } => {
                h *= stride;
                w *= stride;
            }
            _ => {}
        }
    }
    Some((h, w))
}

pub(crate) fn forward<T: Real>(
    ops: &[Op],
    params: &ParamSet<T>,
    input: &Tensor<T>,
    record: bool,
) -> (Tensor<T>, Option<Trace<T>>) {
    let mut x = input.clone();
    let mut caches = Vec::with_capacity(if record { ops.len() } else { 0 });
    let mut skips: Vec<Tensor<T>> = Vec::new();
    for op in ops {
        let cache = match *op {
            Op::ReflectPad(p) => {
                x = kernels::reflect_pad(&x, p);
                Cache::ReflectPad(p)
            }
            Op::Conv {
                weight,
                bias,
                cin,
                cout,
                kernel,
                stride,
                pad,
            } => {
                debug_assert_eq!(x.channels, cin);
                let geom = ConvGeom::conv(x.height, x.width, kernel, stride, pad).expect("conv geometry");
                if cout <= DIRECT_CONV_MAX_OUT && stride == 1 {
                    let padded = if pad == (0, 0, 0, 0) {
                        x
                    } else {
                        kernels::zero_pad(&x, pad)
                    };
                    let wide = WideGeom::new(padded.height, padded.width, kernel).expect("conv geometry");
                    let mut out = kernels::conv_direct(&padded, &params.get(weight).data, cout, &wide);
                    if let Some(b) = bias {
                        let per_channel = out.batch * out.height * out.width;
                        for (plane, &bv) in out.data.chunks_mut(per_channel).zip(&params.get(b).data) {
                            for v in plane {
                                *v = *v + bv;
                            }
                        }
                    }
                    x = out;
                    if record {
                        caches.push(Cache::ConvDirect {
                            input: padded,
                            geom: wide,
                            pad,
                        });
                    }
                    continue;
                }
                let cols = kernels::im2col(&x, &geom);
                let ncols = geom.cols(x.batch);
                let mut out = vec![T::zero(); cout * ncols];
                matmul(
                    cout,
                    geom.rows(cin),
                    ncols,
                    &params.get(weight).data,
                    false,
                    &cols,
                    false,
                    &mut out,
                    false,
                );
                if let Some(b) = bias {
                    for (row, &bv) in out.chunks_mut(ncols).zip(&params.get(b).data) {
                        for v in row {
                            *v = *v + bv;
                        }
                    }
                }
                let batch = x.batch;
                x = Tensor::from_vec(cout, batch, geom.small_h, geom.small_w, out);
                if record {
                    Cache::Conv { cols, geom, batch }
                } else {
                    Cache::Nothing
                }
            }
            Op::ConvTranspose {
                weight,
                cin,
                cout,
                kernel,
                ..
            } => {
                debug_assert_eq!(x.channels, cin);
                let geom = transpose_geom(op, x.height, x.width);
                let ncols = geom.cols(x.batch);
                let mut cols = vec![T::zero(); cout * kernel * kernel * ncols];
                matmul(
                    cout * kernel * kernel,
                    cin,
                    ncols,
                    &params.get(weight).data,
                    true,
                    &x.data,
                    false,
                    &mut cols,
                    false,
                );
                let out = kernels::col2im(&cols, cout, x.batch, &geom);
                let prev = std::mem::replace(&mut x, out);
                if record {
                    Cache::ConvTranspose { input: prev, geom }
                } else {
                    Cache::Nothing
                }
            }
            Op::InstanceNorm => {
                let (out, inv_std) = kernels::instance_norm(&x);
                x = out;
                if record {
                    Cache::Norm {
                        output: x.clone(),
                        inv_std,
                    }
                } else {
                    Cache::Nothing
                }
            }
            Op::Relu | Op::LeakyRelu | Op::Tanh => {
                match op {
                    Op::Relu => kernels::relu_inplace(&mut x),
                    Op::LeakyRelu => kernels::leaky_relu_inplace(&mut x),
                    _ => kernels::tanh_inplace(&mut x),
                }
                if record {
                    Cache::Activation(x.clone())
                } else {
                    Cache::Nothing
                }
            }
            Op::SkipSave => {
                skips.push(x.clone());
                Cache::Nothing
            }
            Op::SkipAdd => {
                let skip = skips.pop().expect("unbalanced skip");
                x.add_assign(&skip);
                Cache::Nothing
            }
        };
        if record {
            caches.push(cache);
        }
    }
    (x, record.then_some(Trace { caches }))
}

/// Back-propagates `grad` through a recorded forward pass.
///
/// Parameter gradients are accumulated into `param_grads` when given. The
/// gradient with respect to the program input is returned only when
/// `need_input_grad` is set; otherwise the pass stops at the first parameterized
/// layer.
pub(crate) fn backward<T: Real>(
    ops: &[Op],
    params: &ParamSet<T>,
    trace: Trace<T>,
    grad: Tensor<T>,
    mut param_grads: Option<&mut ParamSet<T>>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    if param_grads.is_none() && !need_input_grad {
        return None;
    }
    let first_param_op = ops.iter().position(Op::has_params).unwrap_or(0);
    let mut g = grad;
    let mut skip_grads: Vec<Tensor<T>> = Vec::new();
    for (i, (op, cache)) in ops.iter().zip(trace.caches).enumerate().rev() {
        let stop_after = i == first_param_op && !need_input_grad;
        match (op, cache) {
            (Op::ReflectPad(_), Cache::ReflectPad(p)) => {
                g = kernels::reflect_pad_backward(&g, p);
            }
            (
                &Op::Conv {
                    weight,
                    bias,
                    cin,
                    cout,
                    ..
                },
                Cache::Conv { cols, geom, batch },
            ) => {
                let ncols = geom.cols(batch);
                let rows = geom.rows(cin);
                if let Some(pg) = param_grads.as_deref_mut() {
                    matmul(
                        cout,
                        ncols,
                        rows,
                        &g.data,
                        false,
                        &cols,
                        true,
                        &mut pg.get_mut(weight).data,
                        true,
                    );
                    if let Some(b) = bias {
                        for (gb, row) in pg.get_mut(b).data.iter_mut().zip(g.data.chunks(ncols)) {
                            *gb = *gb + row.iter().copied().sum::<T>();
                        }
                    }
                }
                if stop_after {
                    return None;
                }
                drop(cols);
                let mut dcols = vec![T::zero(); rows * ncols];
                matmul(
                    rows,
                    cout,
                    ncols,
                    &params.get(weight).data,
                    true,
                    &g.data,
                    false,
                    &mut dcols,
                    false,
                );
                g = kernels::col2im(&dcols, cin, batch, &geom);
            }
            (&Op::Conv { weight, bias, cin, .. }, Cache::ConvDirect { input, geom, pad }) => {
                if let Some(pg) = param_grads.as_deref_mut() {
                    kernels::conv_direct_weight_grad(&input, &g, &geom, &mut pg.get_mut(weight).data);
                    if let Some(b) = bias {
                        let per_channel = g.batch * g.height * g.width;
                        for (gb, plane) in pg.get_mut(b).data.iter_mut().zip(g.data.chunks(per_channel)) {
                            *gb = *gb + plane.iter().copied().sum::<T>();
                        }
                    }
                }
                if stop_after {
                    return None;
                }
                g = kernels::conv_direct_input_grad(&g, &params.get(weight).data, cin, &geom);
                if pad != (0, 0, 0, 0) {
                    g = kernels::zero_pad_backward(&g, pad);
                }
            }
            (
                &Op::ConvTranspose {
                    weight,
                    cin,
                    cout,
                    kernel,
                    ..
                },
                Cache::ConvTranspose { input, geom },
            ) => {
                let gcols = kernels::im2col(&g, &geom);
                let ncols = geom.cols(input.batch);
                let rows = cout * kernel * kernel;
                if let Some(pg) = param_grads.as_deref_mut() {
                    matmul(
                        cin,
                        ncols,
                        rows,
                        &input.data,
                        false,
                        &gcols,
                        true,
                        &mut pg.get_mut(weight).data,
                        true,
                    );
                }
                if stop_after {
                    return None;
                }
                let mut dx = vec![T::zero(); cin * ncols];
                matmul(
                    cin,
                    rows,
                    ncols,
                    &params.get(weight).data,
                    false,
                    &gcols,
                    false,
                    &mut dx,
                    false,
                );
                g = Tensor::from_vec(cin, input.batch, input.height, input.width, dx);
            }
            (Op::InstanceNorm, Cache::Norm { output, inv_std }) => {
                g = kernels::instance_norm_backward(&output, &inv_std, &g);
            }
            (Op::Relu, Cache::Activation(out)) => kernels::relu_backward_inplace(&out, &mut g),
            (Op::LeakyRelu, Cache::Activation(out)) => kernels::leaky_relu_backward_inplace(&out, &mut g),
            (Op::Tanh, Cache::Activation(out)) => kernels::tanh_backward_inplace(&out, &mut g),
            (Op::SkipAdd, Cache::Nothing) => skip_grads.push(g.clone()),
            (Op::SkipSave, Cache::Nothing) => {
                let sg = skip_grads.pop().expect("unbalanced skip");
                g.add_assign(&sg);
            }
            _ => unreachable!("trace does not match program"),
        }
    }
    need_input_grad.then_some(g)
}
