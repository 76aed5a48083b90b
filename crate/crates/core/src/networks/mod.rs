//! Generator and PatchGAN discriminator architectures and the hop recurrence.
//!
//! Generator layer stack for base width `b` and `R` residual blocks:
//!
//! ```text
//! stem     reflect-pad 3, conv 7x7/1 -> b, instance norm, ReLU
//! down.0   conv 3x3/2 (zero pad 1) -> 2b, instance norm, ReLU
//! down.1   conv 3x3/2 (zero pad 1) -> 4b, instance norm, ReLU
//! res.i    [reflect-pad 1, conv 3x3 -> 4b, IN, ReLU, reflect-pad 1, conv 3x3, IN] + skip
//! up.0     transposed conv 3x3/2 -> 2b, instance norm, ReLU
//! up.1     transposed conv 3x3/2 -> b, instance norm, ReLU
//! head     reflect-pad 3, conv 7x7/1 -> 3 (+bias), tanh
//! ```
//!
//! Discriminator: `n` blocks of conv 4x4 -> instance norm -> LeakyReLU(0.2) with
//! widths `b, 2b, 4b, ...`; the first three blocks have stride 2 (zero pad 1),
//! later blocks stride 1 with (1, 2) "same" padding, then a 4x4 stride-1
//! projection to one channel with a bias and no activation. The four-block
//! configuration maps a 128x128 input to a 16x16 patch map.
//!
//! Convolutions followed by instance norm carry no bias, since the
//! normalization removes it.

mod graph;
pub mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domains::image::{images_to_tensor, tensor_to_images, Image};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use graph::Trace;
use graph::{Op, Padding};
pub use params::{ParamSet, ParamTensor};

pub const INIT_STD: f64 = 0.02;

const STRIDE2_PAD: Padding = (1, 1, 1, 1);
const SAME4_PAD: Padding = (1, 1, 2, 2);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub base_width: usize,
    pub n_residual_blocks: usize,
    pub input_size: usize,
}

impl GeneratorSpec {
    /// Published configuration: c7s1-64, d128, d256, R256 x 12, u128, u64, c7s1-3 on 128x128.
    pub const fn paper() -> Self {
        Self {
            base_width: 64,
            n_residual_blocks: 12,
            input_size: 128,
        }
    }

    /// Reduced profile used for tests and toy training runs.
    pub const fn tiny() -> Self {
        Self {
            base_width: 16,
            n_residual_blocks: 2,
            input_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("generator base_width must be >= 1".into()));
        }
        if self.n_residual_blocks == 0 {
            return Err(Error::Config("generator n_residual_blocks must be >= 1".into()));
        }
        // reflection pad 3 at full size and pad 1 at quarter size
        if self.input_size < 8 || !self.input_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "generator input_size {} must be a multiple of 4 and at least 8",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Channel width of the residual trunk.
    pub fn trunk_width(&self) -> usize {
        4 * self.base_width
    }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub base_width: usize,
    pub n_layers: usize,
}

impl DiscriminatorSpec {
    /// Published configuration: C64, C128, C256, C512.
    pub const fn paper() -> Self {
        Self {
            base_width: 64,
            n_layers: 4,
        }
    }

    pub const fn tiny() -> Self {
        Self {
            base_width: 8,
            n_layers: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.n_layers == 0 {
            return Err(Error::Config(
                "discriminator base_width and n_layers must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn block_stride(i: usize) -> usize {
        if i < 3 {
            2
        } else {
            1
        }
    }

    /// Width of block `i` (0-based).
    pub fn block_width(&self, i: usize) -> usize {
        self.base_width << i
    }
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self::paper()
    }
}

/// A network program together with its parameters.
#[derive(Clone, Debug, PartialEq)]
struct Network<T> {
    ops: Vec<Op>,
    params: ParamSet<T>,
}

impl<T: Real> Network<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        graph::forward(&self.ops, &self.params, x, false).0
    }

    fn forward_traced(&self, x: &Tensor<T>) -> (Tensor<T>, Trace<T>) {
        let (y, t) = graph::forward(&self.ops, &self.params, x, true);
        (y, t.expect("recorded"))
    }

    fn backward(
        &self,
        trace: Trace<T>,
        grad: Tensor<T>,
        param_grads: Option<&mut ParamSet<T>>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        graph::backward(&self.ops, &self.params, trace, grad, param_grads, need_input_grad)
    }

    fn check_params(ops_params: &ParamSet<T>, given: &ParamSet<T>) -> Result<()> {
        if ops_params.layout() != given.layout() {
            return Err(Error::Integrity(
                "parameter names or shapes do not match the architecture".into(),
            ));
        }
        Ok(())
    }
}

type ParamFn<'a> = dyn FnMut(&str, &[usize]) -> usize + 'a;

#[allow(clippy::too_many_arguments)]
fn push_conv(
    ops: &mut Vec<Op>,
    param: &mut ParamFn<'_>,
    name: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    pad: Padding,
    bias: bool,
) {
    let weight = param(&format!("{name}.weight"), &[cout, cin, kernel, kernel]);
    let bias = bias.then(|| param(&format!("{name}.bias"), &[cout]));
    ops.push(Op::Conv {
        weight,
        bias,
        cin,
        cout,
        kernel,
        stride,
        pad,
    });
}

/// Builds the op list, registering parameters through `param` so the same
/// code serves random initialization and layout checks.
fn generator_program(spec: &GeneratorSpec, param: &mut ParamFn<'_>) -> Vec<Op> {
    let b = spec.base_width;
    let t = spec.trunk_width();
    let none = (0, 0, 0, 0);
    let mut ops = vec![Op::ReflectPad(3)];
    push_conv(&mut ops, param, "stem.conv", 3, b, 7, 1, none, false);
    ops.extend([Op::InstanceNorm, Op::Relu]);

    push_conv(&mut ops, param, "down.0.conv", b, 2 * b, 3, 2, STRIDE2_PAD, false);
    ops.extend([Op::InstanceNorm, Op::Relu]);
    push_conv(&mut ops, param, "down.1.conv", 2 * b, t, 3, 2, STRIDE2_PAD, false);
    ops.extend([Op::InstanceNorm, Op::Relu]);

    for i in 0..spec.n_residual_blocks {
        ops.extend([Op::SkipSave, Op::ReflectPad(1)]);
        push_conv(&mut ops, param, &format!("res.{i}.conv_a"), t, t, 3, 1, none, false);
        ops.extend([Op::InstanceNorm, Op::Relu, Op::ReflectPad(1)]);
        push_conv(&mut ops, param, &format!("res.{i}.conv_b"), t, t, 3, 1, none, false);
        ops.extend([Op::InstanceNorm, Op::SkipAdd]);
    }

    for (i, (cin, cout)) in [(t, 2 * b), (2 * b, b)].into_iter().enumerate() {
        let weight = param(&format!("up.{i}.deconv.weight"), &[cin, cout, 3, 3]);
        ops.push(Op::ConvTranspose {
            weight,
            cin,
            cout,
            kernel: 3,
            stride: 2,
            pad: 1,
        });
        ops.extend([Op::InstanceNorm, Op::Relu]);
    }

    ops.push(Op::ReflectPad(3));
    push_conv(&mut ops, param, "head.conv", b, 3, 7, 1, none, true);
    ops.push(Op::Tanh);
    ops
}

fn discriminator_program(spec: &DiscriminatorSpec, param: &mut ParamFn<'_>) -> Vec<Op> {
    let mut ops = Vec::new();
    let mut cin = 3;
    for i in 0..spec.n_layers {
        let cout = spec.block_width(i);
        let stride = DiscriminatorSpec::block_stride(i);
        let pad = if stride == 2 { STRIDE2_PAD } else { SAME4_PAD };
        push_conv(
            &mut ops,
            param,
            &format!("block.{i}.conv"),
            cin,
            cout,
            4,
            stride,
            pad,
            false,
        );
        ops.extend([Op::InstanceNorm, Op::LeakyRelu]);
        cin = cout;
    }
    push_conv(&mut ops, param, "head.conv", cin, 1, 4, 1, SAME4_PAD, true);
    ops
}

fn initialize<T: Real, R: Rng + ?Sized>(rng: &mut R, program: impl FnOnce(&mut ParamFn<'_>) -> Vec<Op>) -> Network<T> {
    let mut params = ParamSet::new();
    let ops = program(&mut |name, shape| {
        if name.ends_with(".bias") {
            params.push_zeros(name, shape)
        } else {
            params.push_gaussian(name, shape, INIT_STD, rng)
        }
    });
    Network { ops, params }
}

fn layout_of(program: impl FnOnce(&mut ParamFn<'_>) -> Vec<Op>) -> Vec<(String, Vec<usize>)> {
    let mut layout = Vec::new();
    program(&mut |name, shape| {
        layout.push((name.to_string(), shape.to_vec()));
        layout.len() - 1
    });
    layout
}

fn with_params<T: Real>(params: ParamSet<T>, program: impl FnOnce(&mut ParamFn<'_>) -> Vec<Op>) -> Result<Network<T>> {
    let mut layout = ParamSet::<T>::new();
    let ops = program(&mut |name, shape| layout.push_zeros(name, shape));
    Network::check_params(&layout, &params)?;
    Ok(Network { ops, params })
}

/// A translation network mapping images to images of the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T = f32> {
    spec: GeneratorSpec,
    net: Network<T>,
}

impl<T: Real> Generator<T> {
    /// Builds a generator with N(0, 0.02) weights and zero biases.
    pub fn build<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let net = initialize(rng, |p| generator_program(&spec, p));
        Ok(Self { spec, net })
    }

    /// Wraps existing parameters; fails if they do not fit the architecture.
    /// Canonical `(name, shape)` list of the parameters for `spec`.
    pub fn param_layout(spec: &GeneratorSpec) -> Vec<(String, Vec<usize>)> {
        layout_of(|p| generator_program(spec, p))
    }

    pub fn from_params(spec: GeneratorSpec, params: ParamSet<T>) -> Result<Self> {
        spec.validate()?;
        let net = with_params(params, |p| generator_program(&spec, p))?;
        Ok(Self { spec, net })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.net.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.net.params
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.spec.input_size;
        if x.channels != 3 || x.height != s || x.width != s {
            return Err(Error::Contract(format!(
                "generator expects 3x{s}x{s} input, got {}x{}x{}",
                x.channels, x.height, x.width
            )));
        }
        Ok(())
    }

    /// Applies the generator to a batch.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.net.forward(x))
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(x)?;
        Ok(self.net.forward_traced(x))
    }

    /// Reverse pass for a traced forward. See [`PatchDiscriminator::backward`].
    pub fn backward(
        &self,
        trace: Trace<T>,
        grad: Tensor<T>,
        param_grads: Option<&mut ParamSet<T>>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        self.net.backward(trace, grad, param_grads, need_input_grad)
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            spec: self.spec,
            net: Network {
                ops: self.net.ops.clone(),
                params: self.net.params.cast(),
            },
        }
    }
}

/// A fully convolutional discriminator emitting one score per image patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDiscriminator<T = f32> {
    spec: DiscriminatorSpec,
    net: Network<T>,
}

impl<T: Real> PatchDiscriminator<T> {
    pub fn build<R: Rng + ?Sized>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let net = initialize(rng, |p| discriminator_program(&spec, p));
        Ok(Self { spec, net })
    }

    /// Canonical `(name, shape)` list of the parameters for `spec`.
    pub fn param_layout(spec: &DiscriminatorSpec) -> Vec<(String, Vec<usize>)> {
        layout_of(|p| discriminator_program(spec, p))
    }

    pub fn from_params(spec: DiscriminatorSpec, params: ParamSet<T>) -> Result<Self> {
        spec.validate()?;
        let net = with_params(params, |p| discriminator_program(&spec, p))?;
        Ok(Self { spec, net })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.net.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.net.params
    }

    /// Spatial size of the patch map for an `h×w` input.
    pub fn patch_map_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        graph::output_size(&self.net.ops, h, w)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels != 3 || self.patch_map_size(x.height, x.width).is_none() {
            return Err(Error::Contract(format!(
                "discriminator cannot score a {}x{}x{} input",
                x.channels, x.height, x.width
            )));
        }
        Ok(())
    }

    /// Patch map of shape `(1, N, h', w')`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.net.forward(x))
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(x)?;
        Ok(self.net.forward_traced(x))
    }

    /// Reverse pass. Parameter gradients accumulate into `param_grads` when
    /// given; the input gradient is returned only if `need_input_grad`.
    pub fn backward(
        &self,
        trace: Trace<T>,
        grad: Tensor<T>,
        param_grads: Option<&mut ParamSet<T>>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        self.net.backward(trace, grad, param_grads, need_input_grad)
    }

    /// Pooled per-image scores: the mean of each image's patch map.
    pub fn scores(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(patch_means(&self.forward(x)?))
    }

    pub fn cast<U: Real>(&self) -> PatchDiscriminator<U> {
        PatchDiscriminator {
            spec: self.spec,
            net: Network {
                ops: self.net.ops.clone(),
                params: self.net.params.cast(),
            },
        }
    }
}

/// Mean of each image's patch map.
pub fn patch_means<T: Real>(map: &Tensor<T>) -> Vec<T> {
    let p = map.plane_len() as f64;
    (0..map.batch)
        .map(|n| T::from_f64_lossy(map.plane(0, n).iter().map(|v| v.to_f64_lossy()).sum::<f64>() / p))
        .collect()
}

/// Hybridness score of a single image under the hybrid discriminator.
pub fn hybrid_score(disc_h: &PatchDiscriminator<f32>, image: &Image) -> Result<f32> {
    let x = images_to_tensor::<f32>(std::slice::from_ref(image))?;
    Ok(disc_h.scores(&x)?[0])
}

/// One hop: a single application of the generator.
pub fn hop(generator: &Generator<f32>, image: &Image) -> Result<Image> {
    let x = images_to_tensor::<f32>(std::slice::from_ref(image))?;
    let y = generator.forward(&x)?;
    Ok(tensor_to_images(&y).remove(0))
}

/// Hop recurrence on a batch: `[x, G(x), G(G(x)), ...]` with `n + 1` entries.
pub fn hop_sequence_tensor<T: Real>(generator: &Generator<T>, x: &Tensor<T>, n: usize) -> Result<Vec<Tensor<T>>> {
    let mut seq = Vec::with_capacity(n + 1);
    seq.push(x.clone());
    for k in 0..n {
        let next = generator.forward(&seq[k])?;
        seq.push(next);
    }
    Ok(seq)
}

/// Hop recurrence on one image. Element 0 is the input itself.
pub fn hop_sequence(generator: &Generator<f32>, image: &Image, n: usize) -> Result<Vec<Image>> {
    let mut seq = Vec::with_capacity(n + 1);
    seq.push(image.clone());
    for k in 0..n {
        let next = hop(generator, &seq[k])?;
        seq.push(next);
    }
    Ok(seq)
}

/// Provenance attached to a bundle.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub created_unix: u64,
    pub config_hash: String,
}

/// The five networks of a multi-hop translator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub gen_g: Generator<f32>,
    pub gen_f: Generator<f32>,
    pub disc_x: PatchDiscriminator<f32>,
    pub disc_y: PatchDiscriminator<f32>,
    pub disc_h: PatchDiscriminator<f32>,
    pub generator_spec: GeneratorSpec,
    pub discriminator_spec: DiscriminatorSpec,
    pub trained_hops: usize,
    pub metadata: BundleMetadata,
}

impl ModelBundle {
    /// Initializes all five networks from `rng`, in the order G, F, D_X, D_Y, D_H.
    pub fn new<R: Rng + ?Sized>(
        generator_spec: GeneratorSpec,
        discriminator_spec: DiscriminatorSpec,
        trained_hops: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if trained_hops == 0 {
            return Err(Error::Config("hop count h must be >= 1".into()));
        }
        let gen_g = Generator::build(generator_spec, rng)?;
        let gen_f = Generator::build(generator_spec, rng)?;
        let disc_x = PatchDiscriminator::build(discriminator_spec, rng)?;
        let disc_y = PatchDiscriminator::build(discriminator_spec, rng)?;
        let disc_h = PatchDiscriminator::build(discriminator_spec, rng)?;
        let size = generator_spec.input_size;
        if disc_x.patch_map_size(size, size).is_none() {
            return Err(Error::Config(format!(
                "discriminator with {} layers cannot score {size}x{size} images",
                discriminator_spec.n_layers
            )));
        }
        Ok(Self {
            gen_g,
            gen_f,
            disc_x,
            disc_y,
            disc_h,
            generator_spec,
            discriminator_spec,
            trained_hops,
            metadata: BundleMetadata::default(),
        })
    }

    pub fn input_size(&self) -> usize {
        self.generator_spec.input_size
    }

    /// Generator for a translation direction.
    pub fn generator(&self, direction: crate::losses::Direction) -> &Generator<f32> {
        match direction {
            crate::losses::Direction::XToY => &self.gen_g,
            crate::losses::Direction::YToX => &self.gen_f,
        }
    }
}
