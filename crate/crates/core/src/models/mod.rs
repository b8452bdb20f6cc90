//! Generator and discriminator architectures.
//!
//! A [`Model`] is an [`Arch`] (which determines the layer list and the
//! forward procedure) plus one weight and one bias tensor per layer, stored
//! in layer order under names like `down1.weight`.

mod checkpoint;
mod discriminator;
mod generator;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv_transpose2d, Padding, Tensor};

pub use checkpoint::{load_model, read_manifest, save_model, write_model};
pub use discriminator::DiscriminatorSpec;
pub use generator::{GeneratorKind, GeneratorSpec};

/// Instance normalization epsilon used by every architecture.
pub const NORM_EPS: f64 = 1e-5;
/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose { output_padding: usize },
}

/// One parameterized layer. Normalizations and activations carry no
/// parameters and live in the forward procedure instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Layer {
    pub(crate) fn conv(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize, padding: Padding) -> Self {
        Layer {
            name: name.into(),
            kind: LayerKind::Conv,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride,
            padding,
        }
    }

    pub(crate) fn conv_t(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, output_padding: usize) -> Self {
        Layer {
            name: name.into(),
            kind: LayerKind::ConvTranspose { output_padding },
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride,
            padding: Padding::zero(pad),
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, k, k],
            LayerKind::ConvTranspose { .. } => [self.in_channels, self.out_channels, k, k],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }

    /// Output side length for an input side length, if the kernel fits.
    pub fn output_side(&self, side: usize) -> Option<usize> {
        let (k, s, p) = (self.kernel, self.stride, self.padding.size);
        match self.kind {
            LayerKind::Conv => (side + 2 * p >= k).then(|| (side + 2 * p - k) / s + 1),
            LayerKind::ConvTranspose { output_padding } => {
                let full = side.checked_sub(1)? * s + k + output_padding;
                full.checked_sub(2 * p).filter(|v| *v > 0)
            }
        }
    }

    /// Multiply-accumulates for one input of the given spatial size.
    pub fn macs(&self, h: usize, w: usize) -> Option<u64> {
        let (oh, ow) = (self.output_side(h)?, self.output_side(w)?);
        let kk = (self.kernel * self.kernel) as u64;
        let (ci, co) = (self.in_channels as u64, self.out_channels as u64);
        Some(match self.kind {
            LayerKind::Conv => co * (oh * ow) as u64 * ci * kk,
            LayerKind::ConvTranspose { .. } => ci * (h * w) as u64 * co * kk,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arch {
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        match self {
            Arch::Generator(g) => g.validate(),
            Arch::Discriminator(d) => d.validate(),
        }
    }

    /// Parameterized layers in execution order.
    pub fn layers(&self) -> Vec<Layer> {
        match self {
            Arch::Generator(g) => g.layers(),
            Arch::Discriminator(d) => d.layers(),
        }
    }

    /// Identifiers accepted by [`Model::forward_split`].
    pub fn feature_points(&self) -> Vec<String> {
        match self {
            Arch::Generator(g) => g.feature_points(),
            Arch::Discriminator(d) => d.layers().into_iter().map(|l| l.name).collect(),
        }
    }

    pub fn default_endpoint(&self) -> String {
        match self {
            Arch::Generator(g) => g.default_endpoint(),
            Arch::Discriminator(d) => d.layers()[d.layers().len() - 2].name.clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::param_count).sum()
    }

    /// FLOPs as 2 x multiply-accumulates over convolution layers only, for a
    /// square input of side `resolution`.
    pub fn flops(&self, resolution: usize) -> Result<u64> {
        let mut side = resolution;
        let mut total = 0u64;
        for layer in self.layers() {
            let macs = layer.macs(side, side).ok_or_else(|| {
                Error::InvalidSpec(format!(
                    "layer `{}` cannot process a {side}x{side} input",
                    layer.name
                ))
            })?;
            total += 2 * macs;
            side = layer.output_side(side).unwrap();
        }
        Ok(total)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Generator(g) => write!(f, "{g}"),
            Arch::Discriminator(d) => write!(f, "{d}"),
        }
    }
}

/// A realized network: architecture plus parameters.
#[derive(Clone)]
pub struct Model {
    arch: Arch,
    layers: Vec<Layer>,
    params: Vec<(String, Tensor)>,
    endpoint: String,
}

pub(crate) fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

impl Model {
    /// Builds a model with N(0, 0.02) weights and zero biases. Weights are
    /// rounded to `f32` so checkpoints reproduce them exactly.
    pub fn build<R: Rng>(arch: Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let layers = arch.layers();
        let mut params = Vec::with_capacity(2 * layers.len());
        for layer in &layers {
            let shape = layer.weight_shape();
            let n: usize = shape.iter().product();
            let w: Vec<f64> = (0..n).map(|_| f32_round(normal.sample(rng))).collect();
            params.push((format!("{}.weight", layer.name), Tensor::new(w, &shape)?.with_grad()));
            params.push((
                format!("{}.bias", layer.name),
                Tensor::zeros(&[layer.out_channels]).with_grad(),
            ));
        }
        let endpoint = arch.default_endpoint();
        Ok(Model {
            arch,
            layers,
            params,
            endpoint,
        })
    }

    /// Assembles a model from named parameters, checking names and shapes.
    pub fn from_params(arch: Arch, params: Vec<(String, Tensor)>) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers();
        if params.len() != 2 * layers.len() {
            return Err(Error::Invalid(format!(
                "{arch} expects {} parameter tensors, got {}",
                2 * layers.len(),
                params.len()
            )));
        }
        for (layer, pair) in layers.iter().zip(params.chunks(2)) {
            let expect = [
                (format!("{}.weight", layer.name), layer.weight_shape().to_vec()),
                (format!("{}.bias", layer.name), vec![layer.out_channels]),
            ];
            for ((name, shape), (got_name, t)) in expect.iter().zip(pair) {
                if name != got_name || shape.as_slice() != t.shape() {
                    return Err(Error::Invalid(format!(
                        "expected parameter {name} {shape:?}, found {got_name} {:?}",
                        t.shape()
                    )));
                }
            }
        }
        let endpoint = arch.default_endpoint();
        Ok(Model {
            arch,
            layers,
            params,
            endpoint,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Replaces parameter values, keeping names. Shapes must match.
    pub fn with_param_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        let params = self
            .params
            .iter()
            .zip(tensors)
            .map(|((n, _), t)| (n.clone(), t))
            .collect();
        let mut m = Model::from_params(self.arch.clone(), params)?;
        m.endpoint = self.endpoint.clone();
        Ok(m)
    }

    /// A copy whose parameters are constants; no gradient reaches them.
    pub fn frozen(&self) -> Self {
        self.map_params(|t| t.detach())
    }

    /// A copy whose parameters are fresh gradient-tracking leaves.
    pub fn trainable(&self) -> Self {
        self.map_params(|t| t.with_grad())
    }

    fn map_params(&self, f: impl Fn(&Tensor) -> Tensor) -> Self {
        Model {
            arch: self.arch.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|(n, t)| (n.clone(), f(t))).collect(),
            endpoint: self.endpoint.clone(),
        }
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, t)| t.zero_grad());
    }

    pub fn encoder_endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn set_encoder_endpoint(&mut self, layer: &str) -> Result<()> {
        self.check_feature_point(layer)?;
        self.endpoint = layer.to_string();
        Ok(())
    }

    fn check_feature_point(&self, layer: &str) -> Result<()> {
        let points = self.arch.feature_points();
        if points.iter().any(|p| p == layer) {
            Ok(())
        } else {
            Err(Error::UnknownLayer {
                layer: layer.to_string(),
                available: points.join(", "),
            })
        }
    }

    /// Spatial size of the activation at `layer` for a square input.
    pub fn feature_side(&self, layer: &str, resolution: usize) -> Result<usize> {
        self.check_feature_point(layer)?;
        let mut side = resolution;
        for l in &self.layers {
            side = l.output_side(side).ok_or_else(|| {
                Error::InvalidSpec(format!("layer `{}` cannot process side {side}", l.name))
            })?;
            if l.name == layer || l.name.starts_with(&format!("{layer}.")) {
                return Ok(side);
            }
        }
        Err(Error::UnknownLayer {
            layer: layer.to_string(),
            available: self.arch.feature_points().join(", "),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, None)?.1)
    }

    /// One forward pass returning the activation at `layer` together with
    /// the ordinary output.
    pub fn forward_split(&self, x: &Tensor, layer: &str) -> Result<(Tensor, Tensor)> {
        self.check_feature_point(layer)?;
        let (feat, out) = self.run(x, Some(layer))?;
        Ok((feat.expect("feature point visited"), out))
    }

    /// Forward split at the declared encoder endpoint.
    pub fn forward_encoded(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.forward_split(x, &self.endpoint.clone())
    }

    fn run(&self, x: &Tensor, capture: Option<&str>) -> Result<(Option<Tensor>, Tensor)> {
        let mut tap = Tap {
            want: capture,
            got: None,
        };
        let out = match &self.arch {
            Arch::Generator(g) => generator::forward(self, g, x, &mut tap)?,
            Arch::Discriminator(d) => discriminator::forward(self, d, x, &mut tap)?,
        };
        Ok((tap.got, out))
    }

    /// Applies parameterized layer `idx` to `x`.
    pub(crate) fn apply(&self, idx: usize, x: &Tensor) -> Result<Tensor> {
        self.apply_layer(idx, x, true)
    }

    /// Layer `idx` followed by instance norm. The bias is a per-channel
    /// constant the norm subtracts again, so it is skipped; its gradient is
    /// exactly zero.
    pub(crate) fn apply_normed(&self, idx: usize, x: &Tensor) -> Result<Tensor> {
        self.apply_layer(idx, x, false)?.instance_norm(NORM_EPS)
    }

    fn apply_layer(&self, idx: usize, x: &Tensor, bias: bool) -> Result<Tensor> {
        let layer = &self.layers[idx];
        let w = &self.params[2 * idx].1;
        let b = bias.then(|| &self.params[2 * idx + 1].1);
        match layer.kind {
            LayerKind::Conv => conv2d(x, w, b, layer.stride, layer.padding),
            LayerKind::ConvTranspose { output_padding } => {
                conv_transpose2d(x, w, b, layer.stride, layer.padding.size, output_padding)
            }
        }
    }
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("arch", &self.arch)
            .field("params", &count_params(self))
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

/// Records the activation at one named point of a forward pass.
pub(crate) struct Tap<'a> {
    want: Option<&'a str>,
    got: Option<Tensor>,
}

impl Tap<'_> {
    pub(crate) fn mark(&mut self, name: &str, t: &Tensor) {
        if self.want == Some(name) {
            self.got = Some(t.clone());
        }
    }
}

pub fn build_generator<R: Rng>(spec: GeneratorSpec, rng: &mut R) -> Result<Model> {
    Model::build(Arch::Generator(spec), rng)
}

pub fn build_discriminator<R: Rng>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Model> {
    Model::build(Arch::Discriminator(spec), rng)
}

/// Exact number of scalar parameters.
pub fn count_params(model: &Model) -> usize {
    model.params.iter().map(|(_, t)| t.numel()).sum()
}

/// `2 × MACs` over convolution layers for a square input of side
/// `resolution`. Normalization and activation costs are not counted.
pub fn count_flops(model: &Model, resolution: usize) -> Result<u64> {
    model.arch.flops(resolution)
}
