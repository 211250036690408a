//! Generator, discriminator and auxiliary classifier networks, layer
//! freezing and the `FGCK` checkpoint format.
//!
//! Checkpoint layout (little-endian): `magic "FGCK" | version u32 | kind u8 |
//! step u64 | seed u64 | config hash (u32 length + utf8) | net count u32 |`
//! then per network `descriptor (u32 length + JSON) | param count u32 |` and
//! per parameter `name (u32 length + utf8) | rank u32 | dims u32[] |
//! trainable u8 | adam step u64 | value f32[] | m f32[] | v f32[]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fgan_autodiff::{Binding, Graph, Param, ParamSet, Tensor, Var, LEAKY_SLOPE};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, FganError, Result};
use crate::rng::{self, tag};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FGCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const INIT_STD: f64 = 0.02;

/// Samples per forward pass when evaluating large inputs.
const CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        act: Activation,
    },
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        act: Activation,
    },
    ConvTranspose {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        act: Activation,
    },
    /// Per-sample reshape; the batch axis is kept.
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    fn has_params(&self) -> bool {
        !matches!(self, LayerSpec::Reshape { .. })
    }

    fn out_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => (input == [inputs] && outputs > 0).then(|| vec![outputs]),
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                let [c, h, w] = *input else { return None };
                if c != in_ch || out_ch == 0 || !(1..=2).contains(&stride) {
                    return None;
                }
                let g = fgan_autodiff::conv::ConvGeom::forward((h, w), kernel, stride, pad)?;
                Some(vec![out_ch, g.out_hw.0, g.out_hw.1])
            }
            LayerSpec::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                ..
            } => {
                let [c, h, w] = *input else { return None };
                if c != in_ch || out_ch == 0 || !(1..=2).contains(&stride) {
                    return None;
                }
                let g = fgan_autodiff::conv::ConvGeom::transposed((h, w), kernel, stride, pad)?;
                Some(vec![out_ch, g.in_hw.0, g.in_hw.1])
            }
            LayerSpec::Reshape { ref shape } => {
                let same = shape.iter().product::<usize>() == input.iter().product::<usize>();
                (same && !shape.is_empty() && shape.iter().all(|&d| d > 0)).then(|| shape.clone())
            }
        }
    }

    /// `(name suffix, shape)` of each parameter.
    fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => {
                vec![("weight", vec![inputs, outputs]), ("bias", vec![outputs])]
            }
            LayerSpec::Conv {
                in_ch, out_ch, kernel, ..
            } => vec![("weight", vec![out_ch, in_ch, kernel, kernel]), ("bias", vec![out_ch])],
            // The transposed kernel is indexed [input channels, output channels, k, k].
            LayerSpec::ConvTranspose {
                in_ch, out_ch, kernel, ..
            } => vec![("weight", vec![in_ch, out_ch, kernel, kernel]), ("bias", vec![out_ch])],
            LayerSpec::Reshape { .. } => Vec::new(),
        }
    }
}

/// Input shape (without batch axis) plus an ordered layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetDesc {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetDesc {
    /// Per-sample shape after every layer; entry 0 is the input.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(FganError::Config(format!("invalid input shape {:?}", self.input_shape)));
        }
        if !self.layers.iter().any(LayerSpec::has_params) {
            return Err(FganError::Config("network has no parametric layer".into()));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = shapes.last().expect("non-empty");
            let next = layer
                .out_shape(prev)
                .ok_or_else(|| FganError::Config(format!("layer {i} ({layer:?}) cannot take input {prev:?}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().expect("non-empty"))
    }

    /// Multi-layer perceptron with leaky-rectifier hidden layers.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, head: Activation) -> Self {
        let mut layers = Vec::new();
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                inputs: prev,
                outputs: h,
                act: Activation::LeakyRelu,
            });
            prev = h;
        }
        layers.push(LayerSpec::Dense {
            inputs: prev,
            outputs: output,
            act: head,
        });
        Self {
            input_shape: vec![input],
            layers,
        }
    }
}

fn conv(in_ch: usize, out_ch: usize) -> LayerSpec {
    LayerSpec::Conv {
        in_ch,
        out_ch,
        kernel: 4,
        stride: 2,
        pad: 1,
        act: Activation::LeakyRelu,
    }
}

fn deconv(in_ch: usize, out_ch: usize, act: Activation) -> LayerSpec {
    LayerSpec::ConvTranspose {
        in_ch,
        out_ch,
        kernel: 4,
        stride: 2,
        pad: 1,
        act,
    }
}

/// Architecture family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Fully connected nets for vector data.
    Mlp,
    /// Strided conv stacks for 3x32x32 images.
    Conv32,
}

/// `m -> 64 -> 64 -> F` with tanh head, or a transposed-conv stack for images.
pub fn generator_desc(arch: Arch, latent_dim: usize, sample_shape: &[usize]) -> Result<NetDesc> {
    let desc = match arch {
        Arch::Mlp => {
            let [f] = *sample_shape else {
                return Err(FganError::Config(format!("MLP generator needs vector samples, got {sample_shape:?}")));
            };
            NetDesc::mlp(latent_dim, &[64, 64], f, Activation::Tanh)
        }
        Arch::Conv32 => {
            check_image(sample_shape)?;
            NetDesc {
                input_shape: vec![latent_dim],
                layers: vec![
                    LayerSpec::Dense {
                        inputs: latent_dim,
                        outputs: 64 * 4 * 4,
                        act: Activation::LeakyRelu,
                    },
                    LayerSpec::Reshape { shape: vec![64, 4, 4] },
                    deconv(64, 32, Activation::LeakyRelu),
                    deconv(32, 16, Activation::LeakyRelu),
                    deconv(16, sample_shape[0], Activation::Tanh),
                ],
            }
        }
    };
    check_output(&desc, sample_shape, "generator")?;
    Ok(desc)
}

/// `F -> 64 -> 64 -> 64 -> 1` (four layers), or a strided conv stack.
pub fn discriminator_desc(arch: Arch, sample_shape: &[usize]) -> Result<NetDesc> {
    let desc = match arch {
        Arch::Mlp => {
            let [f] = *sample_shape else {
                return Err(FganError::Config(format!("MLP discriminator needs vector samples, got {sample_shape:?}")));
            };
            NetDesc::mlp(f, &[64, 64, 64], 1, Activation::Identity)
        }
        Arch::Conv32 => {
            check_image(sample_shape)?;
            NetDesc {
                input_shape: sample_shape.to_vec(),
                layers: vec![
                    conv(sample_shape[0], 16),
                    conv(16, 32),
                    conv(32, 64),
                    LayerSpec::Reshape { shape: vec![64 * 4 * 4] },
                    LayerSpec::Dense {
                        inputs: 64 * 4 * 4,
                        outputs: 1,
                        act: Activation::Identity,
                    },
                ],
            }
        }
    };
    check_output(&desc, &[1], "discriminator")?;
    Ok(desc)
}

/// `F -> 32 -> 16 -> K`, or a conv feature extractor with a 64-wide
/// penultimate layer.
pub fn classifier_desc(arch: Arch, sample_shape: &[usize], num_classes: usize) -> Result<NetDesc> {
    if num_classes < 2 {
        return Err(FganError::Config(format!("classifier needs at least 2 classes, got {num_classes}")));
    }
    let desc = match arch {
        Arch::Mlp => {
            let [f] = *sample_shape else {
                return Err(FganError::Config(format!("MLP classifier needs vector samples, got {sample_shape:?}")));
            };
            NetDesc::mlp(f, &[32, 16], num_classes, Activation::Identity)
        }
        Arch::Conv32 => {
            check_image(sample_shape)?;
            NetDesc {
                input_shape: sample_shape.to_vec(),
                layers: vec![
                    conv(sample_shape[0], 16),
                    conv(16, 32),
                    conv(32, 32),
                    LayerSpec::Reshape { shape: vec![32 * 4 * 4] },
                    LayerSpec::Dense {
                        inputs: 32 * 4 * 4,
                        outputs: 64,
                        act: Activation::LeakyRelu,
                    },
                    LayerSpec::Dense {
                        inputs: 64,
                        outputs: num_classes,
                        act: Activation::Identity,
                    },
                ],
            }
        }
    };
    check_output(&desc, &[num_classes], "classifier")?;
    Ok(desc)
}

fn check_image(shape: &[usize]) -> Result<()> {
    match *shape {
        [_, 32, 32] => Ok(()),
        _ => Err(FganError::Config(format!("conv32 architecture needs [C, 32, 32] samples, got {shape:?}"))),
    }
}

fn check_output(desc: &NetDesc, want: &[usize], what: &str) -> Result<()> {
    let got = desc.output_shape()?;
    if got != want {
        return Err(FganError::Config(format!("{what} produces {got:?}, expected {want:?}")));
    }
    Ok(())
}

/// A network: descriptor plus parameters with optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    desc: NetDesc,
    params: ParamSet,
    /// Parameter indices of each parametric layer, in layer order.
    layer_params: Vec<Vec<usize>>,
}

impl Network {
    /// Weights from N(0, 0.02^2), zero biases.
    pub fn init(desc: NetDesc, rng: &mut ChaCha8Rng) -> Result<Self> {
        desc.shapes()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamSet::new();
        for (i, layer) in desc.layers.iter().enumerate() {
            for (suffix, shape) in layer.param_shapes() {
                let n = shape.iter().product();
                let value = if suffix == "bias" {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| normal.sample(rng) as f32).collect()
                };
                params.push(Param::new(format!("l{i}.{suffix}"), shape, value));
            }
        }
        Self::from_parts(desc, params)
    }

    /// Reassemble from stored parameters, checking names and shapes.
    pub fn from_parts(desc: NetDesc, params: ParamSet) -> Result<Self> {
        desc.shapes()?;
        let mut layer_params = Vec::new();
        let mut next = 0;
        for (i, layer) in desc.layers.iter().enumerate() {
            if !layer.has_params() {
                continue;
            }
            let mut idx = Vec::new();
            for (suffix, shape) in layer.param_shapes() {
                let name = format!("l{i}.{suffix}");
                if next >= params.len() || params.get(next).name != name || params.get(next).shape != shape {
                    return Err(FganError::Config(format!("parameter {name} {shape:?} missing or mismatched")));
                }
                idx.push(next);
                next += 1;
            }
            layer_params.push(idx);
        }
        if next != params.len() {
            return Err(FganError::Config(format!("{} unexpected extra parameters", params.len() - next)));
        }
        Ok(Self {
            desc,
            params,
            layer_params,
        })
    }

    pub fn desc(&self) -> &NetDesc {
        &self.desc
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Number of parametric layers.
    pub fn layer_count(&self) -> usize {
        self.layer_params.len()
    }

    pub fn layer_param_indices(&self, layer: usize) -> &[usize] {
        &self.layer_params[layer]
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.desc.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.desc.output_shape().expect("validated at construction")
    }

    pub fn bind(&self, g: &mut Graph, binding: Binding) -> Vec<Var> {
        self.params.bind(g, binding)
    }

    /// Forward pass; `x` is `[batch, input_shape...]`. Returns the output and
    /// the input of the final parametric layer.
    pub fn forward_with_features(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let batch = g.shape(x)[0];
        let mut expect = vec![batch];
        expect.extend_from_slice(&self.desc.input_shape);
        if g.shape(x) != expect.as_slice() {
            return Err(FganError::Config(format!(
                "network input {:?}, expected {expect:?}",
                g.shape(x)
            )));
        }
        let last = self.desc.layers.iter().rposition(LayerSpec::has_params).expect("validated");
        let mut h = x;
        let mut features = x;
        let mut p = 0;
        for (i, layer) in self.desc.layers.iter().enumerate() {
            if i == last {
                features = h;
            }
            h = match *layer {
                LayerSpec::Dense { act, .. } => {
                    let (w, b) = (vars[p], vars[p + 1]);
                    p += 2;
                    let y = g.matmul(h, w)?;
                    let shape = g.shape(y).to_vec();
                    let b = g.expand(b, &shape)?;
                    let y = g.add(y, b)?;
                    activate(g, y, act)?
                }
                LayerSpec::Conv { stride, pad, act, .. } => {
                    let (w, b) = (vars[p], vars[p + 1]);
                    p += 2;
                    let y = g.conv2d(h, w, stride, pad)?;
                    let y = add_channel_bias(g, y, b)?;
                    activate(g, y, act)?
                }
                LayerSpec::ConvTranspose { stride, pad, act, .. } => {
                    let (w, b) = (vars[p], vars[p + 1]);
                    p += 2;
                    let y = g.conv_transpose2d(h, w, stride, pad)?;
                    let y = add_channel_bias(g, y, b)?;
                    activate(g, y, act)?
                }
                LayerSpec::Reshape { ref shape } => {
                    let mut s = vec![batch];
                    s.extend_from_slice(shape);
                    g.reshape(h, &s)?
                }
            };
        }
        Ok((h, features))
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        Ok(self.forward_with_features(g, vars, x)?.0)
    }

    /// Evaluate on concrete inputs in chunks, without gradient tracking.
    /// Returns `(outputs, penultimate features)`.
    pub fn eval(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = x.shape()[0];
        let per: usize = x.shape()[1..].iter().product();
        let mut out = Vec::new();
        let mut feat = Vec::new();
        let (mut out_shape, mut feat_shape) = (Vec::new(), Vec::new());
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, x.data()[start * per..end * per].to_vec())?;
            let mut g = Graph::new();
            let vars = self.bind(&mut g, Binding::Frozen);
            let xv = g.constant(chunk);
            let (o, f) = self.forward_with_features(&mut g, &vars, xv)?;
            out_shape = g.shape(o)[1..].to_vec();
            feat_shape = g.shape(f)[1..].to_vec();
            out.extend_from_slice(g.value(o).data());
            feat.extend_from_slice(g.value(f).data());
        }
        let with_batch = |s: Vec<usize>| [vec![n], s].concat();
        Ok((
            Tensor::new(with_batch(out_shape), out)?,
            Tensor::new(with_batch(feat_shape), feat)?,
        ))
    }

    pub fn output(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.eval(x)?.0)
    }
}

fn activate(g: &mut Graph, y: Var, act: Activation) -> Result<Var> {
    Ok(match act {
        Activation::Identity => y,
        Activation::LeakyRelu => g.leaky_relu(y, LEAKY_SLOPE)?,
        Activation::Tanh => g.tanh(y)?,
    })
}

fn add_channel_bias(g: &mut Graph, y: Var, b: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let b = g.reshape(b, &[1, shape[1], 1, 1])?;
    let b = g.expand(b, &shape)?;
    Ok(g.add(y, b)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub net: Network,
}

impl Generator {
    pub fn build(arch: Arch, latent_dim: usize, sample_shape: &[usize], seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(FganError::Config("latent_dim must be positive".into()));
        }
        let desc = generator_desc(arch, latent_dim, sample_shape)?;
        let mut rng = rng::stream(seed, &[tag::INIT, 0]);
        Ok(Self {
            net: Network::init(desc, &mut rng)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_shape()[0]
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        self.net.output_shape()
    }

    /// `n` latent vectors from N(0, I) as `[n, m]`.
    pub fn sample_latents(&self, rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        let m = self.latent_dim();
        Tensor::new(vec![n, m], rng::normal_vec(rng, n * m)).expect("positive extents")
    }

    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.net.output(z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: Network,
}

impl Discriminator {
    pub fn build(arch: Arch, sample_shape: &[usize], seed: u64) -> Result<Self> {
        let desc = discriminator_desc(arch, sample_shape)?;
        let mut rng = rng::stream(seed, &[tag::INIT, 1]);
        Ok(Self {
            net: Network::init(desc, &mut rng)?,
        })
    }

    /// One logit per sample.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.output(x)?.into_data())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub net: Network,
}

impl Classifier {
    pub fn build(arch: Arch, sample_shape: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        let desc = classifier_desc(arch, sample_shape, num_classes)?;
        let mut rng = rng::stream(seed, &[tag::INIT, 2]);
        Ok(Self {
            net: Network::init(desc, &mut rng)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.net.desc().shapes().expect("validated")[self.last_layer()].iter().product()
    }

    fn last_layer(&self) -> usize {
        self.net.desc().layers.iter().rposition(LayerSpec::has_params).expect("validated")
    }

    /// Softmax probabilities `[n, K]` and penultimate features `[n, f]`.
    pub fn probs_and_features(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (logits, features) = self.net.eval(x)?;
        Ok((softmax_rows(&logits), features))
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.probs_and_features(x)?.0)
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.net.eval(x)?.1)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.probabilities(x)?;
        Ok((0..p.shape()[0]).map(|i| argmax(p.row(i))).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Flag the first `k` discriminator layers non-trainable and the rest trainable.
pub fn freeze_discriminator_layers(d: &mut Discriminator, k: usize) -> Result<()> {
    let layers = d.net.layer_count();
    if k > layers {
        return Err(FganError::Usage(format!("cannot freeze {k} layers of a {layers}-layer discriminator")));
    }
    for layer in 0..layers {
        for i in d.net.layer_params[layer].clone() {
            d.net.params.set_trainable(i, layer >= k);
        }
    }
    Ok(())
}

/// Generator plus discriminator with a shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub g: Generator,
    pub d: Discriminator,
    /// Completed training steps.
    pub step: u64,
}

impl GanModel {
    pub fn build(arch: Arch, latent_dim: usize, sample_shape: &[usize], seed: u64) -> Result<Self> {
        Ok(Self {
            g: Generator::build(arch, latent_dim, sample_shape, seed)?,
            d: Discriminator::build(arch, sample_shape, seed)?,
            step: 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Generator = 0,
    Discriminator = 1,
    Classifier = 2,
    Gan = 3,
}

impl ModelKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Generator,
            1 => Self::Discriminator,
            2 => Self::Classifier,
            3 => Self::Gan,
            _ => return None,
        })
    }

    fn net_count(self) -> usize {
        if self == Self::Gan {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub step: u64,
    pub seed: u64,
    pub config_hash: String,
    pub nets: Vec<Network>,
}

impl Checkpoint {
    pub fn gan(model: &GanModel, seed: u64, config_hash: &str) -> Self {
        Self {
            kind: ModelKind::Gan,
            step: model.step,
            seed,
            config_hash: config_hash.to_string(),
            nets: vec![model.g.net.clone(), model.d.net.clone()],
        }
    }

    pub fn classifier(c: &Classifier, step: u64, seed: u64, config_hash: &str) -> Self {
        Self {
            kind: ModelKind::Classifier,
            step,
            seed,
            config_hash: config_hash.to_string(),
            nets: vec![c.net.clone()],
        }
    }

    pub fn into_gan(self) -> Result<GanModel> {
        if self.kind != ModelKind::Gan {
            return Err(FganError::Usage(format!("checkpoint holds {:?}, not a GAN", self.kind)));
        }
        let mut nets = self.nets.into_iter();
        Ok(GanModel {
            g: Generator {
                net: nets.next().expect("two nets"),
            },
            d: Discriminator {
                net: nets.next().expect("two nets"),
            },
            step: self.step,
        })
    }

    pub fn into_classifier(self) -> Result<Classifier> {
        if self.kind != ModelKind::Classifier {
            return Err(FganError::Usage(format!("checkpoint holds {:?}, not a classifier", self.kind)));
        }
        Ok(Classifier {
            net: self.nets.into_iter().next().expect("one net"),
        })
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> std::io::Result<()> {
    v.iter().try_for_each(|&x| w.write_f32::<LittleEndian>(x))
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    if ck.nets.len() != ck.kind.net_count() {
        return Err(FganError::Usage(format!("{:?} checkpoint with {} networks", ck.kind, ck.nets.len())));
    }
    let descs = ck
        .nets
        .iter()
        .map(|n| serde_json::to_string(n.desc()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u8(ck.kind as u8)?;
        w.write_u64::<LittleEndian>(ck.step)?;
        w.write_u64::<LittleEndian>(ck.seed)?;
        write_str(&mut w, &ck.config_hash)?;
        w.write_u32::<LittleEndian>(ck.nets.len() as u32)?;
        for (net, desc) in ck.nets.iter().zip(&descs) {
            write_str(&mut w, desc)?;
            w.write_u32::<LittleEndian>(net.params().len() as u32)?;
            for p in net.params().iter() {
                write_str(&mut w, &p.name)?;
                w.write_u32::<LittleEndian>(p.shape.len() as u32)?;
                for &d in &p.shape {
                    w.write_u32::<LittleEndian>(d as u32)?;
                }
                w.write_u8(p.trainable as u8)?;
                w.write_u64::<LittleEndian>(p.step)?;
                write_f32s(&mut w, &p.value)?;
                write_f32s(&mut w, &p.m)?;
                write_f32s(&mut w, &p.v)?;
            }
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

struct CkReader<R> {
    r: R,
}

impl<R: Read> CkReader<R> {
    fn u8(&mut self) -> std::io::Result<u8> {
        self.r.read_u8()
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        self.r.read_u32::<LittleEndian>()
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        self.r.read_u64::<LittleEndian>()
    }
    fn string(&mut self, limit: usize) -> std::io::Result<std::result::Result<String, String>> {
        let n = self.u32()? as usize;
        if n > limit {
            return Ok(Err(format!("string length {n} exceeds {limit}")));
        }
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf)?;
        Ok(String::from_utf8(buf).map_err(|e| e.to_string()))
    }
    fn f32s(&mut self, n: usize) -> std::io::Result<Vec<f32>> {
        let mut v = vec![0f32; n];
        self.r.read_f32_into::<LittleEndian>(&mut v)?;
        Ok(v)
    }
}

const MAX_PARAM_SCALARS: usize = 1 << 26;

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(FganError::MissingArtifact {
            path: path.to_path_buf(),
            producer: "train-gan",
        });
    }
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = CkReader { r: BufReader::new(file) };
    let bad = |d: String| format_err(path, d);
    let eof = |e: std::io::Error| format_err(path, format!("truncated: {e}"));
    let mut magic = [0u8; 4];
    r.r.read_exact(&mut magic).map_err(eof)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = r.u32().map_err(eof)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = r.u8().map_err(eof)?;
    let kind = ModelKind::from_u8(kind).ok_or_else(|| bad(format!("unknown model kind {kind}")))?;
    let step = r.u64().map_err(eof)?;
    let seed = r.u64().map_err(eof)?;
    let config_hash = r.string(256).map_err(eof)?.map_err(&bad)?;
    let count = r.u32().map_err(eof)? as usize;
    if count != kind.net_count() {
        return Err(bad(format!("{kind:?} checkpoint declares {count} networks")));
    }
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let desc_json = r.string(1 << 20).map_err(eof)?.map_err(&bad)?;
        let desc: NetDesc = serde_json::from_str(&desc_json).map_err(|e| bad(format!("descriptor: {e}")))?;
        let np = r.u32().map_err(eof)? as usize;
        let mut params = ParamSet::new();
        for _ in 0..np {
            let name = r.string(256).map_err(eof)?.map_err(&bad)?;
            let rank = r.u32().map_err(eof)? as usize;
            if rank == 0 || rank > 4 {
                return Err(bad(format!("parameter {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32().map_err(eof)? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).unwrap_or(usize::MAX);
            if n == 0 || n > MAX_PARAM_SCALARS {
                return Err(bad(format!("parameter {name} has shape {shape:?}")));
            }
            let trainable = match r.u8().map_err(eof)? {
                0 => false,
                1 => true,
                b => return Err(bad(format!("parameter {name} has trainable flag {b}"))),
            };
            let adam_step = r.u64().map_err(eof)?;
            let value = r.f32s(n).map_err(eof)?;
            let m = r.f32s(n).map_err(eof)?;
            let v = r.f32s(n).map_err(eof)?;
            let mut p = Param::new(name, shape, value);
            p.trainable = trainable;
            p.step = adam_step;
            p.m = m;
            p.v = v;
            params.push(p);
        }
        nets.push(Network::from_parts(desc, params).map_err(|e| bad(e.to_string()))?);
    }
    let mut rest = [0u8; 1];
    if r.r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(bad("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        kind,
        step,
        seed,
        config_hash,
        nets,
    })
}

/// Uniform draw in `[-half, half]` per entry.
pub fn uniform_noise(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half..=half)).collect()
}
