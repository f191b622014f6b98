//! Encoder-decoder regressor from an RGB crop to its position map.
//!
//! Encoder: one 4x4 convolution to `base` channels, then 10 residual blocks
//! with channels `base * {2, 2, 4, 4, 8, 8, 16, 16}` and `bottleneck` for the
//! last pair, halving the resolution on the first block of each pair.
//! Each block is `relu(conv(relu(conv(x))) + shortcut(x))` where the
//! shortcut is the identity or, when the shape changes, a 4x4 projection.
//!
//! Decoder: 17 transposed 4x4 convolutions,
//! `[B] [B/2 x3] [B/4 x3] [B/8 x3] [B/16 x2] [B/32 x2] [3 x3]` with `B` the
//! bottleneck width and stride 2 on the first layer of each of the five
//! upsampling stages. All activations are ReLU except the last, a sigmoid
//! whose output is scaled by `1.1 * input_size`.

use facemap_core::augment::ColorImage;
use facemap_core::{Error, PositionMap, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::Conv2dSpec;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const KERNEL: usize = 4;
pub const RESIDUAL_BLOCKS: usize = 10;
pub const DECODER_LAYERS: usize = 17;
/// Output coordinates are `sigmoid * OUTPUT_HEADROOM * input_size`.
pub const OUTPUT_HEADROOM: f64 = 1.1;
/// Initial weight scale of the second convolution in each residual block.
const RESIDUAL_INIT_GAIN: f64 = 0.1;
/// Initial bias of every layer except the sigmoid output.
const BIAS_INIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrnArchitecture {
    pub input_size: usize,
    pub base: usize,
    pub bottleneck: usize,
}

impl Default for PrnArchitecture {
    fn default() -> Self {
        PrnArchitecture {
            input_size: 256,
            base: 16,
            bottleneck: 512,
        }
    }
}

impl PrnArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size must be a positive multiple of 32, got {}",
                self.input_size
            )));
        }
        if self.base == 0 || self.bottleneck < 32 || self.bottleneck % 32 != 0 {
            return Err(Error::InvalidArgument(format!(
                "need base >= 1 and a bottleneck that is a positive multiple of 32, got {} and {}",
                self.base, self.bottleneck
            )));
        }
        Ok(())
    }

    /// Output channels of the 10 residual blocks.
    pub fn encoder_channels(&self) -> [usize; RESIDUAL_BLOCKS] {
        let b = self.base;
        [2 * b, 2 * b, 4 * b, 4 * b, 8 * b, 8 * b, 16 * b, 16 * b, self.bottleneck, self.bottleneck]
    }

    /// `(output channels, stride)` of the 17 decoder layers.
    pub fn decoder_schedule(&self) -> [(usize, usize); DECODER_LAYERS] {
        let b = self.bottleneck;
        let mut out = [(3, 1); DECODER_LAYERS];
        let mut i = 0;
        let mut push = |ch: usize, stride: usize| {
            out[i] = (ch, stride);
            i += 1;
        };
        push(b, 1);
        for (div, count) in [(2, 3), (4, 3), (8, 3), (16, 2), (32, 2)] {
            for j in 0..count {
                push(b / div, if j == 0 { 2 } else { 1 });
            }
        }
        for _ in 0..3 {
            push(3, 1);
        }
        out
    }

    /// Spatial size of the encoder output.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size / 32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

/// One (transposed) convolution; `w` and `b` index into the parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub transposed: bool,
    pub w: usize,
    pub b: usize,
    pub spec: Conv2dSpec,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResBlock {
    pub first: Layer,
    pub second: Layer,
    pub shortcut: Option<Layer>,
}

/// Variables of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub params: Vec<Var>,
    pub encoded: Var,
    /// `(N, 3, S, S)` coordinates.
    pub output: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrnNet {
    arch: PrnArchitecture,
    params: Vec<Tensor>,
    names: Vec<String>,
    stem: Layer,
    blocks: Vec<ResBlock>,
    decoder: Vec<Layer>,
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl Builder {
    fn layer(
        &mut self,
        name: String,
        transposed: bool,
        cin: usize,
        cout: usize,
        stride: usize,
        activation: Activation,
        gain: f64,
    ) -> Layer {
        let k = KERNEL;
        // He initialization on the fan-in each output value sees.
        let fan_in = if transposed { cin * k * k / (stride * stride) } else { cin * k * k };
        let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let shape = if transposed { vec![cin, cout, k, k] } else { vec![cout, cin, k, k] };
        let w = Tensor::from_fn(shape, |_| normal.sample(&mut self.rng));
        self.params.push(w);
        self.names.push(format!("{name}.weight"));
        let bias = if activation == Activation::Sigmoid { 0.0 } else { BIAS_INIT };
        self.params.push(Tensor::from_fn(vec![cout], |_| bias));
        self.names.push(format!("{name}.bias"));
        Layer {
            transposed,
            w: self.params.len() - 2,
            b: self.params.len() - 1,
            spec: Conv2dSpec::same(k, stride),
            activation,
        }
    }
}

impl PrnNet {
    /// Builds the network with seeded He-normal weights. Biases start at
    /// [`BIAS_INIT`], except the output layer's, which start at zero.
    pub fn new(arch: PrnArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            names: Vec::new(),
        };
        let stem = b.layer("stem".into(), false, 3, arch.base, 1, Activation::Relu, 1.0);
        let mut blocks = Vec::with_capacity(RESIDUAL_BLOCKS);
        let mut cin = arch.base;
        for (i, &cout) in arch.encoder_channels().iter().enumerate() {
            let stride = if i % 2 == 0 { 2 } else { 1 };
            let first = b.layer(format!("block{i}.conv1"), false, cin, cout, stride, Activation::Relu, 1.0);
            let second = b.layer(
                format!("block{i}.conv2"),
                false,
                cout,
                cout,
                1,
                Activation::Identity,
                RESIDUAL_INIT_GAIN,
            );
            let shortcut = (stride != 1 || cin != cout)
                .then(|| b.layer(format!("block{i}.shortcut"), false, cin, cout, stride, Activation::Identity, 1.0));
            blocks.push(ResBlock { first, second, shortcut });
            cin = cout;
        }
        let schedule = arch.decoder_schedule();
        let mut decoder = Vec::with_capacity(DECODER_LAYERS);
        for (i, &(cout, stride)) in schedule.iter().enumerate() {
            let act = if i + 1 == DECODER_LAYERS { Activation::Sigmoid } else { Activation::Relu };
            decoder.push(b.layer(format!("decoder{i}"), true, cin, cout, stride, act, 1.0));
            cin = cout;
        }
        Ok(PrnNet {
            arch,
            params: b.params,
            names: b.names,
            stem,
            blocks,
            decoder,
        })
    }

    pub fn arch(&self) -> &PrnArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn stem(&self) -> &Layer {
        &self.stem
    }

    pub fn blocks(&self) -> &[ResBlock] {
        &self.blocks
    }

    pub fn decoder(&self) -> &[Layer] {
        &self.decoder
    }

    /// Number of transposed convolutions in the network.
    pub fn transposed_layer_count(&self) -> usize {
        let enc = self.blocks.iter().flat_map(|b| [Some(b.first), Some(b.second), b.shortcut]).flatten();
        std::iter::once(self.stem)
            .chain(enc)
            .chain(self.decoder.iter().copied())
            .filter(|l| l.transposed)
            .count()
    }

    /// Replaces all parameters; shapes must match.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::ShapeMismatch("parameter list does not match the architecture".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn register(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone(), requires_grad)).collect()
    }

    fn apply(&self, g: &mut Graph, p: &[Var], layer: &Layer, x: Var) -> Result<Var> {
        let y = if layer.transposed {
            g.conv_transpose2d(x, p[layer.w], Some(p[layer.b]), layer.spec)?
        } else {
            g.conv2d(x, p[layer.w], Some(p[layer.b]), layer.spec)?
        };
        Ok(match layer.activation {
            Activation::Relu => g.relu(y),
            Activation::Sigmoid => g.sigmoid(y),
            Activation::Identity => y,
        })
    }

    pub fn encode(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).dims4()?;
        if c != 3 || h != self.arch.input_size || w != self.arch.input_size {
            return Err(Error::ShapeMismatch(format!(
                "network expects (N, 3, {s}, {s}) input, got {:?}",
                g.value(x).shape(),
                s = self.arch.input_size
            )));
        }
        let mut x = self.apply(g, p, &self.stem, x)?;
        for block in &self.blocks {
            let y = self.apply(g, p, &block.first, x)?;
            let y = self.apply(g, p, &block.second, y)?;
            let skip = match &block.shortcut {
                Some(s) => self.apply(g, p, s, x)?,
                None => x,
            };
            let sum = g.add(y, skip)?;
            x = g.relu(sum);
        }
        Ok(x)
    }

    pub fn decode(&self, g: &mut Graph, p: &[Var], mut x: Var) -> Result<Var> {
        for layer in &self.decoder {
            x = self.apply(g, p, layer, x)?;
        }
        Ok(g.scale(x, OUTPUT_HEADROOM * self.arch.input_size as f64))
    }

    /// Full forward pass on an `(N, 3, S, S)` batch.
    pub fn forward(&self, g: &mut Graph, input: Var, requires_grad: bool) -> Result<Forward> {
        let params = self.register(g, requires_grad);
        let encoded = self.encode(g, &params, input)?;
        let output = self.decode(g, &params, encoded)?;
        Ok(Forward {
            params,
            encoded,
            output,
        })
    }

    /// Position maps for a batch of images.
    pub fn predict(&self, images: &[&ColorImage]) -> Result<Vec<PositionMap>> {
        let mut g = Graph::new();
        let x = g.leaf(images_to_tensor(images, self.arch.input_size)?, false);
        let f = self.forward(&mut g, x, false)?;
        tensor_to_maps(g.value(f.output))
    }
}

/// `(N, 3, S, S)` tensor from RGB images in `[0, 1]`.
pub fn images_to_tensor(images: &[&ColorImage], size: usize) -> Result<Tensor> {
    let p = size * size;
    let mut data = vec![0.0; images.len() * 3 * p];
    for (i, img) in images.iter().enumerate() {
        if img.width() != size || img.height() != size {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} for a {size}x{size} network",
                img.width(),
                img.height()
            )));
        }
        for (j, px) in img.data().chunks_exact(3).enumerate() {
            for k in 0..3 {
                data[(i * 3 + k) * p + j] = px[k];
            }
        }
    }
    Tensor::new(vec![images.len(), 3, size, size], data)
}

/// Splits an `(N, 3, S, S)` tensor into position maps (all pixels valid).
pub fn tensor_to_maps(t: &Tensor) -> Result<Vec<PositionMap>> {
    let [n, c, h, w] = t.dims4()?;
    if c != 3 || h != w {
        return Err(Error::ShapeMismatch(format!("cannot read {:?} as position maps", t.shape())));
    }
    let p = h * w;
    (0..n)
        .map(|i| {
            let data = (0..p)
                .map(|j| std::array::from_fn(|k| t.data()[(i * 3 + k) * p + j]))
                .collect();
            PositionMap::from_parts(h, data, vec![true; p])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PrnArchitecture {
        PrnArchitecture {
            input_size: 32,
            base: 1,
            bottleneck: 32,
        }
    }

    #[test]
    fn default_schedule() {
        let a = PrnArchitecture::default();
        assert_eq!(a.encoder_channels(), [32, 32, 64, 64, 128, 128, 256, 256, 512, 512]);
        let d = a.decoder_schedule();
        let strides: Vec<usize> = d.iter().map(|x| x.1).collect();
        assert_eq!(strides.iter().filter(|&&s| s == 2).count(), 5);
        let chans: Vec<usize> = d.iter().map(|x| x.0).collect();
        assert_eq!(chans, [512, 256, 256, 256, 128, 128, 128, 64, 64, 64, 32, 32, 16, 16, 3, 3, 3]);
    }

    #[test]
    fn invalid_architectures() {
        for a in [
            PrnArchitecture { input_size: 48, ..tiny() },
            PrnArchitecture { base: 0, ..tiny() },
            PrnArchitecture { bottleneck: 40, ..tiny() },
        ] {
            assert!(PrnNet::new(a, 0).is_err());
        }
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(PrnNet::new(tiny(), 3).unwrap(), PrnNet::new(tiny(), 3).unwrap());
        assert_ne!(PrnNet::new(tiny(), 3).unwrap(), PrnNet::new(tiny(), 4).unwrap());
    }

    #[test]
    fn wrong_input_size_rejected() {
        let net = PrnNet::new(tiny(), 0).unwrap();
        let img = ColorImage::black(64, 64);
        assert!(net.predict(&[&img]).is_err());
    }
}
