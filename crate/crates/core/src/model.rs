//! Mask-guided mixing generator and patch discriminator.
//!
//! The generator follows the residual image-to-image layout: a 7x7 stem, two
//! stride-2 downsampling convolutions, a stack of residual blocks and a
//! mirrored upsampling path ending in a 7x7 convolution and `tanh`. The
//! residual stack is split at `mix_after_block`: everything before it is the
//! encoder, everything after it the decoder. Model inputs and outputs live in
//! `[-1, 1]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::masks::{stack_masks, MixMask};
use crate::nn::{Conv2d, ConvTranspose2d, Forward, Init, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Nearest-neighbour x2 resize followed by a 3x3 convolution.
    ResizeConv,
    /// Stride-2 transposed 3x3 convolution.
    Transposed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub base_channels: usize,
    pub n_res_blocks: usize,
    pub mix_after_block: usize,
    pub upsample: UpsampleMode,
    pub init_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            channels: 3,
            input_height: 64,
            input_width: 64,
            base_channels: 64,
            n_res_blocks: 4,
            mix_after_block: 2,
            upsample: UpsampleMode::ResizeConv,
            init_std: 0.02,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mix_after_block > self.n_res_blocks {
            return Err(Error::Invalid(format!(
                "mix_after_block {} exceeds n_res_blocks {}",
                self.mix_after_block, self.n_res_blocks
            )));
        }
        if self.base_channels == 0 || self.channels == 0 {
            return Err(Error::Invalid("channel counts must be positive".into()));
        }
        check_divisible(self.input_height, self.input_width)?;
        if self.input_height < 8 || self.input_width < 8 {
            return Err(Error::Invalid(format!(
                "generator input {}x{} is too small; use at least 8x8",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    /// `(C', H', W')` of the mixing feature map.
    pub fn feature_dims(&self) -> (usize, usize, usize) {
        (4 * self.base_channels, self.input_height / 4, self.input_width / 4)
    }
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Shape(format!(
            "generator input {h}x{w} must be divisible by 4; pre-upsample the images (e.g. 32x32 -> 64x64)"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

#[derive(Clone, Debug)]
enum UpLayer {
    ResizeConv(Conv2d),
    Transposed(ConvTranspose2d),
}

#[derive(Clone, Debug)]
pub struct Generator<T: Scalar> {
    pub config: GeneratorConfig,
    pub params: ParamStore<T>,
    stem: Conv2d,
    down: Vec<Conv2d>,
    blocks: Vec<ResBlock>,
    up: Vec<UpLayer>,
    head: Conv2d,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let init = Init::Normal(config.init_std);
        let b = config.base_channels;
        let stem = Conv2d::new(&mut p, "stem", config.channels, b, 7, 1, 0, true, init, &mut rng);
        let down = vec![
            Conv2d::new(&mut p, "down1", b, 2 * b, 3, 2, 1, true, init, &mut rng),
            Conv2d::new(&mut p, "down2", 2 * b, 4 * b, 3, 2, 1, true, init, &mut rng),
        ];
        let blocks = (0..config.n_res_blocks)
            .map(|i| ResBlock {
                c1: Conv2d::new(&mut p, &format!("res{i}.conv1"), 4 * b, 4 * b, 3, 1, 0, true, init, &mut rng),
                c2: Conv2d::new(&mut p, &format!("res{i}.conv2"), 4 * b, 4 * b, 3, 1, 0, true, init, &mut rng),
            })
            .collect();
        let up = [(4 * b, 2 * b), (2 * b, b)]
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                let name = format!("up{}", i + 1);
                match config.upsample {
                    UpsampleMode::ResizeConv => {
                        UpLayer::ResizeConv(Conv2d::new(&mut p, &name, cin, cout, 3, 1, 1, true, init, &mut rng))
                    }
                    UpsampleMode::Transposed => UpLayer::Transposed(ConvTranspose2d::new(
                        &mut p, &name, cin, cout, 3, 2, 1, 1, true, init, &mut rng,
                    )),
                }
            })
            .collect();
        let head = Conv2d::new(&mut p, "head", b, config.channels, 7, 1, 0, true, init, &mut rng);
        Ok(Generator {
            config,
            params: p,
            stem,
            down,
            blocks,
            up,
            head,
        })
    }

    pub fn feature_dims(&self) -> (usize, usize, usize) {
        self.config.feature_dims()
    }

    fn conv_norm_relu(&self, f: &mut Forward<'_, T>, conv: &Conv2d, x: Var) -> Result<Var> {
        let y = conv.forward(f, x)?;
        let y = f.g.instance_norm(y, T::lit(NORM_EPS));
        Ok(f.g.relu(y))
    }

    fn res_block(&self, f: &mut Forward<'_, T>, blk: &ResBlock, x: Var) -> Result<Var> {
        let y = f.g.reflect_pad(x, 1)?;
        let y = blk.c1.forward(f, y)?;
        let y = f.g.instance_norm(y, T::lit(NORM_EPS));
        let y = f.g.relu(y);
        let y = f.g.reflect_pad(y, 1)?;
        let y = blk.c2.forward(f, y)?;
        let y = f.g.instance_norm(y, T::lit(NORM_EPS));
        f.g.add(x, y)
    }

    /// Encoder `f`: stem, downsampling and the residual blocks before the mixing point.
    pub fn encode(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (_, c, h, w) = f.g.value(x).dims4();
        check_divisible(h, w)?;
        if c != self.config.channels {
            return Err(Error::Shape(format!(
                "generator expects {} channels, got {c}",
                self.config.channels
            )));
        }
        let y = f.g.reflect_pad(x, 3)?;
        let mut y = self.conv_norm_relu(f, &self.stem, y)?;
        for d in &self.down {
            y = self.conv_norm_relu(f, d, y)?;
        }
        for blk in &self.blocks[..self.config.mix_after_block] {
            y = self.res_block(f, blk, y)?;
        }
        Ok(y)
    }

    /// Decoder `g`: remaining residual blocks, upsampling and the `tanh` head.
    pub fn decode(&self, f: &mut Forward<'_, T>, e: Var) -> Result<Var> {
        let (_, c, _, _) = f.g.value(e).dims4();
        if c != 4 * self.config.base_channels {
            return Err(Error::Shape(format!(
                "decoder expects {} feature channels, got {c}",
                4 * self.config.base_channels
            )));
        }
        let mut y = e;
        for blk in &self.blocks[self.config.mix_after_block..] {
            y = self.res_block(f, blk, y)?;
        }
        for layer in &self.up {
            y = match layer {
                UpLayer::ResizeConv(conv) => {
                    let u = f.g.upsample_nearest(y, 2)?;
                    self.conv_norm_relu(f, conv, u)?
                }
                UpLayer::Transposed(conv) => {
                    let u = conv.forward(f, y)?;
                    let u = f.g.instance_norm(u, T::lit(NORM_EPS));
                    f.g.relu(u)
                }
            };
        }
        let y = f.g.reflect_pad(y, 3)?;
        let y = self.head.forward(f, y)?;
        Ok(f.g.tanh(y))
    }

    /// `g(e1 * m + e2 * (1 - m))` on the graph.
    pub fn generate(&self, f: &mut Forward<'_, T>, x1: Var, x2: Var, masks: &[MixMask]) -> Result<Var> {
        let e1 = self.encode(f, x1)?;
        let e2 = self.encode(f, x2)?;
        let mixed = mix_vars(f.g, e1, e2, masks)?;
        self.decode(f, mixed)
    }

    /// No-grad generation on plain tensors.
    pub fn generate_tensor(&self, x1: &Tensor<T>, x2: &Tensor<T>, masks: &[MixMask]) -> Result<Tensor<T>> {
        generate(self, x1, x2, masks)
    }
}

/// Encoder/decoder pair around the mixing point.
pub trait FeatureCodec<T: Scalar> {
    fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn decode(&self, e: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> FeatureCodec<T> for Generator<T> {
    fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mut f = Forward::new(&mut g, &p, false);
        let e = Generator::encode(self, &mut f, xv)?;
        Ok(g.value(e).clone())
    }

    fn decode(&self, e: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let ev = g.constant(e.clone());
        let mut f = Forward::new(&mut g, &p, false);
        let y = Generator::decode(self, &mut f, ev)?;
        Ok(g.value(y).clone())
    }
}

fn check_masks(n: usize, h: usize, w: usize, masks: &[MixMask]) -> Result<()> {
    if masks.len() != n {
        return Err(Error::Shape(format!("{} masks for a batch of {n}", masks.len())));
    }
    if let Some(m) = masks.iter().find(|m| (m.height, m.width) != (h, w)) {
        return Err(Error::Shape(format!(
            "mask is {}x{}, features are {h}x{w}",
            m.height, m.width
        )));
    }
    Ok(())
}

pub(crate) fn mix_vars<T: Scalar>(g: &mut Graph<T>, e1: Var, e2: Var, masks: &[MixMask]) -> Result<Var> {
    let (n, _, h, w) = g.value(e1).dims4();
    check_masks(n, h, w, masks)?;
    g.mask_mix(e1, e2, &stack_masks(masks))
}

/// Per-location selection `e1 * m + e2 * (1 - m)` with one mask per sample.
pub fn mix_features<T: Scalar>(e1: &Tensor<T>, e2: &Tensor<T>, masks: &[MixMask]) -> Result<Tensor<T>> {
    if e1.shape() != e2.shape() || e1.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "features {:?} and {:?} differ",
            e1.shape(),
            e2.shape()
        )));
    }
    let (n, c, h, w) = e1.dims4();
    check_masks(n, h, w, masks)?;
    let mut out = e2.clone();
    for (i, m) in masks.iter().enumerate() {
        let src = e1.sample(i);
        let dst = out.sample_mut(i);
        for ch in 0..c {
            for (p, &bit) in m.bits().iter().enumerate() {
                if bit {
                    dst[ch * h * w + p] = src[ch * h * w + p];
                }
            }
        }
    }
    Ok(out)
}

/// `decode(mix(encode(x1), encode(x2), m))` for any codec.
pub fn generate<T: Scalar, C: FeatureCodec<T> + ?Sized>(
    codec: &C,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    masks: &[MixMask],
) -> Result<Tensor<T>> {
    let e1 = codec.encode(x1)?;
    let e2 = codec.encode(x2)?;
    codec.decode(&mix_features(&e1, &e2, masks)?)
}

// ---- discriminator ------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub block_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    /// Zero padding of the block convolutions.
    pub padding: usize,
    /// Kernel of the final 1-channel projection (stride 1, no padding).
    pub head_kernel: usize,
    pub leaky_slope: f64,
    pub norm_first_block: bool,
    pub init_std: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            channels: 3,
            block_channels: vec![64, 128, 256, 512],
            kernel: 4,
            stride: 1,
            padding: 0,
            head_kernel: 1,
            leaky_slope: 0.2,
            norm_first_block: false,
            init_std: 0.02,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return Err(Error::Invalid("discriminator needs non-empty positive block_channels".into()));
        }
        if self.kernel == 0 || self.stride == 0 || self.head_kernel == 0 {
            return Err(Error::Invalid("discriminator kernel and stride must be positive".into()));
        }
        Ok(())
    }

    fn layer_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Spatial size of the patch score map for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let mut hw = (h, w);
        for _ in 0..self.block_channels.len() {
            hw = (self.layer_out(hw.0)?, self.layer_out(hw.1)?);
        }
        let head = |n: usize| (n >= self.head_kernel).then(|| n - self.head_kernel + 1);
        Some((head(hw.0)?, head(hw.1)?)).filter(|&(a, b)| a > 0 && b > 0)
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    pub config: DiscriminatorConfig,
    pub params: ParamStore<T>,
    blocks: Vec<Conv2d>,
    head: Conv2d,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let init = Init::Normal(config.init_std);
        let mut cin = config.channels;
        let mut blocks = Vec::new();
        for (i, &c) in config.block_channels.iter().enumerate() {
            blocks.push(Conv2d::new(
                &mut p,
                &format!("block{i}"),
                cin,
                c,
                config.kernel,
                config.stride,
                config.padding,
                true,
                init,
                &mut rng,
            ));
            cin = c;
        }
        let head = Conv2d::new(&mut p, "head", cin, 1, config.head_kernel, 1, 0, true, init, &mut rng);
        Ok(Discriminator {
            config,
            params: p,
            blocks,
            head,
        })
    }

    /// Per-patch realness scores in `(0, 1)`, shape `[N, 1, h', w']`.
    pub fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (_, _, h, w) = f.g.value(x).dims4();
        if self.config.output_size(h, w).is_none() {
            return Err(Error::Shape(format!(
                "{h}x{w} input is smaller than the discriminator's receptive field"
            )));
        }
        let mut y = x;
        for (i, conv) in self.blocks.iter().enumerate() {
            y = conv.forward(f, y)?;
            if i > 0 || self.config.norm_first_block {
                y = f.g.instance_norm(y, T::lit(NORM_EPS));
            }
            y = f.g.leaky_relu(y, T::lit(self.config.leaky_slope));
        }
        let y = self.head.forward(f, y)?;
        Ok(f.g.sigmoid(y))
    }

    pub fn discriminate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mut f = Forward::new(&mut g, &p, false);
        let y = self.forward(&mut f, xv)?;
        Ok(g.value(y).clone())
    }
}

/// `[0, 1]` intensities to the model range `[-1, 1]`.
pub fn to_model_range<T: Scalar>(x: &Tensor<f32>) -> Tensor<T> {
    x.cast::<T>().map(|v| v * T::lit(2.0) - T::one())
}

/// Model range `[-1, 1]` back to `[0, 1]` intensities.
pub fn from_model_range<T: Scalar>(x: &Tensor<T>) -> Tensor<f32> {
    x.map(|v| (v + T::one()) * T::lit(0.5)).cast::<f32>()
}
