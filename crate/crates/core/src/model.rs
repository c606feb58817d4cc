//! Global generator and multi-scale patch discriminator.
//!
//! The generator is the coarse ("global") stage of a pix2pixHD-style
//! network: reflect-padded 7x7 stem, strided downsampling, residual blocks
//! with dropout, transposed-convolution upsampling and a tanh head. The
//! discriminator is an ensemble of identical patch discriminators, scale
//! `k` seeing the input average-pooled `k` times.

use serde::{Deserialize, Serialize};

use sareo_nn::conv::Needs;
use sareo_nn::ops::mix_seed;
use sareo_nn::pool::AvgPool;
use sareo_nn::{init, Cache, Conv2d, ConvTranspose2d, Layer, Mode, PadMode, Sequential, Tensor};

use crate::error::{Error, Result};
use crate::raster::{RasterChip, ValueRange};

const INIT_STD: f32 = 0.02;
const LEAK: f32 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub n_downsample: usize,
    pub n_resblocks: usize,
    pub dropout_rate: f32,
}

impl GeneratorConfig {
    /// pix2pixHD global-generator defaults for the given input width.
    pub fn new(in_channels: usize) -> Self {
        GeneratorConfig {
            in_channels,
            out_channels: 3,
            base_width: 64,
            n_downsample: 4,
            n_resblocks: 9,
            dropout_rate: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_width == 0 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.n_downsample
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Instance,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub num_scales: usize,
    pub base_width: usize,
    pub n_layers: usize,
    pub norm: NormKind,
}

impl DiscriminatorConfig {
    pub fn new(in_channels: usize) -> Self {
        DiscriminatorConfig {
            in_channels,
            num_scales: 3,
            base_width: 64,
            n_layers: 3,
            norm: NormKind::Instance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_scales == 0 || self.n_layers == 0 || self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        Ok(())
    }
}

fn conv(i: usize, o: usize, k: usize, s: usize, p: usize, mode: PadMode) -> Layer {
    Layer::Conv(Conv2d::new(i, o, k, s, p, mode))
}

fn init_params(net: &mut Sequential, seed: u64) {
    for (i, p) in net.params_mut().into_iter().enumerate() {
        // Params alternate weight, bias.
        if i % 2 == 0 {
            init::normal(p, INIT_STD, mix_seed(seed, i as u64));
        } else {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub net: Sequential,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = config.base_width;
        let mut layers = vec![
            conv(config.in_channels, w, 7, 1, 3, PadMode::Reflect),
            Layer::InstanceNorm,
            Layer::Relu,
        ];
        for i in 0..config.n_downsample {
            let m = 1 << i;
            layers.push(conv(w * m, w * m * 2, 3, 2, 1, PadMode::Zero));
            layers.push(Layer::InstanceNorm);
            layers.push(Layer::Relu);
        }
        let deep = w << config.n_downsample;
        for _ in 0..config.n_resblocks {
            layers.push(Layer::Residual(Sequential::new(vec![
                conv(deep, deep, 3, 1, 1, PadMode::Reflect),
                Layer::InstanceNorm,
                Layer::Relu,
                Layer::Dropout(config.dropout_rate),
                conv(deep, deep, 3, 1, 1, PadMode::Reflect),
                Layer::InstanceNorm,
            ])));
        }
        for i in 0..config.n_downsample {
            let m = 1 << (config.n_downsample - i);
            layers.push(Layer::ConvT(ConvTranspose2d::new(w * m, w * m / 2, 3, 2, 1, 1)));
            layers.push(Layer::InstanceNorm);
            layers.push(Layer::Relu);
        }
        layers.push(conv(w, config.out_channels, 7, 1, 3, PadMode::Reflect));
        layers.push(Layer::Tanh);
        let mut net = Sequential::new(layers);
        init_params(&mut net, seed);
        Ok(Generator { config, net })
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.config.in_channels {
            return Err(Error::Config(format!(
                "generator expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 || h < m * 2 || w < m * 2 {
            return Err(Error::Config(format!(
                "input {h}x{w} is not a multiple of {m} (2^{} downsamplings)",
                self.config.n_downsample
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Cache>)> {
        self.check_input(x.shape())?;
        Ok(self.net.forward(x, mode)?)
    }

    /// Gradients w.r.t. the generator parameters (input gradient is not needed).
    pub fn backward(&self, caches: &[Cache], gout: &Tensor) -> Result<Vec<Vec<f32>>> {
        let (_, grads) = self.net.backward(
            caches,
            gout,
            Needs {
                input: false,
                params: true,
            },
        )?;
        Ok(grads)
    }

    /// Inference on one conditioning chip. `dropout_seed` enables stochastic sampling.
    pub fn generate(&self, x_cond: &RasterChip, dropout_seed: Option<u64>) -> Result<RasterChip> {
        if x_cond.value_range() != ValueRange::UnitSigned {
            return Err(Error::Range("generator input must be unit_signed".into()));
        }
        let mode = Mode {
            dropout_seed,
            record: false,
        };
        let (y, _) = self.forward(&x_cond.to_tensor(), mode)?;
        let mut out = RasterChip::from_tensor_sample(&y, 0, ValueRange::UnitSigned)?;
        out.geo = x_cond.geo;
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }
}

/// One discriminator scale's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutput {
    pub logits: Tensor,
    /// Intermediate block outputs (every block except the logit head).
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDiscriminator {
    pub blocks: Vec<Sequential>,
}

impl PatchDiscriminator {
    fn new(cfg: &DiscriminatorConfig, seed: u64) -> Self {
        let norm = |layers: &mut Vec<Layer>| {
            if cfg.norm == NormKind::Instance {
                layers.push(Layer::InstanceNorm);
            }
        };
        let (k, p) = (4, 2);
        let mut blocks = vec![Sequential::new(vec![
            conv(cfg.in_channels, cfg.base_width, k, 2, p, PadMode::Zero),
            Layer::LeakyRelu(LEAK),
        ])];
        let mut nf = cfg.base_width;
        for _ in 1..cfg.n_layers {
            let prev = nf;
            nf = (nf * 2).min(512);
            let mut l = vec![conv(prev, nf, k, 2, p, PadMode::Zero)];
            norm(&mut l);
            l.push(Layer::LeakyRelu(LEAK));
            blocks.push(Sequential::new(l));
        }
        let prev = nf;
        nf = (nf * 2).min(512);
        let mut l = vec![conv(prev, nf, k, 1, p, PadMode::Zero)];
        norm(&mut l);
        l.push(Layer::LeakyRelu(LEAK));
        blocks.push(Sequential::new(l));
        blocks.push(Sequential::new(vec![conv(nf, 1, k, 1, p, PadMode::Zero)]));
        for (i, b) in blocks.iter_mut().enumerate() {
            init_params(b, mix_seed(seed, 1000 + i as u64));
        }
        PatchDiscriminator { blocks }
    }

    fn params(&self) -> Vec<&[f32]> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}

/// Recorded state of a multi-scale forward pass.
#[derive(Debug, Clone)]
pub struct DiscriminatorTape {
    input_shapes: Vec<[usize; 4]>,
    caches: Vec<Vec<Vec<Cache>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleDiscriminator {
    pub config: DiscriminatorConfig,
    pub scales: Vec<PatchDiscriminator>,
}

impl MultiScaleDiscriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let scales = (0..config.num_scales)
            .map(|k| PatchDiscriminator::new(&config, mix_seed(seed, k as u64)))
            .collect();
        Ok(MultiScaleDiscriminator { config, scales })
    }

    /// Runs every scale on the already-concatenated discriminator input.
    pub fn forward(&self, input: &Tensor, record: bool) -> Result<(Vec<ScaleOutput>, Option<DiscriminatorTape>)> {
        if input.channels() != self.config.in_channels {
            return Err(Error::Config(format!(
                "discriminator expects {} input channels, got {}",
                self.config.in_channels,
                input.channels()
            )));
        }
        let mode = Mode {
            dropout_seed: None,
            record,
        };
        let mut outputs = Vec::with_capacity(self.scales.len());
        let mut tape = DiscriminatorTape {
            input_shapes: Vec::new(),
            caches: Vec::new(),
        };
        let mut cur = input.clone();
        for (k, d) in self.scales.iter().enumerate() {
            if k > 0 {
                cur = AvgPool::DOWNSAMPLE.forward(&cur)?;
            }
            tape.input_shapes.push(cur.shape());
            let mut feats = Vec::with_capacity(d.blocks.len());
            let mut block_caches = Vec::with_capacity(d.blocks.len());
            let mut h = cur.clone();
            for b in &d.blocks {
                let (y, c) = b.forward(&h, mode)?;
                block_caches.push(c);
                feats.push(y.clone());
                h = y;
            }
            let logits = feats.pop().expect("at least one block");
            tape.caches.push(block_caches);
            outputs.push(ScaleOutput { logits, features: feats });
        }
        Ok((outputs, record.then_some(tape)))
    }

    /// `D(x_cond, y)`: concatenates along channels, then runs every scale.
    pub fn discriminate(&self, x_cond: &Tensor, y: &Tensor) -> Result<Vec<ScaleOutput>> {
        if x_cond.height() != y.height() || x_cond.width() != y.width() || x_cond.batch() != y.batch() {
            return Err(Error::Dimension(format!(
                "conditioning {:?} and image {:?} disagree",
                x_cond.shape(),
                y.shape()
            )));
        }
        let input = Tensor::cat_channels(&[x_cond, y])?;
        Ok(self.forward(&input, false)?.0)
    }

    /// Backward given logit and feature gradients per scale. Missing
    /// feature gradients are treated as zero. Returns the gradient with
    /// respect to the full-resolution input and (optionally) parameter
    /// gradients in [`params`](Self::params) order.
    pub fn backward(
        &self,
        tape: &DiscriminatorTape,
        logit_grads: &[Tensor],
        feature_grads: Option<&[Vec<Tensor>]>,
        needs: Needs,
    ) -> Result<(Option<Tensor>, Vec<Vec<f32>>)> {
        if logit_grads.len() != self.scales.len() {
            return Err(Error::Dimension(format!(
                "{} logit gradients for {} scales",
                logit_grads.len(),
                self.scales.len()
            )));
        }
        let mut input_grads = Vec::with_capacity(self.scales.len());
        let mut param_grads = Vec::new();
        for (k, d) in self.scales.iter().enumerate() {
            let mut g = logit_grads[k].clone();
            let n_blocks = d.blocks.len();
            let mut block_grads: Vec<Vec<Vec<f32>>> = Vec::with_capacity(n_blocks);
            for bi in (0..n_blocks).rev() {
                if bi < n_blocks - 1 {
                    if let Some(fg) = feature_grads.and_then(|f| f.get(k)).and_then(|f| f.get(bi)) {
                        g.add_assign(fg)?;
                    }
                }
                let local = Needs {
                    input: bi > 0 || needs.input,
                    params: needs.params,
                };
                let (dx, dp) = d.blocks[bi].backward(&tape.caches[k][bi], &g, local)?;
                block_grads.push(dp);
                if let Some(dx) = dx {
                    g = dx;
                }
            }
            block_grads.reverse();
            param_grads.extend(block_grads.into_iter().flatten());
            input_grads.push(g);
        }
        let dx = if needs.input {
            let mut g = input_grads.pop().expect("at least one scale");
            for k in (1..self.scales.len()).rev() {
                g = AvgPool::DOWNSAMPLE.backward(tape.input_shapes[k - 1], &g)?;
                g.add_assign(&input_grads[k - 1])?;
            }
            Some(g)
        } else {
            None
        };
        Ok((dx, param_grads))
    }

    pub fn params(&self) -> Vec<&[f32]> {
        self.scales.iter().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        self.scales.iter_mut().flat_map(|s| s.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
