//! Model bundle (generator, discriminator ensemble, optimizer state) and
//! its checkpoint container.
//!
//! Checkpoint layout, little-endian:
//!
//! ```text
//! "SAREOCKP" | u32 version | u64 header length | JSON header
//! | f32 payload (tensors in header order) | SHA-256 of all preceding bytes
//! ```
//!
//! The JSON header carries every config record, counters and the tensor
//! directory, so [`inspect`] can describe a checkpoint without building a
//! model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sareo_nn::{AdamState, Mode};

use crate::chipio::write_atomic;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{DiscriminatorConfig, Generator, GeneratorConfig, MultiScaleDiscriminator, NormKind};
use crate::raster::{concat_conditioning, Conditioning, ModalityKind, RasterChip, ValueRange};

pub const MAGIC: &[u8; 8] = b"SAREOCKP";
pub const VERSION: u32 = 1;

/// Architecture knobs independent of channel plumbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub g_base_width: usize,
    pub g_downsample: usize,
    pub g_resblocks: usize,
    pub dropout_rate: f32,
    pub d_base_width: usize,
    pub d_layers: usize,
    pub d_scales: usize,
}

impl Default for ArchConfig {
    /// pix2pixHD global generator with three discriminators.
    fn default() -> Self {
        ArchConfig {
            g_base_width: 64,
            g_downsample: 4,
            g_resblocks: 9,
            dropout_rate: 0.5,
            d_base_width: 64,
            d_layers: 3,
            d_scales: 3,
        }
    }
}

impl ArchConfig {
    /// Narrow network for 64-pixel chips on a CPU.
    pub fn desk() -> Self {
        ArchConfig {
            g_base_width: 8,
            g_downsample: 2,
            g_resblocks: 3,
            dropout_rate: 0.5,
            d_base_width: 8,
            d_layers: 2,
            d_scales: 3,
        }
    }
}

/// What the bundle was trained on; checked before inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub sar_modality: ModalityKind,
    pub conditioning: Conditioning,
    pub loss: LossConfig,
    pub arch: ArchConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub meta: BundleMeta,
    pub generator: Generator,
    pub discriminator: MultiScaleDiscriminator,
    pub g_opt: AdamState<f32>,
    pub d_opt: AdamState<f32>,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimization steps.
    pub step: u64,
}

impl ModelBundle {
    pub fn init(meta: BundleMeta) -> Result<Self> {
        meta.loss.validate(&meta.conditioning)?;
        let sar = meta.sar_modality.channel_count();
        let cond = meta.conditioning.channel_count();
        let objective = meta.loss.objective;
        let a = &meta.arch;
        let generator = Generator::new(
            GeneratorConfig {
                in_channels: objective.generator_in_channels(sar, cond),
                out_channels: 3,
                base_width: a.g_base_width,
                n_downsample: a.g_downsample,
                n_resblocks: a.g_resblocks,
                dropout_rate: a.dropout_rate,
            },
            meta.seed,
        )?;
        let discriminator = MultiScaleDiscriminator::new(
            DiscriminatorConfig {
                in_channels: objective.discriminator_cond_channels(sar, cond) + 3,
                num_scales: a.d_scales,
                base_width: a.d_base_width,
                n_layers: a.d_layers,
                norm: NormKind::Instance,
            },
            meta.seed ^ 0xD15C,
        )?;
        let g_opt = AdamState::new(generator.net.params().iter().map(|p| p.len()));
        let d_opt = AdamState::new(discriminator.params().iter().map(|p| p.len()));
        Ok(ModelBundle {
            meta,
            generator,
            discriminator,
            g_opt,
            d_opt,
            epoch: 0,
            step: 0,
        })
    }

    /// Fails fast when a run asks for conditioning the bundle was not trained with.
    pub fn check_conditioning(&self, conditioning: &Conditioning) -> Result<()> {
        if &self.meta.conditioning != conditioning {
            return Err(Error::Config(format!(
                "bundle was trained with {}, requested {}",
                self.meta.conditioning, conditioning
            )));
        }
        Ok(())
    }

    /// Inference-mode generation from a SAR chip and the conditioning chips
    /// in the bundle's order. Objectives that take a noise plane get a fixed one.
    pub fn translate_chips(&self, sar: &RasterChip, conditions: &[RasterChip]) -> Result<RasterChip> {
        let sar_channels = self.meta.sar_modality.channel_count();
        if sar.channels() != sar_channels {
            return Err(Error::Modality(format!(
                "bundle expects {} SAR channels, got {}",
                sar_channels,
                sar.channels()
            )));
        }
        let kinds = self.meta.conditioning.kinds();
        if conditions.len() != kinds.len() {
            return Err(Error::Config(format!(
                "bundle expects {} conditioning chips, got {}",
                kinds.len(),
                conditions.len()
            )));
        }
        let x = sar.to_unit_signed()?;
        let conds = conditions
            .iter()
            .zip(kinds)
            .map(|(c, k)| {
                if c.channels() != k.channel_count() {
                    return Err(Error::Modality(format!("{k} chip has {} channels", c.channels())));
                }
                c.to_unit_signed()
            })
            .collect::<Result<Vec<_>>>()?;
        let joined = concat_conditioning(&x, &conds)?;
        let objective = self.meta.loss.objective;
        let input = if objective.uses_noise_plane() {
            let xt = x.to_tensor();
            let noise = crate::train::noise_plane(1, x.height(), x.width(), self.meta.seed);
            objective.generator_input(&xt, &[], Some(&noise))?
        } else {
            joined.to_tensor()
        };
        let (y, _) = self.generator.forward(&input, Mode::INFERENCE)?;
        let mut out = RasterChip::from_tensor_sample(&y, 0, ValueRange::UnitSigned)?;
        out.geo = sar.geo;
        Ok(out)
    }

    fn tensors(&self) -> Vec<(String, &[f32])> {
        let mut out: Vec<(String, &[f32])> = Vec::new();
        for (i, p) in self.generator.net.params().into_iter().enumerate() {
            out.push((format!("generator.{i}"), p));
        }
        for (i, p) in self.discriminator.params().into_iter().enumerate() {
            out.push((format!("discriminator.{i}"), p));
        }
        for (name, st) in [("g_opt", &self.g_opt), ("d_opt", &self.d_opt)] {
            for (i, m) in st.m.iter().enumerate() {
                out.push((format!("{name}.m.{i}"), m));
            }
            for (i, v) in st.v.iter().enumerate() {
                out.push((format!("{name}.v.{i}"), v));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let header = CheckpointHeader {
            meta: self.meta.clone(),
            generator: self.generator.config.clone(),
            discriminator: self.discriminator.config.clone(),
            epoch: self.epoch,
            step: self.step,
            g_opt_step: self.g_opt.step,
            d_opt_step: self.d_opt.step,
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    len: t.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in *t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (header, payload_start) = parse_header(bytes, origin)?;
        let integrity = |message: String| Error::Integrity {
            path: origin.to_path_buf(),
            message,
        };
        let mut bundle = ModelBundle::init(header.meta.clone())?;
        if bundle.generator.config != header.generator || bundle.discriminator.config != header.discriminator {
            return Err(integrity("network configs disagree with bundle metadata".into()));
        }
        let expected: Vec<(String, usize)> = bundle.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
        let found: Vec<(String, usize)> = header.tensors.iter().map(|t| (t.name.clone(), t.len)).collect();
        if expected != found {
            return Err(integrity("tensor directory does not match the architecture".into()));
        }
        let mut cursor = payload_start;
        let mut next = |len: usize| -> Vec<f32> {
            let v = bytes[cursor..cursor + 4 * len]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            cursor += 4 * len;
            v
        };
        for p in bundle.generator.net.params_mut() {
            *p = next(p.len());
        }
        for p in bundle.discriminator.params_mut() {
            *p = next(p.len());
        }
        for st in [&mut bundle.g_opt, &mut bundle.d_opt] {
            for m in st.m.iter_mut() {
                *m = next(m.len());
            }
            for v in st.v.iter_mut() {
                *v = next(v.len());
            }
        }
        bundle.g_opt.step = header.g_opt_step;
        bundle.d_opt.step = header.d_opt_step;
        bundle.epoch = header.epoch;
        bundle.step = header.step;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ModelBundle::from_bytes(&bytes, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub meta: BundleMeta,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub epoch: u64,
    pub step: u64,
    pub g_opt_step: u64,
    pub d_opt_step: u64,
    pub tensors: Vec<TensorEntry>,
}

/// Verifies magic, version, checksum and sizes; returns the header and payload offset.
fn parse_header(bytes: &[u8], origin: &Path) -> Result<(CheckpointHeader, usize)> {
    let integrity = |message: &str| Error::Integrity {
        path: origin.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
        return Err(integrity("not a checkpoint (bad magic or truncated)"));
    }
    let body = &bytes[..bytes.len() - 32];
    if Sha256::digest(body).as_slice() != &bytes[bytes.len() - 32..] {
        return Err(integrity("checksum mismatch"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(integrity("unsupported checkpoint version"));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if 20 + hlen > body.len() {
        return Err(integrity("header length exceeds file"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..20 + hlen]).map_err(|e| integrity(&format!("bad header: {e}")))?;
    let payload: usize = header.tensors.iter().map(|t| t.len * 4).sum();
    if 20 + hlen + payload != body.len() {
        return Err(integrity("payload size does not match tensor directory"));
    }
    Ok((header, 20 + hlen))
}

/// Reads and verifies a checkpoint's header without constructing the model.
pub fn inspect(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(&bytes, path)?.0)
}
