//! Alternating discriminator/generator optimization, logging, checkpoints
//! and resume.
//!
//! Each batch runs one generator forward pass, then one discriminator
//! update on `d_loss`, then one generator update on
//! `g_adv + lambda_fm * g_fm` computed against the freshly updated
//! discriminator.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sareo_nn::conv::Needs;
use sareo_nn::ops::mix_seed;
use sareo_nn::{Adam, Mode, Tensor};

use crate::bundle::{ArchConfig, BundleMeta, ModelBundle};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::manifest::{root_of, Manifest};
use crate::raster::{Conditioning, Sample, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 = only the final one).
    pub checkpoint_every: u64,
    pub conditioning: Conditioning,
    /// Linear decay to zero over the second half of training.
    pub lr_decay: bool,
    /// Skip discriminator updates.
    pub freeze_discriminator: bool,
    /// Stop after this many optimization steps in total.
    pub max_steps: Option<u64>,
    pub loss: LossConfig,
    pub arch: ArchConfig,
}

impl TrainConfig {
    pub fn new(conditioning: Conditioning, seed: u64) -> Self {
        TrainConfig {
            batch_size: 4,
            epochs: 400,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed,
            checkpoint_every: 10,
            loss: LossConfig::for_conditioning(&conditioning),
            conditioning,
            lr_decay: false,
            freeze_discriminator: false,
            max_steps: None,
            arch: ArchConfig::default(),
        }
    }

    /// Small network, few epochs, synthetic 64-pixel chips.
    pub fn desk(conditioning: Conditioning, seed: u64) -> Self {
        TrainConfig {
            epochs: 5,
            checkpoint_every: 1,
            arch: ArchConfig::desk(),
            ..TrainConfig::new(conditioning, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be > 0", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        self.loss.validate(&self.conditioning)
    }

    pub fn optimizer(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..Adam::default()
        }
    }

    /// Multiplier on `lr` during `epoch` (0-based).
    pub fn lr_scale(&self, epoch: u64) -> f64 {
        if !self.lr_decay || self.epochs == 0 {
            return 1.0;
        }
        let start = self.epochs / 2;
        if epoch < start {
            1.0
        } else {
            1.0 - (epoch - start) as f64 / (self.epochs - start) as f64
        }
    }

    pub fn bundle_meta(&self, manifest: &Manifest) -> BundleMeta {
        BundleMeta {
            sar_modality: manifest.header.sar_modality,
            conditioning: self.conditioning.clone(),
            loss: self.loss.clone(),
            arch: self.arch.clone(),
            seed: self.seed,
        }
    }
}

/// Scalar outcome of one optimization step; also the log line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub epoch: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_fm: f64,
    pub l1_monitor: f64,
    pub wall_ms: f64,
}

/// Batched tensors for one step.
struct Batch {
    x: Tensor,
    s: Vec<Tensor>,
    y: Tensor,
}

fn stack_chips<'a>(chips: impl Iterator<Item = &'a crate::raster::RasterChip>) -> Result<Tensor> {
    let items = chips
        .map(|c| Ok(c.to_unit_signed()?.to_tensor()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&items)?)
}

fn assemble(batch: &[Sample], conditioning: &Conditioning) -> Result<Batch> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus("empty batch".into()));
    }
    for s in batch {
        if &s.conditioning() != conditioning {
            return Err(Error::Config(format!(
                "sample {} carries {}, run expects {}",
                s.id,
                s.conditioning(),
                conditioning
            )));
        }
    }
    let x = stack_chips(batch.iter().map(|s| &s.sar))?;
    let y = stack_chips(batch.iter().map(|s| &s.target_eo))?;
    let s = (0..conditioning.kinds().len())
        .map(|k| stack_chips(batch.iter().map(|s| &s.conditions[k].1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch { x, s, y })
}

/// Uniform noise plane in [-1, 1] for the objectives that take one.
pub fn noise_plane(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * h * w).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    Tensor::from_vec([n, 1, h, w], data).expect("length matches shape")
}

/// Splits per-scale tensors with batch `2n` into (first n, last n).
fn halves(t: &Tensor) -> (Tensor, Tensor) {
    let n = t.batch() / 2;
    let first: Vec<Tensor> = (0..n).map(|i| t.select(i)).collect();
    let second: Vec<Tensor> = (n..2 * n).map(|i| t.select(i)).collect();
    (
        Tensor::stack(&first).expect("same shapes"),
        Tensor::stack(&second).expect("same shapes"),
    )
}

fn numeric(batch: &[Sample], step: u64, what: impl std::fmt::Display) -> Error {
    let ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
    Error::Numeric(format!("step {step}, batch [{}]: {what}", ids.join(", ")))
}

/// One discriminator update followed by one generator update.
pub fn train_step(bundle: &mut ModelBundle, batch: &[Sample], cfg: &TrainConfig) -> Result<StepReport> {
    let started = Instant::now();
    bundle.check_conditioning(&cfg.conditioning)?;
    if bundle.meta.loss != cfg.loss {
        return Err(Error::Config("loss config differs from the bundle's".into()));
    }
    let b = assemble(batch, &cfg.conditioning)?;
    let step = bundle.step;
    let objective = cfg.loss.objective;
    let form = cfg.loss.adversarial_form;
    let n = b.x.batch();
    let (h, w) = (b.x.height(), b.x.width());

    let noise = objective
        .uses_noise_plane()
        .then(|| noise_plane(n, h, w, mix_seed(mix_seed(cfg.seed, 0x401_5E), step)));
    let s_refs: Vec<&Tensor> = b.s.iter().collect();
    let g_in = objective.generator_input(&b.x, &s_refs, noise.as_ref())?;
    let (fake, g_caches) = bundle
        .generator
        .forward(&g_in, Mode::train(mix_seed(cfg.seed, step)))?;
    if !fake.is_finite() {
        return Err(numeric(batch, step, "generator produced non-finite output"));
    }
    let cond = objective.discriminator_condition(&b.x, &s_refs)?;
    let d_input = |y: &Tensor| -> Result<Tensor> {
        Ok(match &cond {
            Some(c) => Tensor::cat_channels(&[c, y])?,
            None => y.clone(),
        })
    };
    let real_in = d_input(&b.y)?;
    let fake_in = d_input(&fake)?;
    let opt = cfg.optimizer();
    let lr_scale = cfg.lr_scale(bundle.epoch);

    // Discriminator: real and fake stacked into one 2n batch.
    let both = Tensor::stack(&[real_in.clone(), fake_in.clone()])?;
    let (outs, tape) = bundle.discriminator.forward(&both, !cfg.freeze_discriminator)?;
    let (real_logits, fake_logits): (Vec<Tensor>, Vec<Tensor>) = outs.iter().map(|o| halves(&o.logits)).unzip();
    let (d_loss, g_real, g_fake) =
        losses::d_loss_grad(&real_logits, &fake_logits, form).map_err(|e| numeric(batch, step, e))?;
    if !d_loss.is_finite() {
        return Err(numeric(batch, step, format!("d_loss {d_loss}")));
    }
    if let Some(tape) = tape {
        let logit_grads = g_real
            .iter()
            .zip(&g_fake)
            .map(|(r, f)| Tensor::stack(&[r.clone(), f.clone()]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let (_, grads) = bundle
            .discriminator
            .backward(
                &tape,
                &logit_grads,
                None,
                Needs {
                    input: false,
                    params: true,
                },
            )?;
        let mut params = bundle.discriminator.params_mut();
        opt.step(&mut bundle.d_opt, &mut params, &grads, lr_scale);
    }

    // Generator: against the updated discriminator.
    let (real_outs, _) = bundle.discriminator.forward(&real_in, false)?;
    let (fake_outs, tape) = bundle.discriminator.forward(&fake_in, true)?;
    let tape = tape.expect("recorded");
    let fake_logits: Vec<Tensor> = fake_outs.iter().map(|o| o.logits.clone()).collect();
    let (g_adv, adv_grads) = losses::g_adv_loss_grad(&fake_logits, form).map_err(|e| numeric(batch, step, e))?;
    let real_feats: Vec<Vec<Tensor>> = real_outs.into_iter().map(|o| o.features).collect();
    let fake_feats: Vec<Vec<Tensor>> = fake_outs.into_iter().map(|o| o.features).collect();
    let (g_fm, mut fm_grads) = losses::feature_matching_loss_grad(&real_feats, &fake_feats)?;
    losses::total_g_loss(g_adv, g_fm, &cfg.loss).map_err(|e| numeric(batch, step, e))?;
    let lambda = cfg.loss.lambda_fm as f32;
    for scale in fm_grads.iter_mut() {
        for g in scale.iter_mut() {
            g.scale(lambda);
        }
    }
    for g in &adv_grads {
        if !g.is_finite() {
            return Err(numeric(batch, step, "non-finite adversarial gradient"));
        }
    }
    let (d_in_grad, _) = bundle.discriminator.backward(
        &tape,
        &adv_grads,
        (lambda != 0.0).then_some(fm_grads.as_slice()),
        Needs {
            input: true,
            params: false,
        },
    )?;
    let d_in_grad = d_in_grad.expect("input gradient requested");
    let y_grad = d_in_grad.narrow_channels(d_in_grad.channels() - fake.channels(), fake.channels())?;
    let g_grads = bundle.generator.backward(&g_caches, &y_grad)?;
    if g_grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(numeric(batch, step, "non-finite generator gradient"));
    }
    let mut params = bundle.generator.net.params_mut();
    opt.step(&mut bundle.g_opt, &mut params, &g_grads, lr_scale);

    let l1_monitor = fake
        .data()
        .iter()
        .zip(b.y.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / fake.data().len() as f64;
    bundle.step += 1;
    Ok(StepReport {
        step,
        epoch: bundle.epoch,
        d_loss,
        g_adv,
        g_fm,
        l1_monitor,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Sample order for `epoch`: a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch));
    order.shuffle(&mut rng);
    order
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_path(out_dir: &Path, epoch: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"))
}

/// Loads the train split into memory in manifest order.
pub fn load_split(manifest: &Manifest, root: &Path, conditioning: &Conditioning, split: Split) -> Result<Vec<Sample>> {
    manifest
        .split(split)
        .map(|r| manifest.load_sample(root, r, conditioning))
        .collect()
}

/// Trains from scratch, or continues from `resume`, up to `cfg.epochs`
/// completed epochs. Log lines are appended to `out_dir/train_log.jsonl`.
pub fn fit(
    manifest: &Manifest,
    manifest_path: &Path,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<ModelBundle> {
    cfg.validate()?;
    let samples = load_split(manifest, &root_of(manifest_path), &cfg.conditioning, Split::Train)?;
    if samples.is_empty() {
        return Err(Error::EmptyCorpus("manifest has no train samples".into()));
    }
    let meta = cfg.bundle_meta(manifest);
    let mut bundle = match resume {
        Some(path) => {
            let b = ModelBundle::load(path)?;
            if b.meta != meta {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different configuration",
                    path.display()
                )));
            }
            b
        }
        None => ModelBundle::init(meta)?,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size) as u64;
    'epochs: while bundle.epoch < cfg.epochs {
        let order = epoch_order(samples.len(), cfg.seed, bundle.epoch);
        let done = bundle.step.saturating_sub(bundle.epoch * steps_per_epoch) as usize;
        for idx in order.chunks(cfg.batch_size).skip(done) {
            if cfg.max_steps.is_some_and(|m| bundle.step >= m) {
                break 'epochs;
            }
            let batch: Vec<Sample> = idx.iter().map(|&i| samples[i].clone()).collect();
            let report = match train_step(&mut bundle, &batch, cfg) {
                Ok(r) => r,
                Err(e @ Error::Numeric(_)) => {
                    let dump = serde_json::json!({
                        "step": bundle.step,
                        "epoch": bundle.epoch,
                        "batch": batch.iter().map(|s| &s.id).collect::<Vec<_>>(),
                        "error": e.to_string(),
                    });
                    let p = out_dir.join("nan_dump.json");
                    fs::write(&p, dump.to_string()).map_err(|e| Error::io(&p, e))?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            log::debug!("step {} d {:.4} g {:.4} l1 {:.4}", report.step, report.d_loss, report.g_adv, report.l1_monitor);
            let line = serde_json::to_string(&report).expect("report serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
        bundle.epoch += 1;
        if cfg.checkpoint_every > 0 && bundle.epoch % cfg.checkpoint_every == 0 {
            bundle.save(&checkpoint_path(out_dir, bundle.epoch))?;
        }
    }
    bundle.save(&out_dir.join(FINAL_CHECKPOINT))?;
    Ok(bundle)
}

/// Parses a training log.
pub fn read_log(path: &Path) -> Result<Vec<StepReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format("training log", e.to_string())))
        .collect()
}
