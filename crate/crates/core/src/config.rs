//! Flat `section.key = value` run configuration.
//!
//! Values are resolved as default, then config file, then command-line
//! overrides. [`RunConfig::to_text`] prints every key and is written to each
//! output directory as `config.resolved`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::bundle::ArchConfig;
use crate::chipio::write_atomic;
use crate::error::{Error, Result};
use crate::ingest::IngestConfig;
use crate::losses::{AdversarialForm, LossConfig, Objective};
use crate::raster::Conditioning;
use crate::train::TrainConfig;

pub const RESOLVED_FILE: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq)]
pub struct OsmOptions {
    pub server: String,
    pub user_agent: String,
    pub blank_fill: bool,
    pub default_resolution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub misalign: usize,
    pub speckle: f64,
    pub n_shapes: usize,
    pub split: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ingest: IngestConfig,
    pub train: TrainConfig,
    pub lpips_weights: String,
    pub osm: OsmOptions,
    pub synth: SynthOptions,
    objective_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ingest: IngestConfig::new(0),
            train: TrainConfig::new(Conditioning::baseline(), 0),
            lpips_weights: crate::eval::TEST_BACKBONE.into(),
            osm: OsmOptions {
                server: "https://tile.openstreetmap.org".into(),
                user_agent: String::new(),
                blank_fill: false,
                default_resolution: 10.0,
            },
            synth: SynthOptions {
                n: 64,
                size: 256,
                seed: 7,
                misalign: 0,
                speckle: 0.5,
                n_shapes: 6,
                split: 0.8,
            },
            objective_set: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Unconditional => "unconditional",
        Objective::Conditional => "conditional",
        Objective::Pix2pix => "pix2pix",
        Objective::MultiConditional => "multi_conditional",
    }
}

fn form_name(f: AdversarialForm) -> &'static str {
    match f {
        AdversarialForm::LogSigmoid => "log_sigmoid",
        AdversarialForm::LogSigmoidMinimax => "log_sigmoid_minimax",
        AdversarialForm::LeastSquares => "least_squares",
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    /// Default, then `file`, then `overrides` (later wins).
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match file {
            Some(p) => parse_pairs(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            pairs.insert(k.clone(), v.clone());
        }
        let mut cfg = RunConfig::default();
        if let Some(p) = pairs.remove("train.preset") {
            cfg.set("train.preset", &p)?;
        }
        if let Some(c) = pairs.remove("train.conditioning") {
            cfg.set("train.conditioning", &c)?;
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (i, t, s) = (&mut self.ingest, &mut self.train, &mut self.synth);
        match key {
            "ingest.chip_size" => i.chip_size = parse(key, value)?,
            "ingest.chip_stride" => i.chip_stride = parse(key, value)?,
            "ingest.v_threshold" => i.v_mean_threshold = parse(key, value)?,
            "ingest.occlusion_max" => i.occlusion_max_fraction = parse(key, value)?,
            "ingest.split" => i.split_ratio = parse(key, value)?,
            "ingest.seed" => i.seed = parse(key, value)?,
            "ingest.ratio_clip" => i.ratio_clip = parse(key, value)?,
            "ingest.percentile_lo" => i.percentiles.0 = parse(key, value)?,
            "ingest.percentile_hi" => i.percentiles.1 = parse(key, value)?,
            "train.preset" => {
                let c = t.conditioning.clone();
                let seed = t.seed;
                *t = match value.trim() {
                    "full" => TrainConfig::new(c, seed),
                    "desk" => TrainConfig::desk(c, seed),
                    other => return Err(Error::Config(format!("unknown preset `{other}` (full|desk)"))),
                };
            }
            "train.conditioning" => {
                t.conditioning = value.parse()?;
                if !self.objective_set {
                    t.loss.objective = LossConfig::for_conditioning(&t.conditioning).objective;
                }
            }
            "train.batch" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.beta1" => t.beta1 = parse(key, value)?,
            "train.beta2" => t.beta2 = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "train.lr_decay" => t.lr_decay = parse_bool(key, value)?,
            "train.freeze_discriminator" => t.freeze_discriminator = parse_bool(key, value)?,
            "train.max_steps" => {
                t.max_steps = match value.trim() {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "model.g_base_width" => t.arch.g_base_width = parse(key, value)?,
            "model.g_downsample" => t.arch.g_downsample = parse(key, value)?,
            "model.g_resblocks" => t.arch.g_resblocks = parse(key, value)?,
            "model.dropout" => t.arch.dropout_rate = parse(key, value)?,
            "model.d_base_width" => t.arch.d_base_width = parse(key, value)?,
            "model.d_layers" => t.arch.d_layers = parse(key, value)?,
            "model.d_scales" => t.arch.d_scales = parse(key, value)?,
            "loss.objective" => {
                t.loss.objective = match value.trim() {
                    "unconditional" => Objective::Unconditional,
                    "conditional" => Objective::Conditional,
                    "pix2pix" => Objective::Pix2pix,
                    "multi_conditional" => Objective::MultiConditional,
                    other => return Err(Error::Config(format!("unknown objective `{other}`"))),
                };
                self.objective_set = true;
            }
            "loss.lambda_fm" => t.loss.lambda_fm = parse(key, value)?,
            "loss.adversarial_form" => {
                t.loss.adversarial_form = match value.trim() {
                    "log_sigmoid" => AdversarialForm::LogSigmoid,
                    "log_sigmoid_minimax" => AdversarialForm::LogSigmoidMinimax,
                    "least_squares" => AdversarialForm::LeastSquares,
                    other => return Err(Error::Config(format!("unknown adversarial form `{other}`"))),
                }
            }
            "eval.lpips_weights" => self.lpips_weights = value.trim().to_string(),
            "osm.server" => self.osm.server = value.trim().to_string(),
            "osm.user_agent" => self.osm.user_agent = value.trim().to_string(),
            "osm.blank_fill" => self.osm.blank_fill = parse_bool(key, value)?,
            "osm.default_resolution" => self.osm.default_resolution = parse(key, value)?,
            "synth.n" => s.n = parse(key, value)?,
            "synth.size" => s.size = parse(key, value)?,
            "synth.seed" => s.seed = parse(key, value)?,
            "synth.misalign" => s.misalign = parse(key, value)?,
            "synth.speckle" => s.speckle = parse(key, value)?,
            "synth.n_shapes" => s.n_shapes = parse(key, value)?,
            "synth.split" => s.split = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its effective value, sorted.
    pub fn to_text(&self) -> String {
        let (i, t, s) = (&self.ingest, &self.train, &self.synth);
        let a: &ArchConfig = &t.arch;
        let max_steps = t.max_steps.map_or("none".to_string(), |m| m.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("eval.lpips_weights", self.lpips_weights.clone()),
            ("ingest.chip_size", i.chip_size.to_string()),
            ("ingest.chip_stride", i.chip_stride.to_string()),
            ("ingest.occlusion_max", i.occlusion_max_fraction.to_string()),
            ("ingest.percentile_hi", i.percentiles.1.to_string()),
            ("ingest.percentile_lo", i.percentiles.0.to_string()),
            ("ingest.ratio_clip", i.ratio_clip.to_string()),
            ("ingest.seed", i.seed.to_string()),
            ("ingest.split", i.split_ratio.to_string()),
            ("ingest.v_threshold", i.v_mean_threshold.to_string()),
            ("loss.adversarial_form", form_name(t.loss.adversarial_form).into()),
            ("loss.lambda_fm", t.loss.lambda_fm.to_string()),
            ("loss.objective", objective_name(t.loss.objective).into()),
            ("model.d_base_width", a.d_base_width.to_string()),
            ("model.d_layers", a.d_layers.to_string()),
            ("model.d_scales", a.d_scales.to_string()),
            ("model.dropout", a.dropout_rate.to_string()),
            ("model.g_base_width", a.g_base_width.to_string()),
            ("model.g_downsample", a.g_downsample.to_string()),
            ("model.g_resblocks", a.g_resblocks.to_string()),
            ("osm.blank_fill", self.osm.blank_fill.to_string()),
            ("osm.default_resolution", self.osm.default_resolution.to_string()),
            ("osm.server", self.osm.server.clone()),
            ("osm.user_agent", self.osm.user_agent.clone()),
            ("synth.misalign", s.misalign.to_string()),
            ("synth.n", s.n.to_string()),
            ("synth.n_shapes", s.n_shapes.to_string()),
            ("synth.seed", s.seed.to_string()),
            ("synth.size", s.size.to_string()),
            ("synth.speckle", s.speckle.to_string()),
            ("synth.split", s.split.to_string()),
            ("train.batch", t.batch_size.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("train.conditioning", t.conditioning.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.freeze_discriminator", t.freeze_discriminator.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.lr_decay", t.lr_decay.to_string()),
            ("train.max_steps", max_steps),
            ("train.seed", t.seed.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        write_atomic(&out_dir.join(RESOLVED_FILE), self.to_text().as_bytes())
    }
}
