//! Adversarial objectives and the discriminator feature-matching loss.
//!
//! Every loss is a pure function of per-scale discriminator outputs and
//! averages uniformly: over every element of a scale's logit grid (batch
//! and patch positions), then over scales. The `*_grad` variants also
//! return the gradient with respect to their inputs.

use serde::{Deserialize, Serialize};

use sareo_nn::Tensor;

use crate::error::{Error, Result};
use crate::raster::Conditioning;

/// Which adversarial objective the training loop plumbs together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Unconditional: `G(z)`, `D(y)`.
    Unconditional,
    /// Conditional with an explicit noise plane: `G(x, z)`, `D(x, y)`.
    Conditional,
    /// Conditional, noise supplied by dropout: `G(x)`, `D(x, y)`.
    Pix2pix,
    /// Multi-conditional: `G(x, s)`, `D(x, s, y)`.
    MultiConditional,
}

impl Objective {
    pub fn uses_noise_plane(self) -> bool {
        matches!(self, Objective::Unconditional | Objective::Conditional)
    }

    pub fn generator_in_channels(self, sar_channels: usize, cond_channels: usize) -> usize {
        match self {
            Objective::Unconditional => 1,
            Objective::Conditional => sar_channels + 1,
            Objective::Pix2pix => sar_channels,
            Objective::MultiConditional => sar_channels + cond_channels,
        }
    }

    /// Channels of the conditioning half of the discriminator input.
    pub fn discriminator_cond_channels(self, sar_channels: usize, cond_channels: usize) -> usize {
        match self {
            Objective::Unconditional => 0,
            Objective::Conditional | Objective::Pix2pix => sar_channels,
            Objective::MultiConditional => sar_channels + cond_channels,
        }
    }

    /// Generator input from SAR `x`, extra modalities `s` and an optional noise plane.
    pub fn generator_input(self, x: &Tensor, s: &[&Tensor], noise: Option<&Tensor>) -> Result<Tensor> {
        let need_noise = || noise.ok_or_else(|| Error::Config(format!("{self:?} needs a noise plane")));
        let t = match self {
            Objective::Unconditional => need_noise()?.clone(),
            Objective::Conditional => Tensor::cat_channels(&[x, need_noise()?])?,
            Objective::Pix2pix => x.clone(),
            Objective::MultiConditional => {
                let mut parts = vec![x];
                parts.extend_from_slice(s);
                Tensor::cat_channels(&parts)?
            }
        };
        Ok(t)
    }

    /// The conditioning half of the discriminator input (`None` for the unconditional objective).
    pub fn discriminator_condition(self, x: &Tensor, s: &[&Tensor]) -> Result<Option<Tensor>> {
        Ok(match self {
            Objective::Unconditional => None,
            Objective::Conditional | Objective::Pix2pix => Some(x.clone()),
            Objective::MultiConditional => {
                let mut parts = vec![x];
                parts.extend_from_slice(s);
                Some(Tensor::cat_channels(&parts)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// Log-likelihood discriminator; non-saturating generator loss `-log σ(fake)`.
    LogSigmoid,
    /// Log-likelihood discriminator; literal minimax generator loss `log(1 - σ(fake))`.
    LogSigmoidMinimax,
    /// Quadratic targets (1 for real, 0 for fake).
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub objective: Objective,
    pub lambda_fm: f64,
    pub adversarial_form: AdversarialForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            objective: Objective::MultiConditional,
            lambda_fm: 10.0,
            adversarial_form: AdversarialForm::LogSigmoid,
        }
    }
}

impl LossConfig {
    /// Multi-conditional when `conditioning` is non-empty, pix2pix-style otherwise.
    pub fn for_conditioning(conditioning: &Conditioning) -> Self {
        LossConfig {
            objective: if conditioning.is_baseline() {
                Objective::Pix2pix
            } else {
                Objective::MultiConditional
            },
            ..LossConfig::default()
        }
    }

    pub fn validate(&self, conditioning: &Conditioning) -> Result<()> {
        if !(self.lambda_fm >= 0.0 && self.lambda_fm.is_finite()) {
            return Err(Error::Config(format!("lambda_fm {} must be finite and >= 0", self.lambda_fm)));
        }
        match self.objective {
            Objective::MultiConditional if conditioning.is_baseline() => Err(Error::Config(
                "multi-conditional objective needs at least one extra modality".into(),
            )),
            Objective::Unconditional | Objective::Conditional | Objective::Pix2pix if !conditioning.is_baseline() => {
                Err(Error::Config(format!(
                    "{:?} conditions on SAR only; got {conditioning}",
                    self.objective
                )))
            }
            _ => Ok(()),
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(grids: &[Tensor], which: &str) -> Result<()> {
    for (k, g) in grids.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite {which} logits at scale {k}")));
        }
    }
    Ok(())
}

/// Mean over scales of the mean of `f` over each grid, with `df` scaled into a gradient.
fn scale_mean(grids: &[Tensor], f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> (f64, Vec<Tensor>) {
    let k = grids.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(grids.len());
    for g in grids {
        let n = g.data().len() as f64;
        let mut s = 0.0;
        let mut grad = Tensor::zeros(g.shape());
        for (v, d) in g.data().iter().zip(grad.data_mut()) {
            let x = *v as f64;
            s += f(x);
            *d = (df(x) / (n * k)) as f32;
        }
        total += s / n;
        grads.push(grad);
    }
    (total / k, grads)
}

/// Discriminator loss with gradients w.r.t. real and fake logits.
pub fn d_loss_grad(real: &[Tensor], fake: &[Tensor], form: AdversarialForm) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Dimension(format!(
            "{} real vs {} fake scales",
            real.len(),
            fake.len()
        )));
    }
    check_finite(real, "real")?;
    check_finite(fake, "fake")?;
    let ((r, gr), (f, gf)) = match form {
        AdversarialForm::LogSigmoid | AdversarialForm::LogSigmoidMinimax => (
            // -log σ(r) = softplus(-r);  -log(1 - σ(f)) = softplus(f)
            scale_mean(real, |x| softplus(-x), |x| -sigmoid(-x)),
            scale_mean(fake, softplus, sigmoid),
        ),
        AdversarialForm::LeastSquares => (
            scale_mean(real, |x| (x - 1.0).powi(2), |x| 2.0 * (x - 1.0)),
            scale_mean(fake, |x| x * x, |x| 2.0 * x),
        ),
    };
    Ok((r + f, gr, gf))
}

pub fn d_loss(real: &[Tensor], fake: &[Tensor], form: AdversarialForm) -> Result<f64> {
    Ok(d_loss_grad(real, fake, form)?.0)
}

/// Generator adversarial loss with its gradient w.r.t. fake logits.
pub fn g_adv_loss_grad(fake: &[Tensor], form: AdversarialForm) -> Result<(f64, Vec<Tensor>)> {
    if fake.is_empty() {
        return Err(Error::Dimension("no discriminator scales".into()));
    }
    check_finite(fake, "fake")?;
    Ok(match form {
        AdversarialForm::LogSigmoid => scale_mean(fake, |x| softplus(-x), |x| -sigmoid(-x)),
        // log(1 - σ(f)) = -softplus(f)
        AdversarialForm::LogSigmoidMinimax => scale_mean(fake, |x| -softplus(x), |x| -sigmoid(x)),
        AdversarialForm::LeastSquares => scale_mean(fake, |x| (x - 1.0).powi(2), |x| 2.0 * (x - 1.0)),
    })
}

pub fn g_adv_loss(fake: &[Tensor], form: AdversarialForm) -> Result<f64> {
    Ok(g_adv_loss_grad(fake, form)?.0)
}

/// Mean absolute feature difference per layer, averaged over layers then
/// scales, with the gradient w.r.t. the fake features (real ones are
/// treated as constants).
pub fn feature_matching_loss_grad(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<(f64, Vec<Vec<Tensor>>)> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Dimension(format!(
            "{} real vs {} fake feature scales",
            real.len(),
            fake.len()
        )));
    }
    let k = real.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(real.len());
    for (s, (rl, fl)) in real.iter().zip(fake).enumerate() {
        if rl.len() != fl.len() || rl.is_empty() {
            return Err(Error::Dimension(format!("feature layer count differs at scale {s}")));
        }
        let l = rl.len() as f64;
        let mut scale_sum = 0.0;
        let mut scale_grads = Vec::with_capacity(rl.len());
        for (r, f) in rl.iter().zip(fl) {
            if r.shape() != f.shape() {
                return Err(Error::Dimension(format!(
                    "feature shapes {:?} vs {:?} at scale {s}",
                    r.shape(),
                    f.shape()
                )));
            }
            let n = r.data().len() as f64;
            let w = 1.0 / (n * l * k);
            let mut g = Tensor::zeros(f.shape());
            let mut sum = 0.0;
            for ((a, b), d) in r.data().iter().zip(f.data()).zip(g.data_mut()) {
                let diff = (*b - *a) as f64;
                sum += diff.abs();
                if diff != 0.0 {
                    *d = (diff.signum() * w) as f32;
                }
            }
            scale_sum += sum / n;
            scale_grads.push(g);
        }
        total += scale_sum / l;
        grads.push(scale_grads);
    }
    Ok((total / k, grads))
}

pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<f64> {
    Ok(feature_matching_loss_grad(real, fake)?.0)
}

pub fn total_g_loss(adv: f64, fm: f64, cfg: &LossConfig) -> Result<f64> {
    let t = adv + cfg.lambda_fm * fm;
    if !t.is_finite() {
        return Err(Error::Numeric(format!("generator loss {t} (adv {adv}, fm {fm})")));
    }
    Ok(t)
}
