//! Layer stack with recorded forward state and manual backward.

use crate::conv::{Conv2d, ConvTranspose2d, Needs};
use crate::error::{NnError, Result};
use crate::norm::{self, NormCache};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    InstanceNorm,
    Relu,
    LeakyRelu(f32),
    Tanh,
    Dropout(f32),
    /// `x + inner(x)`.
    Residual(Sequential),
}

/// Forward-pass options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Mode {
    /// Seed for dropout masks; `None` disables dropout (inference).
    pub dropout_seed: Option<u64>,
    /// Keep what the backward pass needs.
    pub record: bool,
}

impl Mode {
    pub const INFERENCE: Mode = Mode {
        dropout_seed: None,
        record: false,
    };

    pub fn train(seed: u64) -> Self {
        Mode {
            dropout_seed: Some(seed),
            record: true,
        }
    }
}

/// What one layer kept from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    None,
    Input(Tensor),
    Output(Tensor),
    Norm(NormCache),
    Mask(Option<Tensor>),
    Residual(Vec<Cache>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Cache>)> {
        let mut counter = 0u64;
        self.forward_with(x, mode, &mut counter)
    }

    fn forward_with(&self, x: &Tensor, mode: Mode, counter: &mut u64) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(if mode.record { self.layers.len() } else { 0 });
        let mut cur = x.clone();
        for layer in &self.layers {
            *counter += 1;
            let (next, cache) = match layer {
                Layer::Conv(c) => (c.forward(&cur)?, Cache::Input(cur)),
                Layer::ConvT(c) => (c.forward(&cur)?, Cache::Input(cur)),
                Layer::InstanceNorm => {
                    let (y, nc) = norm::instance_norm(&cur);
                    (y, Cache::Norm(nc))
                }
                Layer::Relu => {
                    let y = ops::relu(&cur);
                    (y.clone(), Cache::Output(y))
                }
                Layer::LeakyRelu(s) => {
                    let y = ops::leaky_relu(&cur, *s);
                    (y.clone(), Cache::Output(y))
                }
                Layer::Tanh => {
                    let y = ops::tanh(&cur);
                    (y.clone(), Cache::Output(y))
                }
                Layer::Dropout(rate) => match mode.dropout_seed {
                    Some(seed) if *rate > 0.0 => {
                        let mask = ops::dropout_mask(cur.shape(), *rate, ops::mix_seed(seed, *counter));
                        (ops::mul(&cur, &mask), Cache::Mask(Some(mask)))
                    }
                    _ => (cur, Cache::Mask(None)),
                },
                Layer::Residual(inner) => {
                    let (mut y, inner_caches) = inner.forward_with(&cur, mode, counter)?;
                    y.add_assign(&cur)?;
                    (y, Cache::Residual(inner_caches))
                }
            };
            if mode.record {
                caches.push(cache);
            }
            cur = next;
        }
        Ok((cur, caches))
    }

    /// Backward through the stack. Parameter gradients come back in
    /// [`params`](Self::params) order (empty when `needs.params` is false).
    pub fn backward(&self, caches: &[Cache], gout: &Tensor, needs: Needs) -> Result<(Option<Tensor>, Vec<Vec<f32>>)> {
        if caches.len() != self.layers.len() {
            return Err(NnError::Cache("sequential (forward was not recorded)"));
        }
        let mut grad = gout.clone();
        let mut per_layer: Vec<Vec<Vec<f32>>> = Vec::with_capacity(self.layers.len());
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let need_input = i > 0 || needs.input;
            let local = Needs {
                input: need_input,
                params: needs.params,
            };
            let (dx, dp): (Option<Tensor>, Vec<Vec<f32>>) = match (layer, cache) {
                (Layer::Conv(c), Cache::Input(x)) => {
                    let (dx, dp) = c.backward(x, &grad, local)?;
                    (dx, dp.unwrap_or_default())
                }
                (Layer::ConvT(c), Cache::Input(x)) => {
                    let (dx, dp) = c.backward(x, &grad, local)?;
                    (dx, dp.unwrap_or_default())
                }
                (Layer::InstanceNorm, Cache::Norm(nc)) => (Some(norm::instance_norm_backward(nc, &grad)), vec![]),
                (Layer::Relu, Cache::Output(y)) => (Some(ops::relu_backward(y, &grad)), vec![]),
                (Layer::LeakyRelu(s), Cache::Output(y)) => (Some(ops::leaky_relu_backward(y, &grad, *s)), vec![]),
                (Layer::Tanh, Cache::Output(y)) => (Some(ops::tanh_backward(y, &grad)), vec![]),
                (Layer::Dropout(_), Cache::Mask(mask)) => match mask {
                    Some(m) => (Some(ops::mul(&grad, m)), vec![]),
                    None => (Some(grad.clone()), vec![]),
                },
                (Layer::Residual(inner), Cache::Residual(ic)) => {
                    let (dx, dp) = inner.backward(ic, &grad, Needs::ALL.with_params(needs.params))?;
                    let mut dx = dx.expect("inner input gradient requested");
                    dx.add_assign(&grad)?;
                    (Some(dx), dp)
                }
                _ => return Err(NnError::Cache("layer/cache kind mismatch")),
            };
            per_layer.push(dp);
            match dx {
                Some(dx) => grad = dx,
                None => {
                    debug_assert_eq!(i, 0);
                }
            }
        }
        per_layer.reverse();
        let grads = if needs.params { per_layer.into_iter().flatten().collect() } else { vec![] };
        Ok((needs.input.then_some(grad), grads))
    }

    pub fn params(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend(c.params()),
                Layer::ConvT(c) => out.extend(c.params()),
                Layer::Residual(inner) => out.extend(inner.params()),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend(c.params_mut()),
                Layer::ConvT(c) => out.extend(c.params_mut()),
                Layer::Residual(inner) => out.extend(inner.params_mut()),
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl Needs {
    pub fn with_params(self, params: bool) -> Needs {
        Needs { params, ..self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activations_and_residual_forward() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
        let run = |layers: Vec<Layer>| Sequential::new(layers).forward(&x, Mode::INFERENCE).unwrap().0.into_vec();
        assert_eq!(run(vec![Layer::Relu]), vec![0.0, 0.0, 0.0, 3.0]);
        assert_eq!(run(vec![Layer::LeakyRelu(0.2)]), vec![-0.4, -0.1, 0.0, 3.0]);
        assert_eq!(run(vec![Layer::Dropout(0.5)]), x.data().to_vec());
        let doubled = run(vec![Layer::Residual(Sequential::new(vec![Layer::Relu]))]);
        assert_eq!(doubled, vec![-2.0, -0.5, 0.0, 6.0]);
    }

    #[test]
    fn record_flag_does_not_change_the_output() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![-1.0, -0.25, 0.5, 2.0]).unwrap();
        let net = Sequential::new(vec![Layer::Tanh, Layer::LeakyRelu(0.1), Layer::InstanceNorm]);
        let plain = net.forward(&x, Mode::INFERENCE).unwrap().0;
        let recorded = net.forward(&x, Mode { dropout_seed: None, record: true }).unwrap().0;
        assert_eq!(plain, recorded);
        assert_eq!(net.param_count(), 0);
    }
}
