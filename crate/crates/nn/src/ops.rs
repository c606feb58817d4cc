//! Pointwise activations and dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec;
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Backward of ReLU given the forward *output*.
pub fn relu_backward(out: &Tensor, gout: &Tensor) -> Tensor {
    let mut g = gout.clone();
    g.data_mut()
        .iter_mut()
        .zip(out.data())
        .for_each(|(g, &y)| {
            if y <= 0.0 {
                *g = 0.0
            }
        });
    g
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > 0.0 { *v } else { *v * slope });
    y
}

/// Backward of leaky ReLU given the forward *output* (sign is preserved for slope > 0).
pub fn leaky_relu_backward(out: &Tensor, gout: &Tensor, slope: f32) -> Tensor {
    let mut g = gout.clone();
    g.data_mut()
        .iter_mut()
        .zip(out.data())
        .for_each(|(g, &y)| {
            if y <= 0.0 {
                *g *= slope
            }
        });
    g
}

/// Largest `f32` strictly below one.
pub const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

/// Hyperbolic tangent clamped to the open interval (-1, 1); plain `f32` tanh
/// rounds to exactly ±1 for |x| above about 9.
pub fn tanh(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    exec::for_each_chunk(y.data_mut(), x.sample_len().max(1), |_, c| {
        c.iter_mut()
            .for_each(|v| *v = v.tanh().clamp(-BELOW_ONE, BELOW_ONE))
    });
    y
}

/// Backward of tanh given the forward *output*.
pub fn tanh_backward(out: &Tensor, gout: &Tensor) -> Tensor {
    let mut g = gout.clone();
    g.data_mut()
        .iter_mut()
        .zip(out.data())
        .for_each(|(g, &y)| *g *= 1.0 - y * y);
    g
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverted-dropout mask: kept entries are scaled by `1 / (1 - rate)`.
pub fn dropout_mask(shape: [usize; 4], rate: f32, seed: u64) -> Tensor {
    let mut mask = Tensor::zeros(shape);
    let keep = 1.0 - rate;
    let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
    let len = mask.sample_len();
    exec::for_each_chunk(mask.data_mut(), len.max(1), |n, c| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, n as u64));
        c.iter_mut().for_each(|v| {
            *v = if rng.random::<f32>() < keep { scale } else { 0.0 };
        });
    });
    mask
}

pub fn mul(x: &Tensor, mask: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .zip(mask.data())
        .for_each(|(v, m)| *v *= m);
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_mask_is_seeded() {
        let a = dropout_mask([2, 3, 4, 4], 0.5, 42);
        let b = dropout_mask([2, 3, 4, 4], 0.5, 42);
        let c = dropout_mask([2, 3, 4, 4], 0.5, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn tanh_never_reaches_unit_magnitude() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-80.0, -1.0, 1.0, 1e30]).unwrap();
        assert!(tanh(&x).data().iter().all(|v| v.abs() < 1.0));
    }
}
