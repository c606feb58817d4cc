//! Adam optimizer.

use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|n| (vec![T::zero(); n], vec![T::zero(); n]))
            .unzip();
        AdamState { step: 0, m, v }
    }
}

impl Adam {
    /// One bias-corrected update over every parameter tensor. `lr_scale`
    /// multiplies the base learning rate (1.0 when no schedule is used).
    pub fn step<T: Float>(&self, state: &mut AdamState<T>, params: &mut [&mut Vec<T>], grads: &[Vec<T>], lr_scale: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameters");
        state.step += 1;
        let t = state.step as i32;
        let c = |x: f64| T::from(x).expect("representable constant");
        let b1 = c(self.beta1);
        let b2 = c(self.beta2);
        let one = T::one();
        let bc1 = c(1.0 - self.beta1.powi(t));
        let bc2 = c(1.0 - self.beta2.powi(t));
        let lr = c(self.lr * lr_scale);
        let eps = c(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let g = &grads[i];
            let m = &mut state.m[i];
            let v = &mut state.v[i];
            assert_eq!(p.len(), g.len());
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
