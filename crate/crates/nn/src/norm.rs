//! Instance normalization without affine parameters.

use crate::exec;
use crate::tensor::Tensor;

pub const EPS: f32 = 1e-5;

/// Per-(sample, channel) inverse standard deviations recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f32>,
}

pub fn instance_norm(x: &Tensor) -> (Tensor, NormCache) {
    let plane = x.plane_len();
    let mut out = x.clone();
    let mut inv_std = vec![0.0f32; x.batch() * x.channels()];
    let stats = exec::map_indexed(x.batch() * x.channels(), |i| {
        let v = &x.data()[i * plane..(i + 1) * plane];
        let mean = v.iter().map(|&a| a as f64).sum::<f64>() / plane as f64;
        let var = v.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
        (mean as f32, (1.0 / (var + EPS as f64).sqrt()) as f32)
    });
    for (i, (m, s)) in stats.into_iter().enumerate() {
        inv_std[i] = s;
        out.data_mut()[i * plane..(i + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = (*v - m) * s);
    }
    let cache = NormCache {
        normalized: out.clone(),
        inv_std,
    };
    (out, cache)
}

pub fn instance_norm_backward(cache: &NormCache, gout: &Tensor) -> Tensor {
    let plane = gout.plane_len();
    let xhat = &cache.normalized;
    let mut dx = gout.clone();
    exec::for_each_chunk(dx.data_mut(), plane, |i, d| {
        let xh = &xhat.data()[i * plane..(i + 1) * plane];
        let n = plane as f64;
        let mean_g = d.iter().map(|&g| g as f64).sum::<f64>() / n;
        let mean_gx = d.iter().zip(xh).map(|(&g, &x)| (g * x) as f64).sum::<f64>() / n;
        let s = cache.inv_std[i];
        for (g, &x) in d.iter_mut().zip(xh) {
            *g = s * (*g - mean_g as f32 - x * mean_gx as f32);
        }
    });
    dx
}
