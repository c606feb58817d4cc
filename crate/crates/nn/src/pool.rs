//! Average pooling used between discriminator scales.

use crate::conv::{ConvGeom, PadMode};
use crate::error::Result;
use crate::exec;
use crate::tensor::Tensor;

/// Square average pooling with configurable padding mode; every window
/// averages exactly `kernel * kernel` (possibly reflected) values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
}

impl AvgPool {
    /// 3x3, stride 2, reflective padding 1: halves even spatial sizes.
    pub const DOWNSAMPLE: AvgPool = AvgPool {
        kernel: 3,
        stride: 2,
        pad: 1,
        mode: PadMode::Reflect,
    };

    fn geom(&self, x: &Tensor) -> Result<ConvGeom> {
        ConvGeom::new(1, x.height(), x.width(), self.kernel, self.stride, self.pad, self.mode)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geom(x)?;
        let kk = self.kernel * self.kernel;
        let p = g.col_cols();
        let plane = x.plane_len();
        let mut out = Tensor::zeros([x.batch(), x.channels(), g.oh, g.ow]);
        let inv = 1.0 / kk as f32;
        exec::for_each_chunk(out.data_mut(), p, |i, y| {
            let mut cols = vec![0.0f32; kk * p];
            g.im2col(&x.data()[i * plane..(i + 1) * plane], &mut cols);
            for r in 0..kk {
                y.iter_mut().zip(&cols[r * p..(r + 1) * p]).for_each(|(a, b)| *a += b);
            }
            y.iter_mut().for_each(|v| *v *= inv);
        });
        Ok(out)
    }

    pub fn backward(&self, x_shape: [usize; 4], gout: &Tensor) -> Result<Tensor> {
        let probe = Tensor::zeros([1, 1, x_shape[2], x_shape[3]]);
        let g = self.geom(&probe)?;
        gout.ensure_shape([x_shape[0], x_shape[1], g.oh, g.ow])?;
        let kk = self.kernel * self.kernel;
        let p = g.col_cols();
        let inv = 1.0 / kk as f32;
        let mut dx = Tensor::zeros(x_shape);
        let plane = x_shape[2] * x_shape[3];
        exec::for_each_chunk(dx.data_mut(), plane, |i, d| {
            let go = &gout.data()[i * p..(i + 1) * p];
            let mut cols = vec![0.0f32; kk * p];
            for r in 0..kk {
                cols[r * p..(r + 1) * p]
                    .iter_mut()
                    .zip(go)
                    .for_each(|(c, g)| *c = g * inv);
            }
            g.col2im(&cols, d);
        });
        Ok(dx)
    }
}
