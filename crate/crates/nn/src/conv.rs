//! 2-D convolution and transposed convolution via im2col + GEMM.

use crate::error::{NnError, Result};
use crate::exec;
use crate::gemm::sgemm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

/// Sliding-window geometry over one `c x h x w` sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, mode: PadMode) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(NnError::Config("kernel and stride must be positive".into()));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(NnError::Config(format!(
                "input {h}x{w} with padding {pad} is smaller than kernel {k}"
            )));
        }
        if mode == PadMode::Reflect && (pad >= h || pad >= w) {
            return Err(NnError::Config(format!(
                "reflection padding {pad} needs input larger than {h}x{w}"
            )));
        }
        Ok(ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            mode,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Maps a padded coordinate onto the source grid, or `None` for zero padding.
    #[inline]
    fn source(&self, i: isize, n: usize) -> Option<usize> {
        if i >= 0 && (i as usize) < n {
            return Some(i as usize);
        }
        match self.mode {
            PadMode::Zero => None,
            PadMode::Reflect => {
                let last = n as isize - 1;
                let r = if i < 0 { -i } else { 2 * last - i };
                Some(r as usize)
            }
        }
    }

    /// Unfolds `x` (c*h*w) into `cols` (c*k*k rows by oh*ow columns).
    pub fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let ncol = self.col_cols();
        let xs: Vec<Option<usize>> = (0..k)
            .flat_map(|kx| (0..self.ow).map(move |ox| (kx, ox)))
            .map(|(kx, ox)| self.source(ox as isize * s + kx as isize - p, self.w))
            .collect();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let out = &mut cols[row * ncol..(row + 1) * ncol];
                    let xmap = &xs[kx * self.ow..(kx + 1) * self.ow];
                    for oy in 0..self.oh {
                        let dst = &mut out[oy * self.ow..(oy + 1) * self.ow];
                        match self.source(oy as isize * s + ky as isize - p, self.h) {
                            None => dst.iter_mut().for_each(|v| *v = 0.0),
                            Some(iy) => {
                                let src = &plane[iy * self.w..(iy + 1) * self.w];
                                for (d, ix) in dst.iter_mut().zip(xmap) {
                                    *d = match ix {
                                        Some(ix) => src[*ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): accumulates `cols` back into `x`.
    pub fn col2im(&self, cols: &[f32], x: &mut [f32]) {
        let (k, s, p) = (self.k, self.stride as isize, self.pad as isize);
        let ncol = self.col_cols();
        let xs: Vec<Option<usize>> = (0..k)
            .flat_map(|kx| (0..self.ow).map(move |ox| (kx, ox)))
            .map(|(kx, ox)| self.source(ox as isize * s + kx as isize - p, self.w))
            .collect();
        for ci in 0..self.c {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    let xmap = &xs[kx * self.ow..(kx + 1) * self.ow];
                    for oy in 0..self.oh {
                        if let Some(iy) = self.source(oy as isize * s + ky as isize - p, self.h) {
                            let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                            for (v, ix) in src[oy * self.ow..(oy + 1) * self.ow].iter().zip(xmap) {
                                if let Some(ix) = ix {
                                    dst[*ix] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Which gradients a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    pub input: bool,
    pub params: bool,
}

impl Needs {
    pub const ALL: Needs = Needs { input: true, params: true };
}

/// Gradients of one layer's parameters, in declaration order.
pub type ParamGrads = Vec<Vec<f32>>;

fn sum_in_order(parts: Vec<(Vec<f32>, Vec<f32>)>, wlen: usize, blen: usize) -> ParamGrads {
    let mut dw = vec![0.0f32; wlen];
    let mut db = vec![0.0f32; blen];
    for (w, b) in parts {
        dw.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
        db.iter_mut().zip(&b).for_each(|(a, v)| *a += v);
    }
    vec![dw, db]
}

fn channel_sums(g: &[f32], channels: usize, plane: usize) -> Vec<f32> {
    (0..channels)
        .map(|c| g[c * plane..(c + 1) * plane].iter().sum())
        .collect()
}

/// Standard convolution. Weight layout is `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, mode: PadMode) -> Self {
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            mode,
            weight: vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn geom(&self, x: &Tensor) -> Result<ConvGeom> {
        if x.channels() != self.in_ch {
            return Err(NnError::Shape {
                expected: vec![x.batch(), self.in_ch, x.height(), x.width()],
                got: x.shape().to_vec(),
            });
        }
        ConvGeom::new(self.in_ch, x.height(), x.width(), self.kernel, self.stride, self.pad, self.mode)
    }

    pub fn output_shape(&self, x: &Tensor) -> Result<[usize; 4]> {
        let g = self.geom(x)?;
        Ok([x.batch(), self.out_ch, g.oh, g.ow])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geom(x)?;
        let kdim = g.col_rows();
        let p = g.col_cols();
        let mut out = Tensor::zeros([x.batch(), self.out_ch, g.oh, g.ow]);
        exec::for_each_chunk(out.data_mut(), self.out_ch * p, |n, y| {
            let mut cols = vec![0.0f32; kdim * p];
            g.im2col(x.sample(n), &mut cols);
            for (c, b) in self.bias.iter().enumerate() {
                y[c * p..(c + 1) * p].iter_mut().for_each(|v| *v = *b);
            }
            sgemm(false, false, self.out_ch, p, kdim, &self.weight, &cols, 1.0, y);
        });
        Ok(out)
    }

    /// Gradients given the forward input `x` and the output gradient.
    pub fn backward(&self, x: &Tensor, gout: &Tensor, needs: Needs) -> Result<(Option<Tensor>, Option<ParamGrads>)> {
        let g = self.geom(x)?;
        gout.ensure_shape([x.batch(), self.out_ch, g.oh, g.ow])?;
        let kdim = g.col_rows();
        let p = g.col_cols();
        let per_sample = exec::map_indexed(x.batch(), |n| {
            let mut cols = vec![0.0f32; kdim * p];
            g.im2col(x.sample(n), &mut cols);
            let go = gout.sample(n);
            let dx = needs.input.then(|| {
                let mut dcols = vec![0.0f32; kdim * p];
                sgemm(true, false, kdim, p, self.out_ch, &self.weight, go, 0.0, &mut dcols);
                let mut dx = vec![0.0f32; x.sample_len()];
                g.col2im(&dcols, &mut dx);
                dx
            });
            let dparams = needs.params.then(|| {
                let mut dw = vec![0.0f32; self.weight.len()];
                sgemm(false, true, self.out_ch, kdim, p, go, &cols, 0.0, &mut dw);
                (dw, channel_sums(go, self.out_ch, p))
            });
            (dx, dparams)
        });
        collect_grads(x.shape(), per_sample, needs, self.weight.len(), self.bias.len())
    }

    pub fn params(&self) -> Vec<&[f32]> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

type SampleGrads = (Option<Vec<f32>>, Option<(Vec<f32>, Vec<f32>)>);

fn collect_grads(
    in_shape: [usize; 4],
    per_sample: Vec<SampleGrads>,
    needs: Needs,
    wlen: usize,
    blen: usize,
) -> Result<(Option<Tensor>, Option<ParamGrads>)> {
    let mut dxs = Vec::new();
    let mut dps = Vec::new();
    for (dx, dp) in per_sample {
        if let Some(dx) = dx {
            dxs.extend(dx);
        }
        if let Some(dp) = dp {
            dps.push(dp);
        }
    }
    let dx = if needs.input { Some(Tensor::from_vec(in_shape, dxs)?) } else { None };
    let dp = needs.params.then(|| sum_in_order(dps, wlen, blen));
    Ok((dx, dp))
}

/// Transposed convolution (fractionally strided). Weight layout is `[in, out, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvTranspose2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, output_pad: usize) -> Self {
        ConvTranspose2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            output_pad,
            weight: vec![0.0; in_ch * out_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    /// Geometry of the equivalent forward convolution from output back to input.
    pub fn geom(&self, x: &Tensor) -> Result<ConvGeom> {
        if x.channels() != self.in_ch {
            return Err(NnError::Shape {
                expected: vec![x.batch(), self.in_ch, x.height(), x.width()],
                got: x.shape().to_vec(),
            });
        }
        if self.output_pad >= self.stride {
            return Err(NnError::Config("output padding must be smaller than stride".into()));
        }
        let span = |n: usize| ((n - 1) * self.stride + self.kernel + self.output_pad).checked_sub(2 * self.pad);
        let (oh, ow) = match (span(x.height()), span(x.width())) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(NnError::Config("transposed convolution output would be empty".into())),
        };
        let g = ConvGeom::new(self.out_ch, oh, ow, self.kernel, self.stride, self.pad, PadMode::Zero)?;
        debug_assert_eq!((g.oh, g.ow), (x.height(), x.width()));
        Ok(g)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geom(x)?;
        let kdim = g.col_rows();
        let p = g.col_cols();
        let plane = g.h * g.w;
        let mut out = Tensor::zeros([x.batch(), self.out_ch, g.h, g.w]);
        exec::for_each_chunk(out.data_mut(), self.out_ch * plane, |n, y| {
            let mut cols = vec![0.0f32; kdim * p];
            sgemm(true, false, kdim, p, self.in_ch, &self.weight, x.sample(n), 0.0, &mut cols);
            for (c, b) in self.bias.iter().enumerate() {
                y[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = *b);
            }
            g.col2im(&cols, y);
        });
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor, gout: &Tensor, needs: Needs) -> Result<(Option<Tensor>, Option<ParamGrads>)> {
        let g = self.geom(x)?;
        gout.ensure_shape([x.batch(), self.out_ch, g.h, g.w])?;
        let kdim = g.col_rows();
        let p = g.col_cols();
        let per_sample = exec::map_indexed(x.batch(), |n| {
            let go = gout.sample(n);
            let mut cols = vec![0.0f32; kdim * p];
            g.im2col(go, &mut cols);
            let dx = needs.input.then(|| {
                let mut dx = vec![0.0f32; x.sample_len()];
                sgemm(false, false, self.in_ch, p, kdim, &self.weight, &cols, 0.0, &mut dx);
                dx
            });
            let dparams = needs.params.then(|| {
                let mut dw = vec![0.0f32; self.weight.len()];
                sgemm(false, true, self.in_ch, kdim, p, x.sample(n), &cols, 0.0, &mut dw);
                (dw, channel_sums(go, self.out_ch, g.h * g.w))
            });
            (dx, dparams)
        });
        collect_grads(x.shape(), per_sample, needs, self.weight.len(), self.bias.len())
    }

    pub fn params(&self) -> Vec<&[f32]> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
