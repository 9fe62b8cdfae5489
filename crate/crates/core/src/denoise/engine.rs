//! Single-threaded CPU inference for the layer set an archive can declare.

use crate::denoise::archive::{ConvKind, ConvSpec, LayerOp, Prediction, WeightArchive};
use crate::error::{Error, Result};

/// Channel-major `C x H x W` activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Size(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Periodic extension to `height x width` (both at least the current size).
    fn pad_periodic(&self, height: usize, width: usize) -> Tensor {
        let mut out = Tensor::zeros(self.channels, height, width);
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for i in 0..height {
                let si = i % self.height;
                for j in 0..width {
                    dst[i * width + j] = src[si * self.width + j % self.width];
                }
            }
        }
        out
    }

    fn crop(&self, height: usize, width: usize) -> Tensor {
        let mut out = Tensor::zeros(self.channels, height, width);
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for i in 0..height {
                dst[i * width..(i + 1) * width].copy_from_slice(&src[i * self.width..i * self.width + width]);
            }
        }
        out
    }
}

/// Runs the archive's layer chain on `input` and applies its prediction convention.
///
/// Inputs whose sides are not multiples of the network's total downsampling
/// factor are extended periodically and the output is cropped back.
pub fn neural_forward(arch: &WeightArchive, input: &Tensor) -> Result<Tensor> {
    if input.channels != arch.in_channels {
        return Err(Error::Size(format!(
            "network expects {} input channels, got {}",
            arch.in_channels, input.channels
        )));
    }
    if input.height == 0 || input.width == 0 {
        return Err(Error::Size("empty input".into()));
    }
    let m = arch.size_multiple;
    let (ph, pw) = (input.height.div_ceil(m) * m, input.width.div_ceil(m) * m);
    let mut x = if (ph, pw) != (input.height, input.width) {
        input.pad_periodic(ph, pw)
    } else {
        input.clone()
    };

    let mut slots: Vec<(&str, Tensor)> = Vec::new();
    for layer in &arch.layers {
        match &layer.op {
            LayerOp::Conv(spec) => {
                x = match spec.kind {
                    ConvKind::Conv => conv2d(arch, spec, &x),
                    ConvKind::Transpose => conv_transpose2d(arch, spec, &x),
                };
            }
            LayerOp::Relu => x.data.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerOp::Save(slot) => {
                slots.retain(|(s, _)| *s != slot.as_str());
                slots.push((slot.as_str(), x.clone()));
            }
            LayerOp::Add(slot) => {
                let (_, saved) = slots
                    .iter()
                    .find(|(s, _)| *s == slot.as_str())
                    .expect("validated skip slot");
                x.data.iter_mut().zip(&saved.data).for_each(|(a, b)| *a += b);
            }
        }
    }
    if (x.height, x.width) != (input.height, input.width) {
        x = x.crop(input.height, input.width);
    }
    if arch.prediction == Prediction::Residual {
        for c in 0..arch.out_channels {
            let src = input.plane(c);
            x.plane_mut(c).iter_mut().zip(src).for_each(|(n, s)| *n = s - *n);
        }
    }
    Ok(x)
}

fn weights<'a>(arch: &'a WeightArchive, spec: &ConvSpec) -> (&'a [f32], Option<&'a [f32]>) {
    let w = arch.tensor(&spec.weight).expect("validated tensor").1;
    let b = spec.bias.as_ref().map(|n| arch.tensor(n).expect("validated tensor").1);
    (w, b)
}

fn conv2d(arch: &WeightArchive, spec: &ConvSpec, x: &Tensor) -> Tensor {
    let (w, bias) = weights(arch, spec);
    let k = spec.kernel;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    if spec.stride == 1 {
        conv_same(x, w, bias, cin, cout, k, spec.padding)
    } else {
        conv_strided(x, w, bias, cin, cout, k)
    }
}

/// Stride-1, zero-padded, size-preserving convolution.
fn conv_same(x: &Tensor, w: &[f32], bias: Option<&[f32]>, cin: usize, cout: usize, k: usize, pad: usize) -> Tensor {
    let (h, wd) = (x.height, x.width);
    let mut out = Tensor::zeros(cout, h, wd);
    for o in 0..cout {
        let dst = out.plane_mut(o);
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..cin {
            let src = x.plane(c);
            for a in 0..k {
                for b in 0..k {
                    let wv = w[((o * cin + c) * k + a) * k + b];
                    if wv == 0.0 {
                        continue;
                    }
                    // out[i,j] += wv * in[i + a - pad, j + b - pad]
                    let di = a as isize - pad as isize;
                    let dj = b as isize - pad as isize;
                    let j0 = (-dj).max(0) as usize;
                    let j1 = (wd as isize - dj).min(wd as isize).max(0) as usize;
                    if j0 >= j1 {
                        continue;
                    }
                    for i in 0..h {
                        let r = i as isize + di;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        let row = &src[r as usize * wd..(r as usize + 1) * wd];
                        let s0 = (j0 as isize + dj) as usize;
                        let drow = &mut dst[i * wd + j0..i * wd + j1];
                        for (d, s) in drow.iter_mut().zip(&row[s0..s0 + (j1 - j0)]) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Non-overlapping `k x k` stride-`k` convolution (downsampling).
fn conv_strided(x: &Tensor, w: &[f32], bias: Option<&[f32]>, cin: usize, cout: usize, k: usize) -> Tensor {
    let (oh, ow) = (x.height / k, x.width / k);
    let mut out = Tensor::zeros(cout, oh, ow);
    for o in 0..cout {
        let dst = out.plane_mut(o);
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..cin {
            let src = x.plane(c);
            for a in 0..k {
                for b in 0..k {
                    let wv = w[((o * cin + c) * k + a) * k + b];
                    for i in 0..oh {
                        let row = &src[(i * k + a) * x.width..];
                        for j in 0..ow {
                            dst[i * ow + j] += wv * row[j * k + b];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Non-overlapping `k x k` stride-`k` transposed convolution (upsampling).
fn conv_transpose2d(arch: &WeightArchive, spec: &ConvSpec, x: &Tensor) -> Tensor {
    let (w, bias) = weights(arch, spec);
    let k = spec.kernel;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let (oh, ow) = (x.height * k, x.width * k);
    let mut out = Tensor::zeros(cout, oh, ow);
    for o in 0..cout {
        let dst = out.plane_mut(o);
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..cin {
            let src = x.plane(c);
            for a in 0..k {
                for b in 0..k {
                    let wv = w[((c * cout + o) * k + a) * k + b];
                    for i in 0..x.height {
                        let drow = &mut dst[(i * k + a) * ow..];
                        for j in 0..x.width {
                            drow[j * k + b] += wv * src[i * x.width + j];
                        }
                    }
                }
            }
        }
    }
    out
}
