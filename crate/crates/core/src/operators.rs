//! The analysis transform (periodic image gradient) and the measurement
//! operator `A = S K` (circular blur followed by s-fold decimation), each with
//! its exact adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{awgn, circ_conv, circ_corr, ensure_same_shape, BlurKernel, Image};

/// Horizontal and vertical periodic forward differences of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub dh: Image,
    pub dv: Image,
}

impl GradientField {
    pub fn new(dh: Image, dv: Image) -> Result<Self> {
        ensure_same_shape(dh.shape(), dv.shape())?;
        Ok(GradientField { dh, dv })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        GradientField {
            dh: Image::zeros(height, width),
            dv: Image::zeros(height, width),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.dh.shape()
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        self.dh.dot(&other.dh) + self.dv.dot(&other.dv)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dh.norm_sq() + self.dv.norm_sq()
    }

    pub fn l1_norm(&self) -> f64 {
        self.dh.data().iter().chain(self.dv.data()).map(|v| v.abs()).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GradientField {
        GradientField {
            dh: self.dh.map(&f),
            dv: self.dv.map(&f),
        }
    }

    pub fn zip_map(&self, other: &GradientField, f: impl Fn(f64, f64) -> f64) -> Result<GradientField> {
        Ok(GradientField {
            dh: self.dh.zip_map(&other.dh, &f)?,
            dv: self.dv.zip_map(&other.dv, &f)?,
        })
    }

    pub fn add(&self, other: &GradientField) -> Result<GradientField> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GradientField) -> Result<GradientField> {
        self.zip_map(other, |a, b| a - b)
    }
}

/// `dh[i,j] = x[i,j+1] - x[i,j]`, `dv[i,j] = x[i+1,j] - x[i,j]`, indices wrapping.
pub fn grad(x: &Image) -> GradientField {
    let (h, w) = x.shape();
    let dh = Image::from_fn(h, w, |i, j| x.get(i, (j + 1) % w) - x.get(i, j));
    let dv = Image::from_fn(h, w, |i, j| x.get((i + 1) % h, j) - x.get(i, j));
    GradientField { dh, dv }
}

/// Adjoint of [`grad`] (a negative periodic divergence).
pub fn grad_adjoint(g: &GradientField) -> Image {
    let (h, w) = g.shape();
    Image::from_fn(h, w, |i, j| {
        g.dh.get(i, (j + w - 1) % w) - g.dh.get(i, j) + g.dv.get((i + h - 1) % h, j) - g.dv.get(i, j)
    })
}

/// Blur kernel, integer scale factor and measurement noise level describing `y = S(k * x) + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    kernel: BlurKernel,
    scale: usize,
    sigma: f64,
}

impl DegradationSpec {
    pub const MAX_SCALE: usize = 4;

    pub fn new(kernel: BlurKernel, scale: usize, sigma: f64) -> Result<Self> {
        if !(1..=Self::MAX_SCALE).contains(&scale) {
            return Err(Error::Parameter(format!("scale {scale} outside 1..=4")));
        }
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::Parameter(format!("noise level {sigma} outside [0, 1]")));
        }
        Ok(DegradationSpec {
            kernel,
            scale,
            sigma,
        })
    }

    pub fn kernel(&self) -> &BlurKernel {
        &self.kernel
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn low_res_shape(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let s = self.scale;
        if height % s != 0 || width % s != 0 {
            return Err(Error::Size(format!(
                "{height}x{width} image not divisible by scale {s}"
            )));
        }
        Ok((height / s, width / s))
    }
}

/// Keeps samples whose row and column indices are multiples of `s`.
pub fn decimate(x: &Image, s: usize) -> Result<Image> {
    let (h, w) = x.shape();
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::Size(format!("{h}x{w} image not divisible by scale {s}")));
    }
    Ok(Image::from_fn(h / s, w / s, |i, j| x.get(i * s, j * s)))
}

/// Zero-fill upsampling; the adjoint of [`decimate`].
pub fn zero_fill(y: &Image, s: usize) -> Image {
    let (h, w) = y.shape();
    let mut out = Image::zeros(h * s, w * s);
    for i in 0..h {
        for j in 0..w {
            out.set(i * s, j * s, y.get(i, j));
        }
    }
    out
}

/// `A x` without measurement noise.
pub fn forward_noiseless(spec: &DegradationSpec, x: &Image) -> Result<Image> {
    spec.low_res_shape(x.height(), x.width())?;
    decimate(&circ_conv(x, &spec.kernel)?, spec.scale)
}

/// Simulates a measurement `S(k * x) + n` with `n ~ N(0, sigma^2)` drawn from `seed`.
pub fn forward_apply(spec: &DegradationSpec, x: &Image, seed: u64) -> Result<Image> {
    let clean = forward_noiseless(spec, x)?;
    if spec.sigma == 0.0 {
        return Ok(clean);
    }
    let noise = awgn(clean.height(), clean.width(), spec.sigma, seed)?;
    clean.zip_map(&noise, |a, b| a + b)
}

/// `A^T y`: zero-fill upsampling followed by circular correlation with the kernel.
pub fn forward_adjoint(spec: &DegradationSpec, y: &Image) -> Result<Image> {
    let up = zero_fill(y, spec.scale);
    circ_corr(&up, &spec.kernel)
}

/// Rotated bivariate Gaussian sampled at integer offsets and normalized to unit sum.
///
/// Offsets are `(dx, dy) = (column - c, row - c)`. The covariance is
/// `R(theta) diag(sigma_x^2, sigma_y^2) R(theta)^T`.
pub fn gaussian_kernel(sigma_x: f64, sigma_y: f64, theta: f64, size: usize) -> Result<BlurKernel> {
    if size % 2 == 0 {
        return Err(Error::Parameter(format!("kernel size {size} is not odd")));
    }
    if !(sigma_x > 0.0 && sigma_y > 0.0) || !sigma_x.is_finite() || !sigma_y.is_finite() {
        return Err(Error::Parameter(format!(
            "kernel widths ({sigma_x}, {sigma_y}) must be positive"
        )));
    }
    let (sin, cos) = theta.sin_cos();
    let (a, b) = (1.0 / (sigma_x * sigma_x), 1.0 / (sigma_y * sigma_y));
    // inverse covariance R diag(a, b) R^T
    let ixx = a * cos * cos + b * sin * sin;
    let iyy = a * sin * sin + b * cos * cos;
    let ixy = (a - b) * sin * cos;
    let c = (size / 2) as f64;
    let mut taps = Vec::with_capacity(size * size);
    for row in 0..size {
        let dy = row as f64 - c;
        for col in 0..size {
            let dx = col as f64 - c;
            taps.push((-0.5 * (ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy)).exp());
        }
    }
    BlurKernel::normalized(size, taps)
}

/// Parameters of one Gaussian blur kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub theta: f64,
    pub size: usize,
}

impl KernelParams {
    pub fn build(&self) -> Result<BlurKernel> {
        gaussian_kernel(self.sigma_x, self.sigma_y, self.theta, self.size)
    }

    pub fn is_isotropic(&self) -> bool {
        self.sigma_x == self.sigma_y
    }
}

/// Default benchmark kernels: four isotropic, four anisotropic, all 25x25.
pub fn default_kernel_set() -> [KernelParams; 8] {
    use std::f64::consts::PI;
    let k = |sigma_x, sigma_y, theta| KernelParams {
        sigma_x,
        sigma_y,
        theta,
        size: 25,
    };
    [
        k(0.7, 0.7, 0.0),
        k(1.2, 1.2, 0.0),
        k(1.6, 1.6, 0.0),
        k(2.0, 2.0, 0.0),
        k(4.0, 1.0, 0.0),
        k(4.0, 1.0, PI / 4.0),
        k(3.0, 1.5, PI / 2.0),
        k(5.0, 2.0, 3.0 * PI / 4.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = grad(&Image::filled(5, 7, 0.3));
        assert!(g.norm_sq() == 0.0);
    }

    #[test]
    fn gradient_stencil_wraps() {
        let x = Image::new(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let g = grad(&x);
        assert_eq!(g.dh.data(), &[1.0, -1.0, 0.0, 0.0]);
        assert!(g.dv.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_field_adjoint() {
        assert!(grad_adjoint(&GradientField::zeros(4, 4)).norm_sq() == 0.0);
    }

    #[test]
    fn grad_adjoint_of_grad_is_negative_laplacian() {
        let x = awgn(9, 11, 1.0, 5).unwrap();
        let lap = grad_adjoint(&grad(&x));
        let (h, w) = x.shape();
        for i in 0..h {
            for j in 0..w {
                let expect = 4.0 * x.get(i, j)
                    - x.get((i + 1) % h, j)
                    - x.get((i + h - 1) % h, j)
                    - x.get(i, (j + 1) % w)
                    - x.get(i, (j + w - 1) % w);
                assert!((lap.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_forward_model() {
        let x = awgn(6, 6, 1.0, 1).unwrap();
        let spec = DegradationSpec::new(BlurKernel::identity(), 1, 0.0).unwrap();
        assert_eq!(forward_apply(&spec, &x, 0).unwrap(), x);
        assert_eq!(forward_adjoint(&spec, &x).unwrap(), x);
    }

    #[test]
    fn pure_decimation() {
        let x = Image::from_fn(4, 4, |i, j| (4 * i + j) as f64);
        let spec = DegradationSpec::new(BlurKernel::identity(), 2, 0.0).unwrap();
        let y = forward_apply(&spec, &x, 0).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn non_divisible_shape_is_rejected() {
        let spec = DegradationSpec::new(BlurKernel::identity(), 3, 0.0).unwrap();
        assert!(matches!(forward_apply(&spec, &Image::zeros(7, 9), 0), Err(Error::Size(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(DegradationSpec::new(BlurKernel::identity(), 0, 0.0).is_err());
        assert!(DegradationSpec::new(BlurKernel::identity(), 5, 0.0).is_err());
        assert!(DegradationSpec::new(BlurKernel::identity(), 2, -0.1).is_err());
    }

    #[test]
    fn gaussian_kernel_properties() {
        let k = gaussian_kernel(1.3, 1.3, 0.0, 7).unwrap();
        assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for a in 0..7 {
            for b in 0..7 {
                // 90 degree rotation
                assert!((k.tap(a, b) - k.tap(b, 6 - a)).abs() < 1e-15);
            }
        }
        for p in default_kernel_set() {
            let k = p.build().unwrap();
            assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.taps().iter().all(|&t| t >= 0.0));
        }
        assert!(gaussian_kernel(1.0, 1.0, 0.0, 4).is_err());
        assert!(gaussian_kernel(0.0, 1.0, 0.0, 5).is_err());
    }
}
