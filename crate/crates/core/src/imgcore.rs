//! Dense 2-D fields, Fourier transforms, circular convolution and seeded noise.
//!
//! Every linear operator in this crate uses periodic boundaries, so circular
//! convolution is diagonalized exactly by the 2-D DFT. The forward transform
//! is unnormalized; the inverse carries the `1/(H*W)` factor.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Single-channel image stored row-major in `f64`.
#[derive(Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{})", self.height, self.width)
    }
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Size(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Size(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("image contains non-finite values".into()));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    /// Builds an image from data produced internally; callers guarantee the length.
    pub(crate) fn from_vec_unchecked(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Image {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_vec_unchecked(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shape images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        ensure_same_shape(self.shape(), other.shape())?;
        Ok(Image::from_vec_unchecked(
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clip(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Window of `height x width` pixels starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::Size(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |i, j| self.get(top + i, left + j)))
    }
}

pub(crate) fn ensure_same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Size(format!(
            "{}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Complex 2-D field, row-major. Holds DFT coefficients of an image or kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Size(format!(
                "{} coefficients for a {height}x{width} spectrum",
                data.len()
            )));
        }
        Ok(Spectrum {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Square point-spread function with an odd side length.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    taps: Vec<f64>,
}

impl BlurKernel {
    /// Tolerance on the tap sum accepted when building a kernel.
    pub const SUM_TOLERANCE: f64 = 1e-8;

    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::Parameter(format!("kernel size {size} is not odd")));
        }
        if taps.len() != size * size {
            return Err(Error::Size(format!(
                "{} taps for a {size}x{size} kernel",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("kernel contains non-finite taps".into()));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Parameter(format!("kernel taps sum to {sum}, expected 1")));
        }
        Ok(BlurKernel { size, taps })
    }

    /// Rescales arbitrary taps to unit sum.
    pub fn normalized(size: usize, mut taps: Vec<f64>) -> Result<Self> {
        let sum: f64 = taps.iter().sum();
        if sum.abs() < f64::EPSILON || !sum.is_finite() {
            return Err(Error::Parameter("kernel taps sum to zero".into()));
        }
        taps.iter_mut().for_each(|t| *t /= sum);
        Self::new(size, taps)
    }

    pub fn identity() -> Self {
        BlurKernel {
            size: 1,
            taps: vec![1.0],
        }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn center(&self) -> usize {
        (self.size - 1) / 2
    }

    #[inline]
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn tap(&self, a: usize, b: usize) -> f64 {
        self.taps[a * self.size + b]
    }

    pub(crate) fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        if self.size > height.min(width) {
            return Err(Error::Size(format!(
                "{}x{} kernel larger than {height}x{width} image",
                self.size, self.size
            )));
        }
        Ok(())
    }
}

/// Row and column FFT plans for one image shape. Plans are `Send + Sync`.
#[derive(Clone)]
pub struct FftPlan2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FftPlan2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FftPlan2({}x{})", self.height, self.width)
    }
}

impl FftPlan2 {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty transform");
        let mut planner = FftPlanner::new();
        FftPlan2 {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for j in 0..w {
            for i in 0..h {
                column[i] = data[i * w + j];
            }
            col.process(&mut column);
            for i in 0..h {
                data[i * w + j] = column[i];
            }
        }
    }

    pub fn forward(&self, img: &Image) -> Spectrum {
        assert_eq!(img.shape(), self.shape(), "plan/image shape mismatch");
        let mut data: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        Spectrum {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Inverse transform including the `1/(H*W)` factor.
    pub fn inverse_complex(&self, spec: &Spectrum) -> Spectrum {
        assert_eq!(spec.shape(), self.shape(), "plan/spectrum shape mismatch");
        let mut data = spec.data.clone();
        self.transform(&mut data, true);
        let scale = 1.0 / (self.height * self.width) as f64;
        data.iter_mut().for_each(|c| *c *= scale);
        Spectrum {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Inverse transform keeping the real part.
    pub fn inverse(&self, spec: &Spectrum) -> Image {
        let full = self.inverse_complex(spec);
        Image::from_vec_unchecked(
            self.height,
            self.width,
            full.data.iter().map(|c| c.re).collect(),
        )
    }
}

/// Unnormalized forward 2-D DFT.
pub fn fft2(img: &Image) -> Spectrum {
    FftPlan2::new(img.height(), img.width()).forward(img)
}

/// Inverse 2-D DFT (real part), scaled by `1/(H*W)`.
pub fn ifft2(spec: &Spectrum) -> Image {
    FftPlan2::new(spec.height(), spec.width()).inverse(spec)
}

/// Zero-pads `k` to `height x width`, moves its center tap to `(0, 0)` and transforms.
pub fn psf2otf(k: &BlurKernel, height: usize, width: usize) -> Result<Spectrum> {
    k.check_fits(height, width)?;
    Ok(FftPlan2::new(height, width).forward(&pad_kernel(k, height, width)))
}

pub(crate) fn pad_kernel(k: &BlurKernel, height: usize, width: usize) -> Image {
    let c = k.center();
    let mut padded = Image::zeros(height, width);
    for a in 0..k.size() {
        for b in 0..k.size() {
            let i = (a + height - c) % height;
            let j = (b + width - c) % width;
            padded.data[i * width + j] += k.tap(a, b);
        }
    }
    padded
}

/// Periodic 2-D convolution evaluated directly in the spatial domain.
pub fn circ_conv(img: &Image, k: &BlurKernel) -> Result<Image> {
    let (h, w) = img.shape();
    k.check_fits(h, w)?;
    let c = k.center();
    let mut out = vec![0.0; h * w];
    for a in 0..k.size() {
        // out[i] += k[a,b] * x[i - (a - c)]
        let di = (h + c - a % h) % h;
        for b in 0..k.size() {
            let t = k.tap(a, b);
            if t == 0.0 {
                continue;
            }
            let dj = (w + c - b % w) % w;
            for i in 0..h {
                let src = &img.data[((i + di) % h) * w..][..w];
                let dst = &mut out[i * w..(i + 1) * w];
                let split = w - dj;
                for (o, s) in dst[..split].iter_mut().zip(&src[dj..]) {
                    *o += t * s;
                }
                for (o, s) in dst[split..].iter_mut().zip(&src[..dj]) {
                    *o += t * s;
                }
            }
        }
    }
    Ok(Image::from_vec_unchecked(h, w, out))
}

/// Periodic 2-D correlation with `k`; the adjoint of [`circ_conv`].
pub fn circ_corr(img: &Image, k: &BlurKernel) -> Result<Image> {
    let flipped: Vec<f64> = k.taps().iter().rev().copied().collect();
    circ_conv(
        img,
        &BlurKernel {
            size: k.size(),
            taps: flipped,
        },
    )
}

/// I.i.d. zero-mean Gaussian field with standard deviation `sigma`.
///
/// Samples come from ChaCha20 (`rand_chacha`) seeded via `seed_from_u64` and
/// the ziggurat `StandardNormal` sampler, so a given seed reproduces the same
/// field on every platform.
pub fn awgn(height: usize, width: usize, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("noise sigma {sigma} must be >= 0")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Size(format!("empty noise field {height}x{width}")));
    }
    if sigma == 0.0 {
        return Ok(Image::zeros(height, width));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..height * width)
        .map(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            sigma * n
        })
        .collect();
    Ok(Image::from_vec_unchecked(height, width, data))
}
