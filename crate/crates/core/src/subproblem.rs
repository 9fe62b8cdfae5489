//! Closed-form solvers for the quadratic x-updates
//!
//! ```text
//! argmin_x ||S K x - y||^2 + alpha ||D x - z||^2      (gradient domain)
//! argmin_x ||S K x - y||^2 + alpha ||x - z||^2        (image domain)
//! ```
//!
//! With periodic boundaries `K` and `D` are diagonal in Fourier space. For
//! `s = 1` the normal equations decouple per frequency. For `s > 1` the
//! decimation `S^T S` couples each frequency with its `s^2 - 1` aliases, so the
//! system splits into independent `s^2 x s^2` blocks of the form
//! `(1/s^2) d d^H + alpha diag(L)` with `d` the conjugated kernel OTF at the
//! aliases and `L` the prior's Fourier power. When every `L` entry is positive
//! a block is inverted with Sherman-Morrison; otherwise (the DC block of the
//! gradient prior) it is solved densely.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::imgcore::{ensure_same_shape, psf2otf, BlurKernel, FftPlan2, Image, Spectrum};
use crate::operators::GradientField;

const ILL_POSED_EPS: f64 = 1e-12;

/// Precomputed Fourier diagonalization of the blur and the gradient for one image shape.
#[derive(Clone, Debug)]
pub struct SolverContext {
    height: usize,
    width: usize,
    scale: usize,
    otf: Spectrum,
    lambda_h: Spectrum,
    lambda_v: Spectrum,
    grad_power: Vec<f64>,
    plan: FftPlan2,
    plan_low: FftPlan2,
}

/// How aliasing blocks of the super-resolution solvers are inverted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SrPath {
    /// Sherman-Morrison where eligible, dense elimination otherwise.
    #[default]
    Auto,
    /// Dense elimination for every block.
    Reference,
}

impl SolverContext {
    /// Context for high-resolution images of `height x width` and scale factor `scale`.
    pub fn new(kernel: &BlurKernel, scale: usize, height: usize, width: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Parameter("scale must be >= 1".into()));
        }
        if height % scale != 0 || width % scale != 0 {
            return Err(Error::Size(format!(
                "{height}x{width} image not divisible by scale {scale}"
            )));
        }
        let otf = psf2otf(kernel, height, width)?;
        let lambda_h = Spectrum::new(
            height,
            width,
            (0..height * width)
                .map(|n| difference_multiplier(n % width, width))
                .collect(),
        )?;
        let lambda_v = Spectrum::new(
            height,
            width,
            (0..height * width)
                .map(|n| difference_multiplier(n / width, height))
                .collect(),
        )?;
        let grad_power = lambda_h
            .data()
            .iter()
            .zip(lambda_v.data())
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .collect();
        Ok(SolverContext {
            height,
            width,
            scale,
            otf,
            lambda_h,
            lambda_v,
            grad_power,
            plan: FftPlan2::new(height, width),
            plan_low: FftPlan2::new(height / scale, width / scale),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn low_res_shape(&self) -> (usize, usize) {
        (self.height / self.scale, self.width / self.scale)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn otf(&self) -> &Spectrum {
        &self.otf
    }

    pub fn lambda_h(&self) -> &Spectrum {
        &self.lambda_h
    }

    pub fn lambda_v(&self) -> &Spectrum {
        &self.lambda_v
    }

    /// `|lambda_h|^2 + |lambda_v|^2` per frequency.
    pub fn grad_power(&self) -> &[f64] {
        &self.grad_power
    }

    fn check_inputs(&self, y: &Image, z_shape: (usize, usize), alpha: f64) -> Result<()> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha = {alpha} must be > 0")));
        }
        ensure_same_shape(y.shape(), self.low_res_shape())?;
        ensure_same_shape(z_shape, self.shape())
    }

    fn gradient_rhs(&self, z: &GradientField) -> Spectrum {
        let zh = self.plan.forward(&z.dh);
        let zv = self.plan.forward(&z.dv);
        let data = self
            .lambda_h
            .data()
            .iter()
            .zip(self.lambda_v.data())
            .zip(zh.data().iter().zip(zv.data()))
            .map(|((lh, lv), (h, v))| lh.conj() * h + lv.conj() * v)
            .collect();
        Spectrum::new(self.height, self.width, data).expect("shape")
    }
}

/// DFT of the forward difference `x[n+1] - x[n]` along an axis of length `n`.
fn difference_multiplier(freq: usize, n: usize) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * freq as f64 / n as f64) - 1.0
}

fn require_scale(ctx: &SolverContext, deblur: bool) -> Result<()> {
    match (deblur, ctx.scale) {
        (true, 1) => Ok(()),
        (true, s) => Err(Error::Parameter(format!("deblur solver used with scale {s}"))),
        (false, 1) => Err(Error::Parameter("super-resolution solver needs scale >= 2".into())),
        (false, _) => Ok(()),
    }
}

/// Minimizer of `||K x - y||^2 + alpha ||D x - z||^2`.
pub fn solve_grad_deblur(ctx: &SolverContext, y: &Image, z: &GradientField, alpha: f64) -> Result<Image> {
    require_scale(ctx, true)?;
    ctx.check_inputs(y, z.shape(), alpha)?;
    let prior = ctx.gradient_rhs(z);
    solve_diagonal(ctx, y, &prior, &ctx.grad_power, alpha)
}

/// Minimizer of `||K x - y||^2 + alpha ||x - z||^2`.
pub fn solve_image_deblur(ctx: &SolverContext, y: &Image, z: &Image, alpha: f64) -> Result<Image> {
    require_scale(ctx, true)?;
    ctx.check_inputs(y, z.shape(), alpha)?;
    let prior = ctx.plan.forward(z);
    let ones = vec![1.0; ctx.height * ctx.width];
    solve_diagonal(ctx, y, &prior, &ones, alpha)
}

/// Minimizer of `||S K x - y||^2 + alpha ||D x - z||^2` for `s >= 2`.
pub fn solve_grad_sr(ctx: &SolverContext, y: &Image, z: &GradientField, alpha: f64) -> Result<Image> {
    solve_grad_sr_with(ctx, y, z, alpha, SrPath::Auto)
}

pub fn solve_grad_sr_with(
    ctx: &SolverContext,
    y: &Image,
    z: &GradientField,
    alpha: f64,
    path: SrPath,
) -> Result<Image> {
    require_scale(ctx, false)?;
    ctx.check_inputs(y, z.shape(), alpha)?;
    let prior = ctx.gradient_rhs(z);
    solve_aliased(ctx, y, &prior, &ctx.grad_power, alpha, path)
}

/// Minimizer of `||S K x - y||^2 + alpha ||x - z||^2` for `s >= 2`.
pub fn solve_image_sr(ctx: &SolverContext, y: &Image, z: &Image, alpha: f64) -> Result<Image> {
    solve_image_sr_with(ctx, y, z, alpha, SrPath::Auto)
}

pub fn solve_image_sr_with(
    ctx: &SolverContext,
    y: &Image,
    z: &Image,
    alpha: f64,
    path: SrPath,
) -> Result<Image> {
    require_scale(ctx, false)?;
    ctx.check_inputs(y, z.shape(), alpha)?;
    let prior = ctx.plan.forward(z);
    let ones = vec![1.0; ctx.height * ctx.width];
    solve_aliased(ctx, y, &prior, &ones, alpha, path)
}

/// Dispatches to the deblur or super-resolution gradient solver by the context's scale.
pub fn solve_grad(ctx: &SolverContext, y: &Image, z: &GradientField, alpha: f64) -> Result<Image> {
    if ctx.scale == 1 {
        solve_grad_deblur(ctx, y, z, alpha)
    } else {
        solve_grad_sr(ctx, y, z, alpha)
    }
}

/// Dispatches to the deblur or super-resolution image solver by the context's scale.
pub fn solve_image(ctx: &SolverContext, y: &Image, z: &Image, alpha: f64) -> Result<Image> {
    if ctx.scale == 1 {
        solve_image_deblur(ctx, y, z, alpha)
    } else {
        solve_image_sr(ctx, y, z, alpha)
    }
}

fn solve_diagonal(
    ctx: &SolverContext,
    y: &Image,
    prior: &Spectrum,
    power: &[f64],
    alpha: f64,
) -> Result<Image> {
    let yf = ctx.plan.forward(y);
    let mut x = Vec::with_capacity(power.len());
    for (n, ((k, yv), (p, l))) in ctx
        .otf
        .data()
        .iter()
        .zip(yf.data())
        .zip(prior.data().iter().zip(power))
        .enumerate()
    {
        let den = k.norm_sqr() + alpha * l;
        if den < ILL_POSED_EPS {
            return Err(Error::IllPosed(format!(
                "denominator {den:e} at frequency bin ({}, {})",
                n / ctx.width,
                n % ctx.width
            )));
        }
        x.push((k.conj() * yv + alpha * p) / den);
    }
    let spec = Spectrum::new(ctx.height, ctx.width, x)?;
    Ok(ctx.plan.inverse(&spec))
}

fn solve_aliased(
    ctx: &SolverContext,
    y: &Image,
    prior: &Spectrum,
    power: &[f64],
    alpha: f64,
    path: SrPath,
) -> Result<Image> {
    let s = ctx.scale;
    let (h, w) = ctx.low_res_shape();
    let width = ctx.width;
    let yf = ctx.plan_low.forward(y);
    let n = s * s;
    let s2 = n as f64;

    let mut out = vec![Complex64::new(0.0, 0.0); ctx.height * ctx.width];
    let mut idx = vec![0usize; n];
    let mut d = vec![Complex64::new(0.0, 0.0); n];
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    let mut diag = vec![0.0; n];
    let mut dense = vec![Complex64::new(0.0, 0.0); n * n];

    for p in 0..h {
        for q in 0..w {
            let ylow = yf.get(p, q);
            for a in 0..s {
                for b in 0..s {
                    let m = a * s + b;
                    let k = (p + a * h) * width + (q + b * w);
                    idx[m] = k;
                    let otf = ctx.otf.data()[k];
                    d[m] = otf.conj();
                    rhs[m] = otf.conj() * ylow + alpha * prior.data()[k];
                    diag[m] = alpha * power[k];
                }
            }

            let fast = path == SrPath::Auto && diag.iter().all(|&v| v > ILL_POSED_EPS);
            if fast {
                let mut dh_u = Complex64::new(0.0, 0.0);
                let mut dh_v = 0.0;
                for m in 0..n {
                    dh_u += d[m].conj() * rhs[m] / diag[m];
                    dh_v += d[m].norm_sqr() / diag[m];
                }
                let factor = dh_u / (s2 + dh_v);
                for m in 0..n {
                    out[idx[m]] = (rhs[m] - d[m] * factor) / diag[m];
                }
            } else {
                for r in 0..n {
                    for c in 0..n {
                        dense[r * n + c] = d[r] * d[c].conj() / s2;
                    }
                    dense[r * n + r] += diag[r];
                }
                solve_dense_in_place(&mut dense, &mut rhs, n).map_err(|pivot| {
                    Error::IllPosed(format!(
                        "singular aliasing block at low-res frequency ({p}, {q}) (pivot {pivot:e})"
                    ))
                })?;
                for m in 0..n {
                    out[idx[m]] = rhs[m];
                }
            }
        }
    }
    let spec = Spectrum::new(ctx.height, ctx.width, out)?;
    Ok(ctx.plan.inverse(&spec))
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` system.
/// On success `rhs` holds the solution; on failure returns the offending pivot.
fn solve_dense_in_place(m: &mut [Complex64], rhs: &mut [Complex64], n: usize) -> Result<(), f64> {
    let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, m[r * n + col].norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if pivot < ILL_POSED_EPS * scale {
            return Err(pivot);
        }
        if pivot_row != col {
            for c in 0..n {
                m.swap(col * n + c, pivot_row * n + c);
            }
            rhs.swap(col, pivot_row);
        }
        let inv = 1.0 / m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] * inv;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in col..n {
                let v = m[col * n + c];
                m[r * n + c] -= f * v;
            }
            let v = rhs[col];
            rhs[r] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for c in col + 1..n {
            acc -= m[col * n + c] * rhs[c];
        }
        rhs[col] = acc / m[col * n + col];
    }
    Ok(())
}
