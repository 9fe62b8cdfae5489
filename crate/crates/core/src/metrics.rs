//! PSNR and SSIM for images with unit dynamic range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{ensure_same_shape, Image};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    /// Pixels removed from every side before scoring.
    pub crop_border: usize,
}

fn cropped(a: &Image, crop: usize) -> Result<Image> {
    let (h, w) = a.shape();
    if 2 * crop >= h.min(w) {
        return Err(Error::Parameter(format!(
            "crop {crop} leaves nothing of a {h}x{w} image"
        )));
    }
    a.crop(crop, crop, h - 2 * crop, w - 2 * crop)
}

/// `10 log10(1 / MSE)` over the region left after removing `crop` pixels per side,
/// capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, crop: usize) -> Result<f64> {
    ensure_same_shape(a.shape(), b.shape())?;
    let (a, b) = (cropped(a, crop)?, cropped(b, crop)?);
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable weighted mean over every fully contained window ("valid" filtering).
fn filter_valid(data: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|b| win[b] * data[i * w + j + b]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|a| win[a] * rows[(i + a) * ow + j]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// `K1 = 0.01`, `K2 = 0.03` and dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_shape(a.shape(), b.shape())?;
    let (h, w) = a.shape();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "{h}x{w} image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let win = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<_>>();
    let mu_x = filter_valid(x, h, w, &win);
    let mu_y = filter_valid(y, h, w, &win);
    let xx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &win);
    let yy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &win);
    let xy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &win);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// PSNR and SSIM after removing `crop` pixels from each side.
pub fn evaluate(restored: &Image, truth: &Image, crop: usize) -> Result<MetricReport> {
    ensure_same_shape(restored.shape(), truth.shape())?;
    let psnr = psnr(restored, truth, crop)?;
    let ssim = ssim(&cropped(restored, crop)?, &cropped(truth, crop)?)?;
    Ok(MetricReport {
        psnr,
        ssim,
        crop_border: crop,
    })
}
