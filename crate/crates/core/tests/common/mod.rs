//! Independent reference implementations for the integration tests.
//!
//! Apart from the `tv` problem builders, everything here works on dense
//! matrices or direct spatial loops and never calls the crate's Fourier code,
//! so agreement with the library is evidence rather than tautology.

#![allow(dead_code)]

pub mod tv;

use apnp_core::{BlurKernel, Image};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(h: usize, w: usize, rng: &mut impl Rng) -> Image {
    Image::from_fn(h, w, |_, _| rng.random::<f64>())
}

/// Positive random taps, normalized to unit sum.
pub fn random_kernel(size: usize, rng: &mut impl Rng) -> BlurKernel {
    let taps = (0..size * size).map(|_| rng.random::<f64>() + 0.05).collect();
    BlurKernel::normalized(size, taps).unwrap()
}

pub fn to_vec(img: &Image) -> DVector<f64> {
    DVector::from_column_slice(img.data())
}

pub fn to_image(v: &DVector<f64>, h: usize, w: usize) -> Image {
    Image::new(h, w, v.as_slice().to_vec()).unwrap()
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Circular convolution with the kernel's center tap at the origin:
/// `y[i,j] = sum_{a,b} k[a,b] x[i - (a - c), j - (b - c)]`.
pub fn conv_matrix(k: &BlurKernel, h: usize, w: usize) -> DMatrix<f64> {
    let c = k.center() as isize;
    let mut m = DMatrix::zeros(h * w, h * w);
    for i in 0..h {
        for j in 0..w {
            for a in 0..k.size() {
                for b in 0..k.size() {
                    let si = wrap(i as isize - (a as isize - c), h);
                    let sj = wrap(j as isize - (b as isize - c), w);
                    m[(i * w + j, si * w + sj)] += k.tap(a, b);
                }
            }
        }
    }
    m
}

/// Keeps rows and columns whose index is a multiple of `s`.
pub fn decimation_matrix(h: usize, w: usize, s: usize) -> DMatrix<f64> {
    let (lh, lw) = (h / s, w / s);
    let mut m = DMatrix::zeros(lh * lw, h * w);
    for i in 0..lh {
        for j in 0..lw {
            m[(i * lw + j, (i * s) * w + j * s)] = 1.0;
        }
    }
    m
}

/// Periodic forward differences `(D_h, D_v)`.
pub fn gradient_matrices(h: usize, w: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = h * w;
    let mut dh = DMatrix::zeros(n, n);
    let mut dv = DMatrix::zeros(n, n);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            dh[(p, i * w + (j + 1) % w)] += 1.0;
            dh[(p, p)] -= 1.0;
            dv[(p, ((i + 1) % h) * w + j)] += 1.0;
            dv[(p, p)] -= 1.0;
        }
    }
    (dh, dv)
}

/// `A = S K` as a dense matrix.
pub fn forward_matrix(k: &BlurKernel, h: usize, w: usize, s: usize) -> DMatrix<f64> {
    decimation_matrix(h, w, s) * conv_matrix(k, h, w)
}

/// Solves `(A^T A + alpha T^T T) x = A^T y + alpha T^T z` with Cholesky.
pub fn dense_normal_solve(
    a: &DMatrix<f64>,
    t: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    alpha: f64,
) -> DVector<f64> {
    let lhs = a.transpose() * a + t.transpose() * t * alpha;
    let rhs = a.transpose() * y + t.transpose() * z * alpha;
    lhs.cholesky().expect("normal matrix is positive definite").solve(&rhs)
}

pub fn rel_err(x: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Direct spatial circular convolution (same convention as [`conv_matrix`]).
pub fn conv_direct(x: &Image, k: &BlurKernel) -> Image {
    let (h, w) = x.shape();
    let c = k.center() as isize;
    Image::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in 0..k.size() {
            for b in 0..k.size() {
                acc += k.tap(a, b) * x.get(wrap(i as isize - (a as isize - c), h), wrap(j as isize - (b as isize - c), w));
            }
        }
        acc
    })
}

/// Adjoint of [`conv_direct`]: correlation with the same kernel.
pub fn corr_direct(x: &Image, k: &BlurKernel) -> Image {
    let (h, w) = x.shape();
    let c = k.center() as isize;
    Image::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in 0..k.size() {
            for b in 0..k.size() {
                acc += k.tap(a, b) * x.get(wrap(i as isize + (a as isize - c), h), wrap(j as isize + (b as isize - c), w));
            }
        }
        acc
    })
}

fn diff(x: &Image) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = x.shape();
    let mut dh = vec![0.0; h * w];
    let mut dv = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            dh[i * w + j] = x.get(i, (j + 1) % w) - x.get(i, j);
            dv[i * w + j] = x.get((i + 1) % h, j) - x.get(i, j);
        }
    }
    (dh, dv)
}

fn diff_adjoint(ph: &[f64], pv: &[f64], h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |i, j| {
        let p = i * w + j;
        let left = i * w + (j + w - 1) % w;
        let up = ((i + h - 1) % h) * w + j;
        (ph[left] - ph[p]) + (pv[up] - pv[p])
    })
}

/// `0.5 ||K x - y||^2 + tau ||D x||_1` (deblurring, no decimation).
pub fn tv_objective(x: &Image, k: &BlurKernel, y: &Image, tau: f64) -> f64 {
    let r = conv_direct(x, k);
    let data: f64 = r.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let (dh, dv) = diff(x);
    let tv: f64 = dh.iter().chain(&dv).map(|v| v.abs()).sum();
    0.5 * data + tau * tv
}

pub struct TvSolution {
    pub x: Image,
    pub objective: f64,
    /// Primal objective minus the dual objective at the returned pair.
    pub gap: f64,
}

/// Chambolle-Pock on `min_x F(L x)` with `L = [K; D_h; D_v]` and
/// `F(u, v) = 0.5 ||u - y||^2 + tau ||v||_1` (and `G = 0`).
///
/// The reported gap bounds `objective - optimum` whenever the minimizer lies
/// in `[-1, 1]^n`: the dual value `-0.5||p_u||^2 - <p_u, y>` is corrected by
/// `sum |L^T p|`, the most `<x, L^T p>` can contribute over that box.
pub fn chambolle_pock_tv(k: &BlurKernel, y: &Image, tau: f64, iters: usize) -> TvSolution {
    let (h, w) = y.shape();
    // ||L||^2 <= ||K||^2 + ||D||^2 <= 1 + 8
    let l_norm = 3.0;
    let (sigma, t) = (0.99 / l_norm, 0.99 / l_norm);
    let mut x = y.clone();
    let mut x_bar = x.clone();
    let mut pu = vec![0.0; h * w];
    let mut ph = vec![0.0; h * w];
    let mut pv = vec![0.0; h * w];
    for _ in 0..iters {
        let kx = conv_direct(&x_bar, k);
        let (dh, dv) = diff(&x_bar);
        for n in 0..h * w {
            // prox of sigma F1*, F1(u) = 0.5||u - y||^2
            pu[n] = (pu[n] + sigma * kx.data()[n] - sigma * y.data()[n]) / (1.0 + sigma);
            // prox of sigma F2* = projection onto the tau-box
            ph[n] = (ph[n] + sigma * dh[n]).clamp(-tau, tau);
            pv[n] = (pv[n] + sigma * dv[n]).clamp(-tau, tau);
        }
        let kt = corr_direct(&Image::new(h, w, pu.clone()).unwrap(), k);
        let dt = diff_adjoint(&ph, &pv, h, w);
        let x_new = Image::from_fn(h, w, |i, j| x.get(i, j) - t * (kt.get(i, j) + dt.get(i, j)));
        x_bar = Image::from_fn(h, w, |i, j| 2.0 * x_new.get(i, j) - x.get(i, j));
        x = x_new;
    }
    let objective = tv_objective(&x, k, y, tau);
    // Dual value of the box-feasible p: -0.5||p_u||^2 - <p_u, y>, valid when L^T p = 0.
    let dual: f64 = pu.iter().zip(y.data()).map(|(p, yv)| -0.5 * p * p - p * yv).sum();
    let kt = corr_direct(&Image::new(h, w, pu.clone()).unwrap(), k);
    let dt = diff_adjoint(&ph, &pv, h, w);
    let infeas: f64 = kt.data().iter().zip(dt.data()).map(|(a, b)| (a + b).abs()).sum();
    TvSolution {
        x,
        objective,
        gap: objective - dual + infeas,
    }
}

/// Shifted periodic copy used by translation-equivariance checks.
pub fn roll(x: &Image, di: usize, dj: usize) -> Image {
    let (h, w) = x.shape();
    Image::from_fn(h, w, |i, j| x.get((i + h - di % h) % h, (j + w - dj % w) % w))
}
