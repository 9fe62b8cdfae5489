//! TV-regularized deblurring problems driven through the library's soft-threshold runs.

use apnp_core::operators::{forward_apply, forward_noiseless, gaussian_kernel, grad};
use apnp_core::pnp::{reconstruct, IterationView, SplitRef};
use apnp_core::{Algorithm, DegradationSpec, DenoiserHandle, Domain, Image, RunConfig, RunTrace};

/// Piecewise-smooth test scene with values inside [0.2, 0.8].
pub fn scene(n: usize) -> Image {
    Image::from_fn(n, n, |i, j| {
        let (y, x) = (i as f64 / n as f64, j as f64 / n as f64);
        let mut v = 0.3 + 0.2 * x;
        if (x - 0.35).powi(2) + (y - 0.4).powi(2) < 0.04 {
            v += 0.3;
        }
        if (0.6..0.85).contains(&x) && (0.55..0.9).contains(&y) {
            v -= 0.15;
        }
        v
    })
}

pub struct TvProblem {
    pub spec: DegradationSpec,
    pub y: Image,
    pub lambda: f64,
    pub weight: f64,
    /// TV weight in `0.5 ||Kx - y||^2 + tau ||Dx||_1`.
    pub tau: f64,
}

pub fn tv_problem(n: usize, blur: f64, tau: f64) -> TvProblem {
    let sigma = 5.0 / 255.0;
    let kernel = gaussian_kernel(blur, blur, 0.0, 7).unwrap();
    let spec = DegradationSpec::new(kernel, 1, sigma).unwrap();
    let y = forward_apply(&spec, &scene(n), 5).unwrap();
    let lambda = 0.18;
    // HQS/ADMM with shrinkage by w * sigma_t^2 minimize
    // ||Ax - y||^2 + 2 lambda w sigma^2 ||Dx||_1, i.e. tau = lambda w sigma^2.
    let weight = tau / (lambda * sigma * sigma);
    TvProblem { spec, y, lambda, weight, tau }
}

/// Runs `algorithm` with shrinkage at a fixed `sigma_t`; returns the last unclipped
/// iterate, the trace and the HQS split objective after every iteration.
pub fn tv_run(p: &TvProblem, algorithm: Algorithm, fixed_sigma: f64, iters: usize) -> (Image, RunTrace, Vec<f64>) {
    let mut cfg = RunConfig::new(algorithm);
    cfg.lambda = p.lambda;
    cfg.iters = iters;
    cfg.fixed_sigma = Some(fixed_sigma);
    let d = DenoiserHandle::soft_threshold(Domain::Gradient, p.weight).unwrap();
    let mut last = None;
    let mut split_objective = Vec::new();
    let sigma = p.spec.sigma();
    let alpha = p.lambda * sigma * sigma / (fixed_sigma * fixed_sigma);
    let mut obs = |v: &IterationView<'_>| {
        last = Some(v.x.clone());
        if let SplitRef::Gradient(z) = v.z {
            let r = forward_noiseless(&p.spec, v.x).unwrap().zip_map(&p.y, |a, b| a - b).unwrap();
            let c = grad(v.x).sub(z).unwrap();
            split_objective.push(r.norm_sq() + alpha * c.norm_sq() + 2.0 * alpha * p.weight * fixed_sigma * fixed_sigma * z.l1_norm());
        }
    };
    let (_, trace) = reconstruct(&cfg, &p.spec, &p.y, &d, None, Some(&mut obs)).unwrap();
    (last.unwrap(), trace, split_objective)
}
