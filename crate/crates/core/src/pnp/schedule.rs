use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-iteration denoiser noise levels and the matching quadratic penalty weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Effective measurement noise, `max(sigma, floor)`.
    pub sigma_eff: f64,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Constant noise level `sigma_fixed` for `iters` iterations.
    pub fn fixed(sigma: f64, sigma_floor: f64, sigma_fixed: f64, iters: usize, lambda: f64) -> Result<Self> {
        validate(sigma, sigma_floor, iters, lambda)?;
        if !(sigma_fixed > 0.0) || !sigma_fixed.is_finite() {
            return Err(Error::Parameter(format!("fixed sigma {sigma_fixed} must be > 0")));
        }
        let sigma_eff = sigma.max(sigma_floor);
        let alpha = lambda * sigma_eff * sigma_eff / (sigma_fixed * sigma_fixed);
        Ok(Schedule {
            sigmas: vec![sigma_fixed; iters],
            alphas: vec![alpha; iters],
            sigma_eff,
        })
    }
}

fn validate(sigma: f64, sigma_floor: f64, iters: usize, lambda: f64) -> Result<()> {
    if iters == 0 {
        return Err(Error::Parameter("iteration count must be >= 1".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("noise level {sigma} must be >= 0")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda {lambda} must be > 0")));
    }
    if !(sigma_floor > 0.0) && sigma == 0.0 {
        return Err(Error::Parameter(
            "noiseless measurements need a positive sigma floor".into(),
        ));
    }
    Ok(())
}

/// Log-uniform noise schedule from `sigma_max` down to the effective
/// measurement noise, multiplied by `scale`, with `alpha_t = lambda * sigma_eff^2 / sigma_t^2`.
///
/// `sigma_max` below the effective noise is raised to it so the schedule never increases.
pub fn make_schedule(
    sigma: f64,
    iters: usize,
    lambda: f64,
    sigma_max: f64,
    scale: f64,
    sigma_floor: f64,
) -> Result<Schedule> {
    validate(sigma, sigma_floor, iters, lambda)?;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Parameter(format!("schedule scale {scale} must be > 0")));
    }
    if !(sigma_max > 0.0) || !sigma_max.is_finite() {
        return Err(Error::Parameter(format!("sigma_max {sigma_max} must be > 0")));
    }
    let sigma_eff = sigma.max(sigma_floor);
    let (hi, lo) = (sigma_max.max(sigma_eff).ln(), sigma_eff.ln());
    let sigmas: Vec<f64> = (0..iters)
        .map(|t| {
            if iters == 1 || t + 1 == iters {
                // exact endpoint
                scale * sigma_eff
            } else {
                let frac = t as f64 / (iters - 1) as f64;
                scale * (hi + (lo - hi) * frac).exp()
            }
        })
        .collect();
    let alphas = sigmas
        .iter()
        .map(|s| lambda * sigma_eff * sigma_eff / (s * s))
        .collect();
    Ok(Schedule {
        sigmas,
        alphas,
        sigma_eff,
    })
}
