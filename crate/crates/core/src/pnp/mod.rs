//! Plug-and-Play reconstruction drivers.
//!
//! Four algorithms share two loops. HQS alternates
//!
//! ```text
//! z_t = denoise(T x_{t-1}, sigma_t)
//! x_t = argmin_x ||A x - y||^2 + alpha_t ||T x - z_t||^2
//! ```
//!
//! and ADMM adds a scaled dual `s` (starting at zero):
//!
//! ```text
//! z_t = denoise(T x_{t-1} - s_{t-1}, sigma_t)
//! x_t = argmin_x ||A x - y||^2 + alpha_t ||z_t + s_{t-1} - T x||^2
//! s_t = s_{t-1} + z_t - T x_t
//! ```
//!
//! with `T` the periodic gradient for the analysis variants and the identity
//! for the image-domain variants, and `alpha_t = lambda * sigma^2 / sigma_t^2`.

mod init;
mod schedule;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoise::{denoise, Denoisable, DenoiserHandle, Domain};
use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::metrics::psnr;
use crate::operators::{forward_noiseless, grad, DegradationSpec, GradientField};
use crate::subproblem::{solve_grad, solve_image, SolverContext};

pub use init::{bicubic_upsample, initialize};
pub use schedule::{make_schedule, Schedule};

/// Default upper end of the noise schedule.
pub const DEFAULT_SIGMA_MAX: f64 = 49.0 / 255.0;
/// Default effective noise used when the measurement is noiseless.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1.0 / 255.0;
pub const DEFAULT_ITERS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Image-domain HQS (DPIR-style).
    PnpHqs,
    /// Gradient-domain HQS.
    ApnpHqs,
    PnpAdmm,
    ApnpAdmm,
}

impl Algorithm {
    /// Column order used in reports.
    pub const ALL: [Algorithm; 4] = [
        Algorithm::PnpHqs,
        Algorithm::ApnpHqs,
        Algorithm::PnpAdmm,
        Algorithm::ApnpAdmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PnpHqs => "pnp-hqs",
            Algorithm::ApnpHqs => "apnp-hqs",
            Algorithm::PnpAdmm => "pnp-admm",
            Algorithm::ApnpAdmm => "apnp-admm",
        }
    }

    /// Column title in benchmark tables.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::PnpHqs => "DPIR",
            Algorithm::ApnpHqs => "APnP-HQS",
            Algorithm::PnpAdmm => "PnP-ADMM",
            Algorithm::ApnpAdmm => "APnP-ADMM",
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            Algorithm::ApnpHqs | Algorithm::ApnpAdmm => Domain::Gradient,
            Algorithm::PnpHqs | Algorithm::PnpAdmm => Domain::Image,
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            Algorithm::PnpHqs => 0.23,
            Algorithm::ApnpHqs => 0.18,
            Algorithm::PnpAdmm => 0.38,
            Algorithm::ApnpAdmm => 0.24,
        }
    }

    pub fn default_schedule_scale(self) -> f64 {
        match self {
            Algorithm::ApnpHqs => std::f64::consts::SQRT_2,
            _ => 1.0,
        }
    }

    fn is_admm(self) -> bool {
        matches!(self, Algorithm::PnpAdmm | Algorithm::ApnpAdmm)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub iters: usize,
    pub sigma_floor: f64,
    pub sigma_max: f64,
    pub schedule_scale: f64,
    /// Use this constant denoiser level instead of the decreasing schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_sigma: Option<f64>,
    pub seed: u64,
}

impl RunConfig {
    /// Defaults for `algorithm`: its lambda and schedule scale, 24 iterations.
    pub fn new(algorithm: Algorithm) -> Self {
        RunConfig {
            algorithm,
            lambda: algorithm.default_lambda(),
            iters: DEFAULT_ITERS,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            sigma_max: DEFAULT_SIGMA_MAX,
            schedule_scale: algorithm.default_schedule_scale(),
            fixed_sigma: None,
            seed: 0,
        }
    }

    pub fn schedule(&self, sigma: f64) -> Result<Schedule> {
        if !(self.lambda > 0.0) || self.iters == 0 || !(self.schedule_scale > 0.0) {
            return Err(Error::Parameter(
                "run config needs lambda > 0, iters >= 1, schedule_scale > 0".into(),
            ));
        }
        match self.fixed_sigma {
            Some(fixed) => Schedule::fixed(sigma, self.sigma_floor, fixed, self.iters, self.lambda),
            None => make_schedule(
                sigma,
                self.iters,
                self.lambda,
                self.sigma_max,
                self.schedule_scale,
                self.sigma_floor,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sigma: f64,
    pub alpha: f64,
    /// `||A x_t - y||^2`.
    pub data_fidelity: f64,
    /// `||z_t - T x_t||` with `T` the splitting transform.
    pub split_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub denoiser: String,
    pub sigma_eff: f64,
    pub records: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One-line JSON record.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_record(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Format(format!("bad trace record: {e}")))
    }
}

/// Borrowed view of a splitting variable.
#[derive(Clone, Copy, Debug)]
pub enum SplitRef<'a> {
    Gradient(&'a GradientField),
    Image(&'a Image),
}

/// State after one full iteration, handed to an observer.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub iteration: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub x: &'a Image,
    pub z: SplitRef<'a>,
    /// Scaled dual variable (ADMM only).
    pub dual: Option<SplitRef<'a>>,
}

/// Variable the prior acts on: `T x` for some linear `T`.
trait Split: Denoisable {
    fn analyze(x: &Image) -> Self;
    fn solve(ctx: &SolverContext, y: &Image, target: &Self, alpha: f64) -> Result<Image>;
    fn plus(&self, other: &Self) -> Self;
    fn minus(&self, other: &Self) -> Self;
    fn energy(&self) -> f64;
    fn zero_like(x: &Image) -> Self;
    fn view(&self) -> SplitRef<'_>;
}

impl Split for GradientField {
    fn analyze(x: &Image) -> Self {
        grad(x)
    }

    fn solve(ctx: &SolverContext, y: &Image, target: &Self, alpha: f64) -> Result<Image> {
        solve_grad(ctx, y, target, alpha)
    }

    fn plus(&self, other: &Self) -> Self {
        self.add(other).expect("same shape")
    }

    fn minus(&self, other: &Self) -> Self {
        self.sub(other).expect("same shape")
    }

    fn energy(&self) -> f64 {
        self.norm_sq()
    }

    fn zero_like(x: &Image) -> Self {
        GradientField::zeros(x.height(), x.width())
    }

    fn view(&self) -> SplitRef<'_> {
        SplitRef::Gradient(self)
    }
}

impl Split for Image {
    fn analyze(x: &Image) -> Self {
        x.clone()
    }

    fn solve(ctx: &SolverContext, y: &Image, target: &Self, alpha: f64) -> Result<Image> {
        solve_image(ctx, y, target, alpha)
    }

    fn plus(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b).expect("same shape")
    }

    fn minus(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b).expect("same shape")
    }

    fn energy(&self) -> f64 {
        self.norm_sq()
    }

    fn zero_like(x: &Image) -> Self {
        Image::zeros(x.height(), x.width())
    }

    fn view(&self) -> SplitRef<'_> {
        SplitRef::Image(self)
    }
}

pub type Observer<'o> = &'o mut dyn FnMut(&IterationView<'_>);

struct Problem<'a> {
    cfg: &'a RunConfig,
    spec: &'a DegradationSpec,
    y: &'a Image,
    denoiser: &'a DenoiserHandle,
    truth: Option<&'a Image>,
}

fn iterate<V: Split>(p: &Problem<'_>, admm: bool, mut observer: Option<Observer<'_>>) -> Result<(Image, RunTrace)> {
    let s = p.spec.scale();
    let (h, w) = (p.y.height() * s, p.y.width() * s);
    if let Some(t) = p.truth {
        if t.shape() != (h, w) {
            return Err(Error::Size(format!(
                "ground truth {}x{} vs reconstruction {h}x{w}",
                t.height(),
                t.width()
            )));
        }
    }
    let ctx = SolverContext::new(p.spec.kernel(), s, h, w)?;
    let schedule = p.cfg.schedule(p.spec.sigma())?;
    let mut x = initialize(p.spec, p.y);
    let mut dual = V::zero_like(&x);
    let mut trace = RunTrace {
        algorithm: p.cfg.algorithm,
        denoiser: p.denoiser.describe(),
        sigma_eff: schedule.sigma_eff,
        records: Vec::with_capacity(schedule.len()),
        warnings: Vec::new(),
    };

    for (t, (&sigma, &alpha)) in schedule.sigmas.iter().zip(&schedule.alphas).enumerate() {
        let index = t + 1;
        if !p.denoiser.in_trained_range(sigma) {
            trace
                .warnings
                .push(format!("iteration {index}: sigma {sigma:.6} outside the denoiser's trained range"));
        }
        let step = || -> Result<(Image, V, V)> {
            let tx = V::analyze(&x);
            if admm {
                let z: V = denoise(p.denoiser, &tx.minus(&dual), sigma)?;
                let target = z.plus(&dual);
                let x_next = V::solve(&ctx, p.y, &target, alpha)?;
                let tx_next = V::analyze(&x_next);
                let dual_next = dual.plus(&z).minus(&tx_next);
                Ok((x_next, z, dual_next))
            } else {
                let z: V = denoise(p.denoiser, &tx, sigma)?;
                let x_next = V::solve(&ctx, p.y, &z, alpha)?;
                Ok((x_next, z, V::zero_like(&x)))
            }
        };
        let (x_next, z, dual_next) = step().map_err(|e| e.at_iteration(index))?;
        x = x_next;
        dual = dual_next;

        let residual = z.minus(&V::analyze(&x)).energy().sqrt();
        let ax = forward_noiseless(p.spec, &x)?;
        let data_fidelity = ax.zip_map(p.y, |a, b| (a - b) * (a - b))?.data().iter().sum();
        let psnr = match p.truth {
            Some(truth) => Some(psnr(&x.clip(0.0, 1.0), truth, 0)?),
            None => None,
        };
        trace.records.push(IterationRecord {
            iteration: index,
            sigma,
            alpha,
            data_fidelity,
            split_residual: residual,
            psnr,
        });
        if let Some(obs) = observer.as_mut() {
            obs(&IterationView {
                iteration: index,
                sigma,
                alpha,
                x: &x,
                z: z.view(),
                dual: admm.then(|| dual.view()),
            });
        }
    }
    Ok((x.clip(0.0, 1.0), trace))
}

/// Runs `cfg.algorithm`, optionally scoring every iterate against `truth` and
/// reporting each iteration to `observer`. Returns the clipped reconstruction.
pub fn reconstruct(
    cfg: &RunConfig,
    spec: &DegradationSpec,
    y: &Image,
    denoiser: &DenoiserHandle,
    truth: Option<&Image>,
    observer: Option<Observer<'_>>,
) -> Result<(Image, RunTrace)> {
    let algo = cfg.algorithm;
    if denoiser.domain() != algo.domain() {
        return Err(Error::Domain {
            handle: denoiser.domain().name(),
            input: algo.domain().name(),
        });
    }
    let problem = Problem {
        cfg,
        spec,
        y,
        denoiser,
        truth,
    };
    match algo.domain() {
        Domain::Gradient => iterate::<GradientField>(&problem, algo.is_admm(), observer),
        Domain::Image => iterate::<Image>(&problem, algo.is_admm(), observer),
    }
}

fn run_as(
    algorithm: Algorithm,
    cfg: &RunConfig,
    spec: &DegradationSpec,
    y: &Image,
    denoiser: &DenoiserHandle,
) -> Result<(Image, RunTrace)> {
    let cfg = RunConfig {
        algorithm,
        ..cfg.clone()
    };
    reconstruct(&cfg, spec, y, denoiser, None, None)
}

/// Gradient-domain HQS.
pub fn run_apnp_hqs(cfg: &RunConfig, spec: &DegradationSpec, y: &Image, denoiser: &DenoiserHandle) -> Result<(Image, RunTrace)> {
    run_as(Algorithm::ApnpHqs, cfg, spec, y, denoiser)
}

/// Gradient-domain ADMM.
pub fn run_apnp_admm(cfg: &RunConfig, spec: &DegradationSpec, y: &Image, denoiser: &DenoiserHandle) -> Result<(Image, RunTrace)> {
    run_as(Algorithm::ApnpAdmm, cfg, spec, y, denoiser)
}

/// Image-domain HQS.
pub fn run_pnp_hqs(cfg: &RunConfig, spec: &DegradationSpec, y: &Image, denoiser: &DenoiserHandle) -> Result<(Image, RunTrace)> {
    run_as(Algorithm::PnpHqs, cfg, spec, y, denoiser)
}

/// Image-domain ADMM.
pub fn run_pnp_admm(cfg: &RunConfig, spec: &DegradationSpec, y: &Image, denoiser: &DenoiserHandle) -> Result<(Image, RunTrace)> {
    run_as(Algorithm::PnpAdmm, cfg, spec, y, denoiser)
}
