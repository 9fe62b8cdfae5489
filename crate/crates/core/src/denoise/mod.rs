//! Pluggable Gaussian denoisers used as priors.
//!
//! A [`DenoiserHandle`] pairs a denoiser kind with the domain it acts on:
//! gradient fields (two channels) or images (one channel). Neural denoisers
//! take an extra constant noise-level channel as input.

pub mod archive;
pub mod engine;
pub mod fixture;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::operators::GradientField;

pub use archive::{load_weights, ArchiveMetadata, Prediction, WeightArchive};
pub use engine::{neural_forward, Tensor};
pub use fixture::Fixture;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Gradient,
    Image,
}

impl Domain {
    /// `(input, output)` channel counts of a neural denoiser, noise map included.
    pub fn channels(self) -> (usize, usize) {
        match self {
            Domain::Gradient => (3, 2),
            Domain::Image => (2, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Gradient => "gradient",
            Domain::Image => "image",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub enum DenoiserKind {
    Identity,
    /// Shrinkage by `weight * sigma^2`: the proximal map of `weight * ||.||_1` with step `sigma^2`.
    SoftThreshold { weight: f64 },
    Neural(Arc<WeightArchive>),
}

#[derive(Clone, Debug)]
pub struct DenoiserHandle {
    kind: DenoiserKind,
    domain: Domain,
}

impl DenoiserHandle {
    pub fn identity(domain: Domain) -> Self {
        DenoiserHandle {
            kind: DenoiserKind::Identity,
            domain,
        }
    }

    pub fn soft_threshold(domain: Domain, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Parameter(format!("soft-threshold weight {weight} must be >= 0")));
        }
        Ok(DenoiserHandle {
            kind: DenoiserKind::SoftThreshold { weight },
            domain,
        })
    }

    /// Neural handle; the archive header decides the domain.
    pub fn neural(archive: impl Into<Arc<WeightArchive>>) -> Self {
        let archive = archive.into();
        DenoiserHandle {
            domain: archive.domain,
            kind: DenoiserKind::Neural(archive),
        }
    }

    pub fn kind(&self) -> &DenoiserKind {
        &self.kind
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Whether `sigma` lies inside the noise range the denoiser was built for.
    /// Analytic denoisers accept every level.
    pub fn in_trained_range(&self, sigma: f64) -> bool {
        match &self.kind {
            DenoiserKind::Neural(a) => sigma >= a.metadata.sigma_min && sigma <= a.metadata.sigma_max,
            _ => true,
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            DenoiserKind::Identity => format!("identity ({})", self.domain),
            DenoiserKind::SoftThreshold { weight } => format!("soft-threshold w={weight} ({})", self.domain),
            DenoiserKind::Neural(a) => format!(
                "neural {} layers, {} parameters ({})",
                a.layers.len(),
                a.parameter_count(),
                self.domain
            ),
        }
    }
}

/// Signals a denoiser can act on.
pub trait Denoisable: Sized + Clone {
    const DOMAIN: Domain;

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self;

    /// Channel-major network input with a constant noise-map channel appended.
    fn to_tensor(&self, sigma: f64) -> Tensor;

    fn from_tensor(t: &Tensor) -> Result<Self>;
}

impl Denoisable for Image {
    const DOMAIN: Domain = Domain::Image;

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        self.map(f)
    }

    fn to_tensor(&self, sigma: f64) -> Tensor {
        let (h, w) = self.shape();
        let mut data: Vec<f32> = self.data().iter().map(|&v| v as f32).collect();
        data.extend(std::iter::repeat_n(sigma as f32, h * w));
        Tensor::from_vec(2, h, w, data).expect("shape")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        Image::new(t.height, t.width, t.plane(0).iter().map(|&v| v as f64).collect())
    }
}

impl Denoisable for GradientField {
    const DOMAIN: Domain = Domain::Gradient;

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        self.map(f)
    }

    fn to_tensor(&self, sigma: f64) -> Tensor {
        let (h, w) = self.shape();
        let mut data: Vec<f32> = self
            .dh
            .data()
            .iter()
            .chain(self.dv.data())
            .map(|&v| v as f32)
            .collect();
        data.extend(std::iter::repeat_n(sigma as f32, h * w));
        Tensor::from_vec(3, h, w, data).expect("shape")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let plane = |c| Image::new(t.height, t.width, t.plane(c).iter().map(|&v| v as f64).collect());
        GradientField::new(plane(0)?, plane(1)?)
    }
}

/// `sign(v) * max(|v| - t, 0)`.
#[inline]
pub fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Applies the denoiser at noise level `sigma`.
pub fn denoise<T: Denoisable>(handle: &DenoiserHandle, input: &T, sigma: f64) -> Result<T> {
    if handle.domain != T::DOMAIN {
        return Err(Error::Domain {
            handle: handle.domain.name(),
            input: T::DOMAIN.name(),
        });
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("denoiser sigma {sigma} must be >= 0")));
    }
    match &handle.kind {
        DenoiserKind::Identity => Ok(input.clone()),
        DenoiserKind::SoftThreshold { weight } => {
            let t = weight * sigma * sigma;
            Ok(input.map_values(|v| shrink(v, t)))
        }
        DenoiserKind::Neural(archive) => {
            if !handle.in_trained_range(sigma) {
                log::warn!(
                    "sigma {sigma:.5} outside trained range [{:.5}, {:.5}]",
                    archive.metadata.sigma_min,
                    archive.metadata.sigma_max
                );
            }
            let out = neural_forward(archive, &input.to_tensor(sigma))?;
            T::from_tensor(&out)
        }
    }
}
