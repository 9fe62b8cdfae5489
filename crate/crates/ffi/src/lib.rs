//! C ABI over `apnp-core`.
//!
//! Every object crosses the boundary as an opaque handle created by an
//! `apnp_*_new`/`apnp_*_load` function and released with the matching
//! `apnp_*_free`. Fallible calls return an [`ApnpStatus`] and write their
//! result through an out-pointer; the message of the most recent failure on
//! the calling thread is available from [`apnp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use apnp_core::denoise::load_weights;
use apnp_core::metrics::{evaluate, psnr};
use apnp_core::operators::{default_kernel_set, forward_apply};
use apnp_core::pnp::reconstruct;
use apnp_core::{Algorithm, BlurKernel, DegradationSpec, DenoiserHandle, Domain, Error, Image, RunConfig};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApnpStatus {
    Ok = 0,
    NullPointer = 1,
    Size = 2,
    Parameter = 3,
    IllPosed = 4,
    Domain = 5,
    Archive = 6,
    Io = 7,
    Format = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApnpAlgorithm {
    PnpHqs = 0,
    ApnpHqs = 1,
    PnpAdmm = 2,
    ApnpAdmm = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApnpDomain {
    Gradient = 0,
    Image = 1,
}

impl From<ApnpAlgorithm> for Algorithm {
    fn from(a: ApnpAlgorithm) -> Self {
        match a {
            ApnpAlgorithm::PnpHqs => Algorithm::PnpHqs,
            ApnpAlgorithm::ApnpHqs => Algorithm::ApnpHqs,
            ApnpAlgorithm::PnpAdmm => Algorithm::PnpAdmm,
            ApnpAlgorithm::ApnpAdmm => Algorithm::ApnpAdmm,
        }
    }
}

impl From<ApnpDomain> for Domain {
    fn from(d: ApnpDomain) -> Self {
        match d {
            ApnpDomain::Gradient => Domain::Gradient,
            ApnpDomain::Image => Domain::Image,
        }
    }
}

impl From<Domain> for ApnpDomain {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Gradient => ApnpDomain::Gradient,
            Domain::Image => ApnpDomain::Image,
        }
    }
}

/// Grayscale image, row-major doubles.
pub struct ApnpImage(Image);

/// Normalized odd-sized blur kernel.
pub struct ApnpKernel(BlurKernel);

pub struct ApnpDenoiser(DenoiserHandle);

/// Reconstruction settings for one algorithm.
pub struct ApnpConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ApnpStatus {
    match e {
        Error::Size(_) => ApnpStatus::Size,
        Error::Parameter(_) => ApnpStatus::Parameter,
        Error::IllPosed(_) => ApnpStatus::IllPosed,
        Error::Domain { .. } => ApnpStatus::Domain,
        Error::Archive(_) => ApnpStatus::Archive,
        Error::Iteration { source, .. } => status_of(source),
        Error::Io { .. } => ApnpStatus::Io,
        Error::UnsupportedFormat { .. } | Error::Format(_) => ApnpStatus::Format,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), ApnpStatus>) -> ApnpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ApnpStatus::Ok,
        Ok(Err(s)) => s,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            ApnpStatus::Internal
        }
    }
}

fn check<T>(r: apnp_core::Result<T>) -> Result<T, ApnpStatus> {
    r.map_err(|e| {
        set_last_error(e.to_string());
        status_of(&e)
    })
}

fn null() -> ApnpStatus {
    set_last_error("null pointer argument".into());
    ApnpStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, ApnpStatus> {
    p.as_ref().ok_or_else(null)
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), ApnpStatus> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn apnp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn apnp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `height * width` row-major values from `data`.
///
/// # Safety
/// `data` must point to `height * width` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_image_new(
    height: usize,
    width: usize,
    data: *const f64,
    out: *mut *mut ApnpImage,
) -> ApnpStatus {
    guard(|| {
        if data.is_null() {
            return Err(null());
        }
        let n = height.checked_mul(width).ok_or(ApnpStatus::Size)?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let img = check(Image::new(height, width, values))?;
        put(out, ApnpImage(img))
    })
}

/// # Safety
/// `img` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apnp_image_height(img: *const ApnpImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn apnp_image_width(img: *const ApnpImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// Copies the pixels into `dst`, which must hold `len >= height * width` doubles.
///
/// # Safety
/// `img` must be a live handle; `dst` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn apnp_image_read(img: *const ApnpImage, dst: *mut f64, len: usize) -> ApnpStatus {
    guard(|| {
        let img = &deref(img)?.0;
        if dst.is_null() {
            return Err(null());
        }
        if len < img.len() {
            set_last_error(format!("buffer holds {len} values, image has {}", img.len()));
            return Err(ApnpStatus::Size);
        }
        ptr::copy_nonoverlapping(img.data().as_ptr(), dst, img.len());
        Ok(())
    })
}

/// # Safety
/// `img` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn apnp_image_free(img: *mut ApnpImage) {
    free(img)
}

/// Kernel from `size * size` taps that sum to one.
///
/// # Safety
/// `taps` must point to `size * size` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_kernel_new(size: usize, taps: *const f64, out: *mut *mut ApnpKernel) -> ApnpStatus {
    guard(|| {
        if taps.is_null() {
            return Err(null());
        }
        let n = size.checked_mul(size).ok_or(ApnpStatus::Size)?;
        let k = check(BlurKernel::new(size, std::slice::from_raw_parts(taps, n).to_vec()))?;
        put(out, ApnpKernel(k))
    })
}

/// One of the eight default Gaussian kernels (`index` in 0..8).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_kernel_builtin(index: usize, out: *mut *mut ApnpKernel) -> ApnpStatus {
    guard(|| {
        let Some(params) = default_kernel_set().get(index).copied() else {
            set_last_error(format!("builtin kernel {index} does not exist (0..=7)"));
            return Err(ApnpStatus::Parameter);
        };
        put(out, ApnpKernel(check(params.build())?))
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_kernel_identity(out: *mut *mut ApnpKernel) -> ApnpStatus {
    guard(|| put(out, ApnpKernel(BlurKernel::identity())))
}

/// # Safety
/// `k` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn apnp_kernel_free(k: *mut ApnpKernel) {
    free(k)
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_denoiser_identity(domain: ApnpDomain, out: *mut *mut ApnpDenoiser) -> ApnpStatus {
    guard(|| put(out, ApnpDenoiser(DenoiserHandle::identity(domain.into()))))
}

/// Soft thresholding by `weight * sigma^2`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_denoiser_soft(
    domain: ApnpDomain,
    weight: f64,
    out: *mut *mut ApnpDenoiser,
) -> ApnpStatus {
    guard(|| {
        let d = check(DenoiserHandle::soft_threshold(domain.into(), weight))?;
        put(out, ApnpDenoiser(d))
    })
}

/// Loads a neural denoiser from a weight archive.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_denoiser_load(path: *const c_char, out: *mut *mut ApnpDenoiser) -> ApnpStatus {
    guard(|| {
        if path.is_null() {
            return Err(null());
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| {
            set_last_error("path is not valid UTF-8".into());
            ApnpStatus::Parameter
        })?;
        let archive = check(load_weights(path))?;
        put(out, ApnpDenoiser(DenoiserHandle::neural(Arc::new(archive))))
    })
}

/// # Safety
/// `d` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn apnp_denoiser_domain(d: *const ApnpDenoiser, domain: *mut ApnpDomain) -> ApnpStatus {
    guard(|| {
        let d = deref(d)?;
        if domain.is_null() {
            return Err(null());
        }
        *domain = d.0.domain().into();
        Ok(())
    })
}

/// # Safety
/// `d` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn apnp_denoiser_free(d: *mut ApnpDenoiser) {
    free(d)
}

/// Default settings for `algorithm`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_config_new(algorithm: ApnpAlgorithm, out: *mut *mut ApnpConfig) -> ApnpStatus {
    guard(|| put(out, ApnpConfig(RunConfig::new(algorithm.into()))))
}

/// Overrides; non-positive or non-finite values are rejected with `Parameter`.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn apnp_config_set_lambda(cfg: *mut ApnpConfig, lambda: f64) -> ApnpStatus {
    set_positive(cfg, lambda, "lambda", |c, v| c.lambda = v)
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn apnp_config_set_schedule_scale(cfg: *mut ApnpConfig, scale: f64) -> ApnpStatus {
    set_positive(cfg, scale, "schedule scale", |c, v| c.schedule_scale = v)
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn apnp_config_set_sigma_floor(cfg: *mut ApnpConfig, floor: f64) -> ApnpStatus {
    set_positive(cfg, floor, "sigma floor", |c, v| c.sigma_floor = v)
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn apnp_config_set_iters(cfg: *mut ApnpConfig, iters: usize) -> ApnpStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(null)?;
        if iters == 0 {
            set_last_error("iters must be >= 1".into());
            return Err(ApnpStatus::Parameter);
        }
        cfg.0.iters = iters;
        Ok(())
    })
}

unsafe fn set_positive(cfg: *mut ApnpConfig, v: f64, what: &str, f: impl FnOnce(&mut RunConfig, f64)) -> ApnpStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(null)?;
        if !(v > 0.0) || !v.is_finite() {
            set_last_error(format!("{what} must be positive and finite, got {v}"));
            return Err(ApnpStatus::Parameter);
        }
        f(&mut cfg.0, v);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn apnp_config_free(cfg: *mut ApnpConfig) {
    free(cfg)
}

/// Simulates `y = (k * x) decimated by scale + noise` with Gaussian noise of
/// standard deviation `sigma` (in [0,1] units) drawn from `seed`.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_degrade(
    x: *const ApnpImage,
    kernel: *const ApnpKernel,
    scale: usize,
    sigma: f64,
    seed: u64,
    out: *mut *mut ApnpImage,
) -> ApnpStatus {
    guard(|| {
        let (x, k) = (deref(x)?, deref(kernel)?);
        let spec = check(DegradationSpec::new(k.0.clone(), scale, sigma))?;
        let y = check(forward_apply(&spec, &x.0, seed))?;
        put(out, ApnpImage(y))
    })
}

/// Restores `y`, observed through `kernel`, decimation by `scale` and noise
/// of level `sigma`. The result is `scale` times larger than `y`, clipped to [0,1].
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_reconstruct(
    cfg: *const ApnpConfig,
    y: *const ApnpImage,
    kernel: *const ApnpKernel,
    scale: usize,
    sigma: f64,
    denoiser: *const ApnpDenoiser,
    out: *mut *mut ApnpImage,
) -> ApnpStatus {
    guard(|| {
        let (cfg, y, k, d) = (deref(cfg)?, deref(y)?, deref(kernel)?, deref(denoiser)?);
        let spec = check(DegradationSpec::new(k.0.clone(), scale, sigma))?;
        let (x, _) = check(reconstruct(&cfg.0, &spec, &y.0, &d.0, None, None))?;
        put(out, ApnpImage(x))
    })
}

/// PSNR (dB, dynamic range 1) after removing `crop` pixels per side.
///
/// # Safety
/// Handles must be live; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_psnr(
    a: *const ApnpImage,
    b: *const ApnpImage,
    crop: usize,
    value: *mut f64,
) -> ApnpStatus {
    guard(|| {
        let v = check(psnr(&deref(a)?.0, &deref(b)?.0, crop))?;
        *value.as_mut().ok_or_else(null)? = v;
        Ok(())
    })
}

/// Mean SSIM (11x11 Gaussian window) after removing `crop` pixels per side.
///
/// # Safety
/// Handles must be live; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apnp_ssim(
    a: *const ApnpImage,
    b: *const ApnpImage,
    crop: usize,
    value: *mut f64,
) -> ApnpStatus {
    guard(|| {
        let (a, b) = (&deref(a)?.0, &deref(b)?.0);
        let m = check(evaluate(a, b, crop))?;
        *value.as_mut().ok_or_else(null)? = m.ssim;
        Ok(())
    })
}
