use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use apnp::*;

fn last_error() -> String {
    let p = apnp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> *mut ApnpImage {
    let data: Vec<f64> = (0..h * w).map(|k| f(k / w, k % w)).collect();
    let mut out = ptr::null_mut();
    assert_eq!(apnp_image_new(h, w, data.as_ptr(), &mut out), ApnpStatus::Ok);
    out
}

unsafe fn pixels(img: *const ApnpImage) -> Vec<f64> {
    let n = apnp_image_height(img) * apnp_image_width(img);
    let mut buf = vec![0.0; n];
    assert_eq!(apnp_image_read(img, buf.as_mut_ptr(), n), ApnpStatus::Ok);
    buf
}

#[test]
fn image_round_trip() {
    unsafe {
        let img = image(4, 5, |i, j| (i * 5 + j) as f64 / 20.0);
        assert_eq!((apnp_image_height(img), apnp_image_width(img)), (4, 5));
        let px = pixels(img);
        assert_eq!(px[7], 7.0 / 20.0);
        let mut small = [0.0; 3];
        assert_eq!(apnp_image_read(img, small.as_mut_ptr(), 3), ApnpStatus::Size);
        apnp_image_free(img);
        apnp_image_free(ptr::null_mut());
    }
}

#[test]
fn null_and_invalid_arguments() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(apnp_image_new(2, 2, ptr::null(), &mut out), ApnpStatus::NullPointer);
        assert!(last_error().contains("null"));

        let nan = [f64::NAN; 4];
        assert_eq!(apnp_image_new(2, 2, nan.as_ptr(), &mut out), ApnpStatus::Parameter);

        let mut k = ptr::null_mut();
        assert_eq!(apnp_kernel_builtin(8, &mut k), ApnpStatus::Parameter);
        let taps = [0.5, 0.5, 0.0, 0.0];
        assert_eq!(apnp_kernel_new(2, taps.as_ptr(), &mut k), ApnpStatus::Parameter);

        let mut d = ptr::null_mut();
        assert_eq!(apnp_denoiser_soft(ApnpDomain::Gradient, -1.0, &mut d), ApnpStatus::Parameter);
        let missing = CString::new("/nonexistent/weights.bin").unwrap();
        assert_eq!(apnp_denoiser_load(missing.as_ptr(), &mut d), ApnpStatus::Io);

        let mut cfg = ptr::null_mut();
        assert_eq!(apnp_config_new(ApnpAlgorithm::ApnpHqs, &mut cfg), ApnpStatus::Ok);
        assert_eq!(apnp_config_set_lambda(cfg, 0.0), ApnpStatus::Parameter);
        assert_eq!(apnp_config_set_iters(cfg, 0), ApnpStatus::Parameter);
        assert_eq!(apnp_config_set_iters(ptr::null_mut(), 3), ApnpStatus::NullPointer);
        apnp_config_free(cfg);
    }
}

#[test]
fn domain_mismatch_is_reported() {
    unsafe {
        let y = image(8, 8, |i, j| ((i + j) % 3) as f64 / 3.0);
        let (mut k, mut d, mut cfg, mut x) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(apnp_kernel_identity(&mut k), ApnpStatus::Ok);
        assert_eq!(apnp_denoiser_identity(ApnpDomain::Image, &mut d), ApnpStatus::Ok);
        assert_eq!(apnp_config_new(ApnpAlgorithm::ApnpAdmm, &mut cfg), ApnpStatus::Ok);
        assert_eq!(apnp_reconstruct(cfg, y, k, 1, 0.0, d, &mut x), ApnpStatus::Domain);
        assert!(x.is_null());
        let mut dom = ApnpDomain::Gradient;
        assert_eq!(apnp_denoiser_domain(d, &mut dom), ApnpStatus::Ok);
        assert_eq!(dom, ApnpDomain::Image);
        apnp_image_free(y);
        apnp_kernel_free(k);
        apnp_denoiser_free(d);
        apnp_config_free(cfg);
    }
}

#[test]
fn degrade_then_restore_improves_psnr() {
    unsafe {
        let truth = image(32, 32, |i, j| if (i / 8 + j / 8) % 2 == 0 { 0.2 } else { 0.8 });
        let (mut k, mut y, mut d, mut cfg, mut x) =
            (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(apnp_kernel_builtin(1, &mut k), ApnpStatus::Ok);
        let sigma = 2.55 / 255.0;
        assert_eq!(apnp_degrade(truth, k, 1, sigma, 7, &mut y), ApnpStatus::Ok);
        assert_eq!(apnp_denoiser_soft(ApnpDomain::Gradient, 1.0, &mut d), ApnpStatus::Ok);
        assert_eq!(apnp_config_new(ApnpAlgorithm::ApnpHqs, &mut cfg), ApnpStatus::Ok);
        assert_eq!(apnp_reconstruct(cfg, y, k, 1, sigma, d, &mut x), ApnpStatus::Ok);
        let (mut before, mut after, mut s) = (0.0, 0.0, 0.0);
        assert_eq!(apnp_psnr(y, truth, 1, &mut before), ApnpStatus::Ok);
        assert_eq!(apnp_psnr(x, truth, 1, &mut after), ApnpStatus::Ok);
        assert_eq!(apnp_ssim(x, truth, 1, &mut s), ApnpStatus::Ok);
        assert!(after > before, "{after} <= {before}");
        assert!(s > 0.0 && s <= 1.0);
        assert!(pixels(x).iter().all(|v| (0.0..=1.0).contains(v)));
        for img in [truth, y, x] {
            apnp_image_free(img);
        }
        apnp_kernel_free(k);
        apnp_denoiser_free(d);
        apnp_config_free(cfg);
    }
}

#[test]
fn super_resolution_output_size() {
    unsafe {
        let y = image(16, 15, |i, j| ((i * 7 + j) % 5) as f64 / 5.0);
        let (mut k, mut d, mut cfg, mut x) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(apnp_kernel_builtin(0, &mut k), ApnpStatus::Ok);
        assert_eq!(apnp_denoiser_identity(ApnpDomain::Image, &mut d), ApnpStatus::Ok);
        assert_eq!(apnp_config_new(ApnpAlgorithm::PnpHqs, &mut cfg), ApnpStatus::Ok);
        assert_eq!(apnp_config_set_iters(cfg, 3), ApnpStatus::Ok);
        assert_eq!(apnp_reconstruct(cfg, y, k, 2, 0.0, d, &mut x), ApnpStatus::Ok);
        assert_eq!((apnp_image_height(x), apnp_image_width(x)), (32, 30));
        apnp_image_free(y);
        apnp_image_free(x);
        apnp_kernel_free(k);
        apnp_denoiser_free(d);
        apnp_config_free(cfg);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(apnp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/apnp.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    let source = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    if Command::new("cc").arg("--version").output().is_ok() {
        let status = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
            .arg(&header_path)
            .status()
            .unwrap();
        assert!(status.success());
    }
}
