//! The `apnp` command-line tool.
//!
//! Usage errors (bad flags, unknown algorithm names) exit with status 2;
//! runtime failures exit with status 1.

pub mod bench;
pub mod io;
pub mod kernels;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::denoise::archive::LayerOp;
use crate::denoise::{load_weights, DenoiserHandle, Domain, Fixture};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::operators::{default_kernel_set, forward_apply, DegradationSpec};
use crate::pnp::{reconstruct, Algorithm, RunConfig, DEFAULT_ITERS};

use self::bench::{center_crop_to_multiple, run_bench, BenchSpec};
use self::io::{read_image, write_image};
use self::kernels::{builtin_kernels, load_kernel_dir, read_manifest, resolve_kernel, write_kernel_set};

/// Environment variable bounding the benchmark worker pool.
pub const THREADS_ENV: &str = "APNP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "apnp", version, about = "Plug-and-Play restoration with gradient-domain priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Restore one degraded image.
    Restore(RestoreArgs),
    /// Simulate a measurement: blur, decimate and add noise.
    Degrade(DegradeArgs),
    /// Run every algorithm on every image under every degradation.
    Bench(BenchArgs),
    /// Write the default kernel set (or regenerate one from a manifest).
    MakeKernels(MakeKernelsArgs),
    /// Summarize a weight archive and optionally check it against fixtures.
    Inspect(InspectArgs),
}

/// Denoiser selection: `identity`, `soft:W` or `neural:PATH`.
#[derive(Clone, Debug, PartialEq)]
enum DenoiserArg {
    Identity,
    Soft(f64),
    Neural(PathBuf),
}

fn parse_denoiser(s: &str) -> std::result::Result<DenoiserArg, String> {
    if s == "identity" {
        return Ok(DenoiserArg::Identity);
    }
    if let Some(w) = s.strip_prefix("soft:") {
        let w: f64 = w.parse().map_err(|_| format!("bad soft-threshold weight `{w}`"))?;
        if !(w >= 0.0) || !w.is_finite() {
            return Err(format!("soft-threshold weight {w} must be >= 0"));
        }
        return Ok(DenoiserArg::Soft(w));
    }
    if let Some(p) = s.strip_prefix("neural:") {
        if p.is_empty() {
            return Err("neural: needs a weight archive path".into());
        }
        return Ok(DenoiserArg::Neural(p.into()));
    }
    Err(format!("expected identity, soft:W or neural:PATH, got `{s}`"))
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse::<Algorithm>().map_err(|_| {
        let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
        format!("unknown algorithm `{s}` (expected one of {})", names.join(", "))
    })
}

impl DenoiserArg {
    /// Builds the handle for an algorithm operating in `domain`.
    fn resolve(&self, domain: Domain) -> Result<DenoiserHandle> {
        match self {
            DenoiserArg::Identity => Ok(DenoiserHandle::identity(domain)),
            DenoiserArg::Soft(w) => DenoiserHandle::soft_threshold(domain, *w),
            DenoiserArg::Neural(path) => {
                let archive = load_weights(path)?;
                if archive.domain != domain {
                    return Err(Error::Parameter(format!(
                        "{} holds a {} denoiser but the algorithm needs a {domain} one",
                        path.display(),
                        archive.domain
                    )));
                }
                Ok(DenoiserHandle::neural(Arc::new(archive)))
            }
        }
    }
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Regularization weight (default: the algorithm's tuned value).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ITERS)]
    iters: usize,
    /// Multiplier on the denoiser noise schedule (default: the algorithm's value).
    #[arg(long)]
    schedule_scale: Option<f64>,
    /// Effective noise level used when the measurement is (nearly) noiseless, in [0,1] units.
    #[arg(long)]
    sigma_floor: Option<f64>,
    /// Top of the denoiser noise schedule, in [0,1] units.
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Keep the denoiser level constant at this value (8-bit units) instead of annealing it.
    #[arg(long)]
    fixed_sigma: Option<f64>,
}

impl SolverArgs {
    fn config(&self, algorithm: Algorithm, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::new(algorithm);
        cfg.iters = self.iters;
        cfg.seed = seed;
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(s) = self.schedule_scale {
            cfg.schedule_scale = s;
        }
        if let Some(f) = self.sigma_floor {
            cfg.sigma_floor = f;
        }
        if let Some(m) = self.sigma_max {
            cfg.sigma_max = m;
        }
        cfg.fixed_sigma = self.fixed_sigma.map(|s| s / 255.0);
        cfg
    }
}

#[derive(Debug, Args)]
struct RestoreArgs {
    /// Degraded (low-resolution) input image.
    input: PathBuf,
    #[arg(long, value_parser = parse_algorithm, default_value = "apnp-hqs")]
    algo: Algorithm,
    #[arg(long, value_parser = parse_denoiser)]
    denoiser: DenoiserArg,
    /// Blur kernel: a kernel file, `builtin:N` (N in 0..=7) or `identity`.
    #[arg(long, default_value = "identity")]
    kernel: String,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    sf: u8,
    /// Measurement noise level on the 8-bit scale (e.g. 7.65).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground truth; when given, PSNR/SSIM are printed and tracked per iteration.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the JSON trace record (default: next to the output).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct DegradeArgs {
    /// Clean input image.
    input: PathBuf,
    #[arg(long, default_value = "identity")]
    kernel: String,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    sf: u8,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Degraded output image.
    #[arg(long)]
    out: PathBuf,
    /// Also write the clean image after center-cropping to a multiple of the scale.
    #[arg(long)]
    gt_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory of 8-bit grayscale PNG/PGM images.
    #[arg(long)]
    dataset: PathBuf,
    /// Kernel directory with a manifest (default: the built-in 8-kernel set).
    #[arg(long)]
    kernels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 3],
          value_parser = clap::value_parser!(u8).range(1..=3))]
    sf: Vec<u8>,
    /// Noise levels on the 8-bit scale.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 7.65])]
    noise: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm,
          default_values = ["pnp-hqs", "apnp-hqs", "pnp-admm", "apnp-admm"])]
    algos: Vec<Algorithm>,
    /// Denoiser for the gradient-domain algorithms.
    #[arg(long, value_parser = parse_denoiser)]
    gradient_denoiser: Option<DenoiserArg>,
    /// Denoiser for the image-domain algorithms.
    #[arg(long, value_parser = parse_denoiser)]
    image_denoiser: Option<DenoiserArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for report.csv, table.txt and timings.csv.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct MakeKernelsArgs {
    #[arg(long, default_value = "kernels")]
    out: PathBuf,
    /// Regenerate the kernels listed in this manifest instead of the defaults.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    archive: PathBuf,
    /// Inference fixtures the archive must reproduce within their tolerance.
    #[arg(long)]
    fixture: Vec<PathBuf>,
}

/// Entry point for the binary: parses `std::env::args_os`.
pub fn run() -> ExitCode {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let outcome = match cli.command {
        Command::Restore(a) => cmd_restore(&a),
        Command::Degrade(a) => cmd_degrade(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::MakeKernels(a) => cmd_make_kernels(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn check_noise(noise: f64) -> Result<f64> {
    if !(0.0..=255.0).contains(&noise) {
        return Err(Error::Parameter(format!("noise level {noise} outside [0, 255]")));
    }
    Ok(noise / 255.0)
}

fn default_trace_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".trace.json");
    out.with_file_name(name)
}

fn cmd_restore(a: &RestoreArgs) -> Result<ExitCode> {
    let algorithm = a.algo;
    let denoiser = a.denoiser.resolve(algorithm.domain())?;
    let kernel = resolve_kernel(&a.kernel)?;
    let scale = a.sf as usize;
    let spec = DegradationSpec::new(kernel.kernel, scale, check_noise(a.noise)?)?;
    let y = read_image(&a.input)?;
    let truth = a.gt.as_ref().map(read_image).transpose()?;
    let cfg = a.solver.config(algorithm, a.seed);
    let (x, trace) = reconstruct(&cfg, &spec, &y, &denoiser, truth.as_ref(), None)?;
    for w in &trace.warnings {
        log::warn!("{w}");
    }
    write_image(&a.out, &x)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| default_trace_path(&a.out));
    std::fs::write(&trace_path, trace.to_record() + "\n").map_err(|e| Error::io(&trace_path, e))?;
    if let Some(truth) = &truth {
        let m = evaluate(&x, truth, scale)?;
        println!("psnr {:.4} dB  ssim {:.4}  (crop {} px)", m.psnr, m.ssim, m.crop_border);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_degrade(a: &DegradeArgs) -> Result<ExitCode> {
    let scale = a.sf as usize;
    let kernel = resolve_kernel(&a.kernel)?;
    let spec = DegradationSpec::new(kernel.kernel, scale, check_noise(a.noise)?)?;
    let original = read_image(&a.input)?;
    let x = center_crop_to_multiple(&original, scale)?;
    if x.shape() != original.shape() {
        log::warn!(
            "center-cropped {}x{} to {}x{} for scale {scale}",
            original.height(),
            original.width(),
            x.height(),
            x.width()
        );
    }
    let y = forward_apply(&spec, &x, a.seed)?;
    write_image(&a.out, &y.clip(0.0, 1.0))?;
    if let Some(p) = &a.gt_out {
        write_image(p, &x)?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Grayscale images in `dir`, sorted by file name.
fn load_dataset(dir: &Path) -> Result<Vec<(String, crate::imgcore::Image)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "pnm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Parameter(format!("no PNG/PGM images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, read_image(p)?))
        })
        .collect()
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Parameter(format!("{THREADS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<ExitCode> {
    let algorithms = {
        let mut v = Vec::new();
        for &algo in &a.algos {
            if !v.contains(&algo) {
                v.push(algo);
            }
        }
        v
    };
    let denoiser_for = |domain: Domain, arg: &Option<DenoiserArg>, flag: &str| -> Result<DenoiserHandle> {
        if !algorithms.iter().any(|x| x.domain() == domain) {
            return Ok(DenoiserHandle::identity(domain));
        }
        arg.as_ref()
            .ok_or_else(|| Error::Parameter(format!("--{flag} is required for the selected algorithms")))?
            .resolve(domain)
    };
    let gradient_denoiser = denoiser_for(Domain::Gradient, &a.gradient_denoiser, "gradient-denoiser")?;
    let image_denoiser = denoiser_for(Domain::Image, &a.image_denoiser, "image-denoiser")?;
    for &n in &a.noise {
        check_noise(n)?;
    }
    let kernels = match &a.kernels {
        Some(dir) => load_kernel_dir(dir)?,
        None => builtin_kernels(),
    };
    let spec = BenchSpec {
        images: load_dataset(&a.dataset)?,
        kernels,
        scales: a.sf.iter().map(|&s| s as usize).collect(),
        noise_levels: a.noise.clone(),
        runs: algorithms.iter().map(|&algo| a.solver.config(algo, a.seed)).collect(),
        gradient_denoiser,
        image_denoiser,
        seed: a.seed,
        threads: threads_from_env()?,
    };
    let report = run_bench(&spec)?;
    report.write(&a.out)?;
    print!("{}", report.to_table());
    let failed = report.failed_cells();
    if !failed.is_empty() {
        for c in &failed {
            eprintln!("error: every run failed in cell sf={} noise={} {}", c.scale, c.noise, c.algorithm);
        }
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_make_kernels(a: &MakeKernelsArgs) -> Result<ExitCode> {
    let params = match &a.from_manifest {
        Some(m) => read_manifest(m)?.iter().map(|e| e.params()).collect(),
        None => default_kernel_set().to_vec(),
    };
    let written = write_kernel_set(&a.out, &params)?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_inspect(a: &InspectArgs) -> Result<ExitCode> {
    let arch = load_weights(&a.archive)?;
    println!("domain        {}", arch.domain);
    println!("channels      {} -> {}", arch.in_channels, arch.out_channels);
    println!("prediction    {:?}", arch.prediction);
    println!(
        "sigma range   [{}, {}] ({})",
        arch.metadata.sigma_min, arch.metadata.sigma_max, arch.metadata.normalization
    );
    for (k, v) in &arch.metadata.extra {
        println!("meta          {k} = {v}");
    }
    println!("parameters    {}", arch.parameter_count());
    for layer in &arch.layers {
        let what = match &layer.op {
            LayerOp::Conv(c) => format!(
                "{:?} {}->{} k{} s{} p{}",
                c.kind, c.in_channels, c.out_channels, c.kernel, c.stride, c.padding
            ),
            LayerOp::Relu => "relu".into(),
            LayerOp::Save(slot) => format!("save {slot}"),
            LayerOp::Add(slot) => format!("add {slot}"),
        };
        println!("  {:<16} {what}", layer.name);
    }
    let mut ok = true;
    for path in &a.fixture {
        let fx = Fixture::load(path)?;
        let dev = fx.max_deviation(&arch)?;
        let pass = dev <= fx.tolerance;
        ok &= pass;
        println!(
            "fixture {}: max deviation {dev:.3e} (tolerance {:.1e}) {}",
            path.display(),
            fx.tolerance,
            if pass { "ok" } else { "FAILED" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
