//! Benchmark harness: every image is degraded with every (scale, noise,
//! kernel) condition and restored by every algorithm. Results are averaged
//! over images and kernels per (scale, noise, algorithm) cell.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::kernels::NamedKernel;
use crate::denoise::{DenoiserHandle, Domain};
use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::metrics::{evaluate, SSIM_SIGMA, SSIM_WINDOW};
use crate::operators::{forward_apply, DegradationSpec};
use crate::pnp::{initialize, reconstruct, Algorithm, RunConfig};

pub const REPORT_TAG: &str = "apnp-bench-report v1";

/// Everything a benchmark run needs, already loaded.
#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub images: Vec<(String, Image)>,
    pub kernels: Vec<NamedKernel>,
    pub scales: Vec<usize>,
    /// Measurement noise levels on the 8-bit scale (e.g. 7.65).
    pub noise_levels: Vec<f64>,
    /// One configuration per algorithm column.
    pub runs: Vec<RunConfig>,
    pub gradient_denoiser: DenoiserHandle,
    pub image_denoiser: DenoiserHandle,
    pub seed: u64,
    /// Worker pool size; `None` lets rayon decide.
    pub threads: Option<usize>,
}

impl BenchSpec {
    pub fn algorithms(&self) -> Vec<Algorithm> {
        self.runs.iter().map(|r| r.algorithm).collect()
    }

    fn denoiser_for(&self, algo: Algorithm) -> &DenoiserHandle {
        match algo.domain() {
            Domain::Gradient => &self.gradient_denoiser,
            Domain::Image => &self.image_denoiser,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::Parameter("benchmark dataset is empty".into()));
        }
        if self.kernels.is_empty() || self.scales.is_empty() || self.noise_levels.is_empty() || self.runs.is_empty() {
            return Err(Error::Parameter(
                "benchmark needs at least one kernel, scale, noise level and algorithm".into(),
            ));
        }
        let mut seen = Vec::new();
        for r in &self.runs {
            if seen.contains(&r.algorithm) {
                return Err(Error::Parameter(format!("algorithm {} listed twice", r.algorithm)));
            }
            seen.push(r.algorithm);
            if self.denoiser_for(r.algorithm).domain() != r.algorithm.domain() {
                return Err(Error::Parameter(format!(
                    "{} needs a {} denoiser",
                    r.algorithm,
                    r.algorithm.domain()
                )));
            }
        }
        Ok(())
    }

    /// Config lines echoed at the top of the report.
    fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("seed".to_owned(), self.seed.to_string()),
            ("noise_rng".into(), "chacha20, seed mixed from (seed, image, kernel, scale, noise)".into()),
            ("scales".into(), join(&self.scales)),
            ("noise_levels_8bit".into(), join(&self.noise_levels)),
            ("crop".into(), "scale pixels per side".into()),
            (
                "ssim".into(),
                format!("gaussian {SSIM_WINDOW}x{SSIM_WINDOW} sigma {SSIM_SIGMA}, K1 0.01, K2 0.03"),
            ),
            ("denoiser.gradient".into(), self.gradient_denoiser.describe()),
            ("denoiser.image".into(), self.image_denoiser.describe()),
        ];
        for r in &self.runs {
            let a = r.algorithm.name();
            out.push((format!("{a}.lambda"), r.lambda.to_string()));
            out.push((format!("{a}.iters"), r.iters.to_string()));
            out.push((format!("{a}.schedule_scale"), r.schedule_scale.to_string()));
            out.push((format!("{a}.sigma_max"), r.sigma_max.to_string()));
            out.push((format!("{a}.sigma_floor"), r.sigma_floor.to_string()));
            if let Some(f) = r.fixed_sigma {
                out.push((format!("{a}.fixed_sigma"), f.to_string()));
            }
        }
        for (i, k) in self.kernels.iter().enumerate() {
            out.push((format!("kernel.{i}"), k.describe()));
        }
        for (i, (name, img)) in self.images.iter().enumerate() {
            out.push((format!("image.{i}"), format!("{name} {}x{}", img.height(), img.width())));
        }
        out
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Per-run result row.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub image: String,
    pub image_index: usize,
    /// Evaluated size after center-cropping to a multiple of the scale.
    pub height: usize,
    pub width: usize,
    pub scale: usize,
    pub noise: f64,
    pub kernel: usize,
    pub algorithm: Algorithm,
    pub outcome: std::result::Result<RunScores, String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunScores {
    pub psnr: f64,
    pub ssim: f64,
    /// Scores of the initialization (the measurement, or its bicubic upsampling).
    pub init_psnr: f64,
    pub init_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub scale: usize,
    pub noise: f64,
    pub algorithm: Algorithm,
    pub mean: RunScores,
    pub count: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellTiming {
    pub scale: usize,
    pub noise: f64,
    pub algorithm: Algorithm,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub config: Vec<(String, String)>,
    pub scales: Vec<usize>,
    pub noise_levels: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub rows: Vec<RunRow>,
    pub cells: Vec<CellSummary>,
    /// Wall-clock per cell. Not part of the CSV so reports stay reproducible.
    pub timings: Vec<CellTiming>,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Measurement-noise seed for one degradation condition. Independent of the
/// algorithm list, so every algorithm restores the same measurement.
pub fn noise_seed(seed: u64, image: usize, kernel: usize, scale: usize, noise: f64) -> u64 {
    [image as u64, kernel as u64, scale as u64, noise.to_bits()]
        .iter()
        .fold(mix(seed), |acc, &v| mix(acc ^ v))
}

/// Largest centered window whose sides are multiples of `scale`.
pub fn center_crop_to_multiple(img: &Image, scale: usize) -> Result<Image> {
    let (h, w) = img.shape();
    let (ch, cw) = (h / scale * scale, w / scale * scale);
    if ch == 0 || cw == 0 {
        return Err(Error::Size(format!("{h}x{w} image smaller than scale {scale}")));
    }
    img.crop((h - ch) / 2, (w - cw) / 2, ch, cw)
}

fn run_image(spec: &BenchSpec, index: usize) -> (Vec<RunRow>, Vec<CellTiming>) {
    let (name, original) = &spec.images[index];
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &scale in &spec.scales {
        let truth = center_crop_to_multiple(original, scale);
        for &noise in &spec.noise_levels {
            for (ki, k) in spec.kernels.iter().enumerate() {
                let prepared = truth.as_ref().map_err(|e| e.to_string()).and_then(|truth| {
                    let deg = DegradationSpec::new(k.kernel.clone(), scale, noise / 255.0).map_err(|e| e.to_string())?;
                    let y = forward_apply(&deg, truth, noise_seed(spec.seed, index, ki, scale, noise))
                        .map_err(|e| e.to_string())?;
                    let init = evaluate(&initialize(&deg, &y).clip(0.0, 1.0), truth, scale).map_err(|e| e.to_string())?;
                    Ok((deg, y, init))
                });
                for cfg in &spec.runs {
                    let start = Instant::now();
                    let outcome = prepared.clone().and_then(|(deg, y, init)| {
                        let truth = truth.as_ref().expect("prepared implies truth");
                        let (x, _) = reconstruct(cfg, &deg, &y, spec.denoiser_for(cfg.algorithm), None, None)
                            .map_err(|e| e.to_string())?;
                        let m = evaluate(&x, truth, scale).map_err(|e| e.to_string())?;
                        Ok(RunScores {
                            psnr: m.psnr,
                            ssim: m.ssim,
                            init_psnr: init.psnr,
                            init_ssim: init.ssim,
                        })
                    });
                    if let Err(msg) = &outcome {
                        log::warn!("{name} sf={scale} noise={noise} kernel={ki} {}: {msg}", cfg.algorithm);
                    }
                    timings.push(CellTiming {
                        scale,
                        noise,
                        algorithm: cfg.algorithm,
                        seconds: start.elapsed().as_secs_f64(),
                    });
                    let (height, width) = truth.as_ref().map(|t| t.shape()).unwrap_or((0, 0));
                    rows.push(RunRow {
                        image: name.clone(),
                        image_index: index,
                        height,
                        width,
                        scale,
                        noise,
                        kernel: ki,
                        algorithm: cfg.algorithm,
                        outcome,
                    });
                }
            }
        }
    }
    (rows, timings)
}

/// Runs every cell on every image (images in parallel) and aggregates.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    let work = || -> Vec<(Vec<RunRow>, Vec<CellTiming>)> {
        (0..spec.images.len()).into_par_iter().map(|i| run_image(spec, i)).collect()
    };
    let per_image = match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?
            .install(work),
        None => work(),
    };
    let algorithms = spec.algorithms();
    let mut rows = Vec::new();
    let mut timing_map: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for (r, t) in per_image {
        rows.extend(r);
        for ct in t {
            let key = cell_key(&spec.scales, &spec.noise_levels, &algorithms, ct.scale, ct.noise, ct.algorithm);
            *timing_map.entry(key).or_default() += ct.seconds;
        }
    }
    sort_rows(&mut rows, &spec.scales, &spec.noise_levels, &algorithms);
    let cells = summarize(&rows, &spec.scales, &spec.noise_levels, &algorithms);
    let timings = cells
        .iter()
        .map(|c| CellTiming {
            scale: c.scale,
            noise: c.noise,
            algorithm: c.algorithm,
            seconds: timing_map
                .get(&cell_key(&spec.scales, &spec.noise_levels, &algorithms, c.scale, c.noise, c.algorithm))
                .copied()
                .unwrap_or(0.0),
        })
        .collect();
    Ok(BenchReport {
        config: spec.echo(),
        scales: spec.scales.clone(),
        noise_levels: spec.noise_levels.clone(),
        algorithms,
        rows,
        cells,
        timings,
    })
}

fn position<T: PartialEq>(list: &[T], v: &T) -> usize {
    list.iter().position(|x| x == v).unwrap_or(usize::MAX)
}

fn cell_key(scales: &[usize], noises: &[f64], algos: &[Algorithm], s: usize, n: f64, a: Algorithm) -> (usize, usize, usize) {
    (position(scales, &s), position(noises, &n), position(algos, &a))
}

fn sort_rows(rows: &mut [RunRow], scales: &[usize], noises: &[f64], algos: &[Algorithm]) {
    rows.sort_by_key(|r| {
        let (s, n, a) = cell_key(scales, noises, algos, r.scale, r.noise, r.algorithm);
        (r.image_index, s, n, r.kernel, a)
    });
}

/// Means over successful rows, cells ordered by (scale, noise, algorithm).
fn summarize(rows: &[RunRow], scales: &[usize], noises: &[f64], algos: &[Algorithm]) -> Vec<CellSummary> {
    let mut cells = Vec::new();
    for &scale in scales {
        for &noise in noises {
            for &algorithm in algos {
                let mut sum = [0.0f64; 4];
                let (mut count, mut failures) = (0, 0);
                for r in rows.iter().filter(|r| r.scale == scale && r.noise == noise && r.algorithm == algorithm) {
                    match &r.outcome {
                        Ok(s) => {
                            sum[0] += s.psnr;
                            sum[1] += s.ssim;
                            sum[2] += s.init_psnr;
                            sum[3] += s.init_ssim;
                            count += 1;
                        }
                        Err(_) => failures += 1,
                    }
                }
                let n = count.max(1) as f64;
                let mean = if count == 0 {
                    RunScores {
                        psnr: f64::NAN,
                        ssim: f64::NAN,
                        init_psnr: f64::NAN,
                        init_ssim: f64::NAN,
                    }
                } else {
                    RunScores {
                        psnr: sum[0] / n,
                        ssim: sum[1] / n,
                        init_psnr: sum[2] / n,
                        init_ssim: sum[3] / n,
                    }
                };
                cells.push(CellSummary {
                    scale,
                    noise,
                    algorithm,
                    mean,
                    count,
                    failures,
                });
            }
        }
    }
    cells
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    kind: String,
    image_index: Option<usize>,
    image: String,
    height: Option<usize>,
    width: Option<usize>,
    scale: usize,
    noise: f64,
    kernel: String,
    algorithm: Algorithm,
    psnr: Option<f64>,
    ssim: Option<f64>,
    init_psnr: Option<f64>,
    init_ssim: Option<f64>,
    count: usize,
    status: String,
}

impl BenchReport {
    pub fn cell(&self, scale: usize, noise: f64, algorithm: Algorithm) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.scale == scale && c.noise == noise && c.algorithm == algorithm)
    }

    /// Cells in which every run failed.
    pub fn failed_cells(&self) -> Vec<&CellSummary> {
        self.cells.iter().filter(|c| c.count == 0).collect()
    }

    /// Machine-readable form: `#` config lines followed by CSV run and cell rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# {REPORT_TAG}\n");
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: f64| (!v.is_nan()).then_some(v);
        for r in &self.rows {
            let (scores, status) = match &r.outcome {
                Ok(s) => (Some(*s), "ok".to_owned()),
                Err(m) => (None, format!("failed: {m}")),
            };
            w.serialize(CsvRow {
                kind: "run".into(),
                image_index: Some(r.image_index),
                image: r.image.clone(),
                height: Some(r.height),
                width: Some(r.width),
                scale: r.scale,
                noise: r.noise,
                kernel: r.kernel.to_string(),
                algorithm: r.algorithm,
                psnr: scores.map(|s| s.psnr),
                ssim: scores.map(|s| s.ssim),
                init_psnr: scores.map(|s| s.init_psnr),
                init_ssim: scores.map(|s| s.init_ssim),
                count: 1,
                status,
            })
            .expect("in-memory csv");
        }
        for c in &self.cells {
            w.serialize(CsvRow {
                kind: "cell".into(),
                image_index: None,
                image: "*".into(),
                height: None,
                width: None,
                scale: c.scale,
                noise: c.noise,
                kernel: "*".into(),
                algorithm: c.algorithm,
                psnr: opt(c.mean.psnr),
                ssim: opt(c.mean.ssim),
                init_psnr: opt(c.mean.init_psnr),
                init_ssim: opt(c.mean.init_ssim),
                count: c.count,
                status: if c.count == 0 {
                    "failed".into()
                } else {
                    format!("ok ({} failed)", c.failures)
                },
            })
            .expect("in-memory csv");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
        out
    }

    /// Parses [`to_csv`](Self::to_csv) output and checks that every cell mean
    /// matches the recomputation from its run rows within 1e-12.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(&format!("# {REPORT_TAG}")) {
            return Err(Error::Format("not a benchmark report".into()));
        }
        let config: Vec<(String, String)> = text
            .lines()
            .skip(1)
            .take_while(|l| l.starts_with('#'))
            .filter_map(|l| l.trim_start_matches('#').trim().split_once(" = "))
            .map(|(k, v)| (k.to_owned(), v.to_owned()))
            .collect();
        let body: String = text
            .lines()
            .skip_while(|l| l.starts_with('#'))
            .flat_map(|l| [l, "\n"])
            .collect();
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let mut rows = Vec::new();
        let mut stored_cells = Vec::new();
        let (mut scales, mut noises, mut algos) = (Vec::new(), Vec::new(), Vec::new());
        for rec in reader.deserialize::<CsvRow>() {
            let r = rec.map_err(|e| Error::Format(format!("report row: {e}")))?;
            if !scales.contains(&r.scale) {
                scales.push(r.scale);
            }
            if !noises.contains(&r.noise) {
                noises.push(r.noise);
            }
            if !algos.contains(&r.algorithm) {
                algos.push(r.algorithm);
            }
            match r.kind.as_str() {
                "run" => {
                    let outcome = match (r.psnr, r.ssim, r.init_psnr, r.init_ssim) {
                        (Some(psnr), Some(ssim), Some(init_psnr), Some(init_ssim)) if r.status == "ok" => Ok(RunScores {
                            psnr,
                            ssim,
                            init_psnr,
                            init_ssim,
                        }),
                        _ => Err(r.status.trim_start_matches("failed: ").to_owned()),
                    };
                    rows.push(RunRow {
                        image: r.image,
                        image_index: r.image_index.ok_or_else(|| Error::Format("run row without image index".into()))?,
                        height: r.height.unwrap_or(0),
                        width: r.width.unwrap_or(0),
                        scale: r.scale,
                        noise: r.noise,
                        kernel: r.kernel.parse().map_err(|_| Error::Format("bad kernel index".into()))?,
                        algorithm: r.algorithm,
                        outcome,
                    });
                }
                "cell" => stored_cells.push(r),
                other => return Err(Error::Format(format!("unknown row kind `{other}`"))),
            }
        }
        algos.sort_by_key(|a| position(&Algorithm::ALL, a));
        let cells = summarize(&rows, &scales, &noises, &algos);
        if cells.len() != stored_cells.len() {
            return Err(Error::Format(format!(
                "{} cell rows stored, {} implied by run rows",
                stored_cells.len(),
                cells.len()
            )));
        }
        for c in &cells {
            let stored = stored_cells
                .iter()
                .find(|s| s.scale == c.scale && s.noise == c.noise && s.algorithm == c.algorithm)
                .ok_or_else(|| Error::Format("missing cell row".into()))?;
            let close = |a: Option<f64>, b: f64| match a {
                Some(a) => (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                None => b.is_nan(),
            };
            if stored.count != c.count
                || !close(stored.psnr, c.mean.psnr)
                || !close(stored.ssim, c.mean.ssim)
                || !close(stored.init_psnr, c.mean.init_psnr)
                || !close(stored.init_ssim, c.mean.init_ssim)
            {
                return Err(Error::Format(format!(
                    "cell sf={} noise={} {} does not match its rows",
                    c.scale, c.noise, c.algorithm
                )));
            }
        }
        Ok(BenchReport {
            config,
            scales,
            noise_levels: noises,
            algorithms: algos,
            rows,
            cells,
            timings: Vec::new(),
        })
    }

    /// Aligned tables (SSIM, then PSNR): one row per (scale, noise), one column
    /// per algorithm, followed by the scores of the starting point.
    pub fn to_table(&self) -> String {
        let algos: Vec<Algorithm> = Algorithm::ALL
            .into_iter()
            .filter(|a| self.algorithms.contains(a))
            .collect();
        let mut out = String::new();
        type Pick = fn(&RunScores) -> f64;
        let tables: [(&str, Pick, usize); 2] = [("SSIM", |s| s.ssim, 4), ("PSNR", |s| s.psnr, 2)];
        for (title, pick, prec) in tables {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:>4}  {:>6}", "SF", "Noise");
            for a in &algos {
                let _ = write!(out, "  {:>10}", a.label());
            }
            let _ = writeln!(out);
            for &s in &self.scales {
                for &n in &self.noise_levels {
                    let _ = write!(out, "{s:>4}  {n:>6}");
                    for &a in &algos {
                        match self.cell(s, n, a) {
                            Some(c) if c.count > 0 => {
                                let _ = write!(out, "  {:>10.prec$}", pick(&c.mean));
                            }
                            _ => {
                                let _ = write!(out, "  {:>10}", "-");
                            }
                        }
                    }
                    let _ = writeln!(out);
                }
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out, "Starting point (measurement or bicubic upsampling)");
        let _ = writeln!(out, "{:>4}  {:>6}  {:>10}  {:>10}", "SF", "Noise", "SSIM", "PSNR");
        for &s in &self.scales {
            for &n in &self.noise_levels {
                let init = algos
                    .iter()
                    .filter_map(|&a| self.cell(s, n, a))
                    .find(|c| c.count > 0)
                    .map(|c| (c.mean.init_ssim, c.mean.init_psnr));
                match init {
                    Some((ssim, psnr)) => {
                        let _ = writeln!(out, "{s:>4}  {n:>6}  {ssim:>10.4}  {psnr:>10.2}");
                    }
                    None => {
                        let _ = writeln!(out, "{s:>4}  {n:>6}  {:>10}  {:>10}", "-", "-");
                    }
                }
            }
        }
        let _ = writeln!(out);
        let kernels = self.config.iter().filter(|(k, _)| k.starts_with("kernel.")).count();
        let _ = writeln!(
            out,
            "Each entry averages {} image(s) x {kernels} kernel(s).",
            self.rows.iter().map(|r| r.image_index).max().map_or(0, |m| m + 1)
        );
        if !self.timings.is_empty() {
            let _ = writeln!(out, "\nWall-clock seconds per cell");
            for t in &self.timings {
                let _ = writeln!(out, "{:>4}  {:>6}  {:>10}  {:.2}", t.scale, t.noise, t.algorithm.label(), t.seconds);
            }
        }
        out
    }

    /// Writes `report.csv`, `table.txt` and `timings.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("report.csv", self.to_csv())?;
        put("table.txt", self.to_table())?;
        let mut timings = String::from("scale,noise,algorithm,seconds\n");
        for t in &self.timings {
            let _ = writeln!(timings, "{},{},{},{}", t.scale, t.noise, t.algorithm, t.seconds);
        }
        put("timings.csv", timings)
    }
}
