use apnp_core::cli::bench::{noise_seed, run_bench, BenchReport, BenchSpec};
use apnp_core::cli::kernels::NamedKernel;
use apnp_core::operators::gaussian_kernel;
use apnp_core::{Algorithm, DenoiserHandle, Domain, Image, RunConfig};

fn scene(n: usize, shift: f64) -> Image {
    Image::from_fn(n, n, |i, j| {
        let (y, x) = (i as f64 / n as f64, j as f64 / n as f64);
        let disk = ((x - 0.4 - shift).powi(2) + (y - 0.5).powi(2) < 0.06) as u8 as f64;
        0.25 + 0.3 * x + 0.3 * disk
    })
}

fn kernel(label: &str, sigma: f64) -> NamedKernel {
    NamedKernel { label: label.into(), params: None, kernel: gaussian_kernel(sigma, sigma, 0.0, 5).unwrap() }
}

fn spec(algorithms: &[Algorithm]) -> BenchSpec {
    BenchSpec {
        images: vec![("a".into(), scene(24, 0.0)), ("b".into(), scene(25, 0.1)), ("c".into(), scene(24, -0.1))],
        kernels: vec![kernel("k0", 0.8), kernel("k1", 1.3)],
        scales: vec![1, 2],
        noise_levels: vec![0.0, 7.65],
        runs: algorithms
            .iter()
            .map(|&a| {
                let mut c = RunConfig::new(a);
                c.iters = 6;
                c
            })
            .collect(),
        gradient_denoiser: DenoiserHandle::soft_threshold(Domain::Gradient, 30.0).unwrap(),
        image_denoiser: DenoiserHandle::soft_threshold(Domain::Image, 3.0).unwrap(),
        seed: 9,
        threads: Some(2),
    }
}

#[test]
fn every_cell_averages_images_times_kernels() {
    let report = run_bench(&spec(&Algorithm::ALL)).unwrap();
    assert_eq!(report.cells.len(), 2 * 2 * 4);
    assert_eq!(report.rows.len(), 3 * 2 * 2 * 2 * 4);
    for c in &report.cells {
        assert_eq!((c.count, c.failures), (6, 0));
        let rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.scale == c.scale && r.noise == c.noise && r.algorithm == c.algorithm)
            .map(|r| r.outcome.as_ref().unwrap())
            .collect();
        assert_eq!(rows.len(), 6);
        let mean = rows.iter().map(|s| s.psnr).sum::<f64>() / 6.0;
        assert!((mean - c.mean.psnr).abs() < 1e-12);
    }
    // the 25x25 image is cropped to 24x24 for s = 2 only
    assert!(report.rows.iter().any(|r| r.image == "b" && r.scale == 1 && r.height == 25));
    assert!(report.rows.iter().filter(|r| r.scale == 2).all(|r| r.height == 24));
}

#[test]
fn reports_are_deterministic_and_round_trip() {
    let algos = [Algorithm::ApnpHqs, Algorithm::PnpAdmm];
    let mut serial = spec(&algos);
    serial.threads = Some(1);
    let a = run_bench(&spec(&algos)).unwrap();
    let b = run_bench(&serial).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());

    let text = a.to_csv();
    let parsed = BenchReport::from_csv(&text).unwrap();
    assert_eq!(parsed.to_csv(), text);
    assert_eq!(parsed.to_table().lines().next(), a.to_table().lines().next());

    // tampering with a cell mean breaks the self-consistency check
    let line = text.lines().find(|l| l.starts_with("cell,")).unwrap().to_owned();
    let mut fields: Vec<String> = line.split(',').map(str::to_owned).collect();
    let idx = fields.iter().rposition(|f| f.parse::<f64>().is_ok_and(|v| v > 5.0)).unwrap();
    fields[idx] = format!("{}", fields[idx].parse::<f64>().unwrap() + 0.5);
    assert!(BenchReport::from_csv(&text.replacen(&line, &fields.join(","), 1)).is_err());
}

#[test]
fn adding_an_algorithm_leaves_other_cells_unchanged() {
    let small = run_bench(&spec(&[Algorithm::ApnpHqs])).unwrap();
    let large = run_bench(&spec(&[Algorithm::PnpHqs, Algorithm::ApnpHqs])).unwrap();
    for c in &small.cells {
        let other = large.cell(c.scale, c.noise, c.algorithm).unwrap();
        assert_eq!(c.mean, other.mean);
    }
}

#[test]
fn seeds_separate_conditions() {
    let base = noise_seed(1, 0, 0, 1, 7.65);
    assert_eq!(base, noise_seed(1, 0, 0, 1, 7.65));
    for other in [noise_seed(2, 0, 0, 1, 7.65), noise_seed(1, 1, 0, 1, 7.65), noise_seed(1, 0, 1, 1, 7.65), noise_seed(1, 0, 0, 2, 7.65), noise_seed(1, 0, 0, 1, 0.0)] {
        assert_ne!(base, other);
    }
}
