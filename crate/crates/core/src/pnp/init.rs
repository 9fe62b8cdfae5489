use crate::imgcore::Image;
use crate::operators::DegradationSpec;

/// Keys cubic convolution weight with `a = -0.5`.
fn keys(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four source indices (clamped to the border) and weights for output position `p`.
fn taps(p: usize, scale: usize, n: usize) -> [(usize, f64); 4] {
    let u = p as f64 / scale as f64;
    let base = u.floor();
    let f = u - base;
    let base = base as isize;
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    [
        (clamp(base - 1), keys(f + 1.0)),
        (clamp(base), keys(f)),
        (clamp(base + 1), keys(1.0 - f)),
        (clamp(base + 2), keys(2.0 - f)),
    ]
}

/// Separable bicubic upsampling by an integer factor.
///
/// High-resolution pixel `p` sits at low-resolution coordinate `p / scale`,
/// the same phase the decimation in the forward model keeps, so
/// `decimate(bicubic_upsample(y, s), s) == y`. Borders replicate the edge.
pub fn bicubic_upsample(y: &Image, scale: usize) -> Image {
    assert!(scale >= 1, "scale must be >= 1");
    if scale == 1 {
        return y.clone();
    }
    let (h, w) = y.shape();
    let (hh, ww) = (h * scale, w * scale);
    let col_taps: Vec<_> = (0..ww).map(|q| taps(q, scale, w)).collect();
    // horizontal pass
    let mut rows = vec![0.0; h * ww];
    for i in 0..h {
        for (q, t) in col_taps.iter().enumerate() {
            rows[i * ww + q] = t.iter().map(|&(j, wt)| wt * y.get(i, j)).sum();
        }
    }
    // vertical pass
    Image::from_fn(hh, ww, |p, q| {
        taps(p, scale, h)
            .iter()
            .map(|&(i, wt)| wt * rows[i * ww + q])
            .sum()
    })
}

/// Starting point of every driver: the measurement itself for deblurring,
/// its bicubic upsampling for super-resolution.
pub fn initialize(spec: &DegradationSpec, y: &Image) -> Image {
    bicubic_upsample(y, spec.scale())
}
