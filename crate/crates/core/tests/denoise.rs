mod common;

use std::path::PathBuf;

use apnp_core::denoise::archive::{ConvKind, ConvSpec, Layer, LayerOp};
use apnp_core::denoise::{denoise, neural_forward, ArchiveMetadata, Fixture, Prediction, Tensor};
use apnp_core::operators::grad;
use apnp_core::{ArchiveError, DenoiserHandle, Domain, Error, GradientField, Image, WeightArchive};
use common::*;
use crc::{Crc, CRC_64_XZ};
use proptest::prelude::*;
use rand::Rng;
use serde_json::{json, Value};

fn desk() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/desk")
}

fn tiny_bytes() -> Vec<u8> {
    std::fs::read(desk().join("tiny.apnpw")).unwrap()
}

/// Splits an archive into its JSON header and payload, re-parsed independently.
fn unpack(bytes: &[u8]) -> (Value, Vec<u8>) {
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = serde_json::from_slice(&bytes[12..12 + n]).unwrap();
    (header, bytes[12 + n..bytes.len() - 8].to_vec())
}

fn pack(header: &Value, payload: &[u8]) -> Vec<u8> {
    let h = serde_json::to_vec(header).unwrap();
    let mut out = b"APNPW1\0\0".to_vec();
    out.extend((h.len() as u32).to_le_bytes());
    out.extend(&h);
    out.extend(payload);
    out.extend(Crc::<u64>::new(&CRC_64_XZ).checksum(payload).to_le_bytes());
    out
}

fn archive_error(bytes: &[u8]) -> ArchiveError {
    match WeightArchive::from_bytes(bytes) {
        Err(Error::Archive(e)) => e,
        other => panic!("expected an archive error, got {other:?}"),
    }
}

#[test]
fn tiny_archive_matches_hand_evaluation() {
    let arch = WeightArchive::from_bytes(&tiny_bytes()).unwrap();
    assert_eq!(arch.domain, Domain::Image);
    assert_eq!(arch.parameter_count(), 4 + 18 + 1);
    let mut r = rng(31);
    let (h, w) = (5, 7);
    let x: Vec<f32> = (0..2 * h * w).map(|_| r.random::<f32>() - 0.5).collect();
    let out = neural_forward(&arch, &Tensor::from_vec(2, h, w, x.clone()).unwrap()).unwrap();
    // mix is the identity, then ReLU, then a zero-padded 3x3 correlation plus 0.25.
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.25f64;
            for c in 0..2 {
                for a in 0..3 {
                    for b in 0..3 {
                        let (p, q) = (i as isize + a as isize - 1, j as isize + b as isize - 1);
                        if p < 0 || q < 0 || p >= h as isize || q >= w as isize {
                            continue;
                        }
                        let tap = ((c * 9 + a * 3 + b) as f64 - 9.0) / 50.0;
                        acc += tap * (x[c * h * w + p as usize * w + q as usize] as f64).max(0.0);
                    }
                }
            }
            assert!((out.plane(0)[i * w + j] as f64 - acc).abs() < 1e-5);
        }
    }
}

#[test]
fn archive_round_trips_through_bytes() {
    let arch = WeightArchive::from_bytes(&tiny_bytes()).unwrap();
    let again = WeightArchive::from_bytes(&arch.to_bytes()).unwrap();
    assert_eq!(arch, again);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.apnpw");
    arch.save(&path).unwrap();
    assert_eq!(apnp_core::denoise::load_weights(&path).unwrap(), arch);
}

#[test]
fn corrupted_archives_are_rejected() {
    let good = tiny_bytes();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(archive_error(&bad), ArchiveError::BadMagic { .. }));

    for cut in [8, 11, 40, good.len() - 30, good.len() - 3] {
        assert!(matches!(archive_error(&good[..cut]), ArchiveError::Truncated { .. }), "cut {cut}");
    }

    let mut bad = good.clone();
    let at = good.len() - 20;
    bad[at] ^= 0x40;
    assert!(matches!(archive_error(&bad), ArchiveError::Checksum { .. }));

    let (header, payload) = unpack(&good);
    let mut h = header.clone();
    h["layers"][1]["type"] = json!("batchnorm");
    assert!(matches!(archive_error(&pack(&h, &payload)), ArchiveError::UnsupportedLayer { .. }));

    let mut h = header.clone();
    h["tensors"][1]["shape"] = json!([1, 2, 3, 2]);
    let e = archive_error(&pack(&h, &payload));
    assert!(matches!(e, ArchiveError::Shape(_)), "{e}");

    let mut h = header.clone();
    h["layers"][2]["in_channels"] = json!(3);
    assert!(matches!(archive_error(&pack(&h, &payload)), ArchiveError::Shape(_)));

    let mut h = header.clone();
    h["layers"][0]["weight"] = json!("missing.w");
    assert!(WeightArchive::from_bytes(&pack(&h, &payload)).is_err());

    let mut h = header;
    h["out_channels"] = json!(2);
    assert!(WeightArchive::from_bytes(&pack(&h, &payload)).is_err());

    // repacking the untouched header reproduces a loadable archive
    let (header, payload) = unpack(&good);
    assert!(WeightArchive::from_bytes(&pack(&header, &payload)).is_ok());
}

#[test]
fn missing_file_is_an_io_error() {
    let e = apnp_core::denoise::load_weights("/nonexistent/w.apnpw").unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
}

// --- naive f64 reference network -------------------------------------------

struct Net {
    tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    layers: Vec<Layer>,
}

impl Net {
    fn conv(&mut self, name: &str, kind: ConvKind, cin: usize, cout: usize, k: usize, stride: usize, padding: usize, r: &mut impl Rng) {
        let shape = match kind {
            ConvKind::Conv => vec![cout, cin, k, k],
            ConvKind::Transpose => vec![cin, cout, k, k],
        };
        let scale = 1.0 / ((cin * k * k) as f32).sqrt();
        let wname = format!("{name}.w");
        let bname = format!("{name}.b");
        self.tensors.push((wname.clone(), shape.clone(), (0..shape.iter().product()).map(|_| (r.random::<f32>() - 0.5) * 2.0 * scale).collect()));
        self.tensors.push((bname.clone(), vec![cout], (0..cout).map(|_| r.random::<f32>() * 0.1).collect()));
        self.layers.push(Layer {
            name: name.into(),
            op: LayerOp::Conv(ConvSpec { kind, in_channels: cin, out_channels: cout, kernel: k, stride, padding, weight: wname, bias: Some(bname) }),
        });
    }

    fn op(&mut self, name: &str, op: LayerOp) {
        self.layers.push(Layer { name: name.into(), op });
    }
}

/// `[c][i][j]` activations in f64.
type Act = Vec<Vec<Vec<f64>>>;

fn ref_conv(x: &Act, w: &[f32], b: &[f32], cout: usize, k: usize, stride: usize, pad: usize) -> Act {
    let (cin, h, wd) = (x.len(), x[0].len(), x[0][0].len());
    let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1);
    let mut out = vec![vec![vec![0.0; ow]; oh]; cout];
    for o in 0..cout {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[o] as f64;
                for c in 0..cin {
                    for a in 0..k {
                        for bb in 0..k {
                            let p = (i * stride + a) as isize - pad as isize;
                            let q = (j * stride + bb) as isize - pad as isize;
                            if p >= 0 && q >= 0 && (p as usize) < h && (q as usize) < wd {
                                acc += w[((o * cin + c) * k + a) * k + bb] as f64 * x[c][p as usize][q as usize];
                            }
                        }
                    }
                }
                out[o][i][j] = acc;
            }
        }
    }
    out
}

fn ref_conv_t(x: &Act, w: &[f32], b: &[f32], cout: usize, k: usize, stride: usize) -> Act {
    let (cin, h, wd) = (x.len(), x[0].len(), x[0][0].len());
    let (oh, ow) = ((h - 1) * stride + k, (wd - 1) * stride + k);
    let mut out = vec![vec![vec![0.0; ow]; oh]; cout];
    for (o, plane) in out.iter_mut().enumerate() {
        for row in plane.iter_mut() {
            row.iter_mut().for_each(|v| *v = b[o] as f64);
        }
    }
    for c in 0..cin {
        for i in 0..h {
            for j in 0..wd {
                for o in 0..cout {
                    for a in 0..k {
                        for bb in 0..k {
                            out[o][i * stride + a][j * stride + bb] += w[((c * cout + o) * k + a) * k + bb] as f64 * x[c][i][j];
                        }
                    }
                }
            }
        }
    }
    out
}

fn ref_forward(net: &Net, input: &Tensor, residual: bool, multiple: usize) -> Act {
    let (h, w) = (input.height, input.width);
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    let mut x: Act = (0..input.channels)
        .map(|c| (0..ph).map(|i| (0..pw).map(|j| input.plane(c)[(i % h) * w + j % w] as f64).collect()).collect())
        .collect();
    let find = |n: &str| &net.tensors.iter().find(|t| t.0 == n).unwrap().2;
    let mut slots = std::collections::HashMap::new();
    for layer in &net.layers {
        x = match &layer.op {
            LayerOp::Conv(s) => {
                let (wt, b) = (find(&s.weight), find(s.bias.as_ref().unwrap()));
                match s.kind {
                    ConvKind::Conv => ref_conv(&x, wt, b, s.out_channels, s.kernel, s.stride, s.padding),
                    ConvKind::Transpose => ref_conv_t(&x, wt, b, s.out_channels, s.kernel, s.stride),
                }
            }
            LayerOp::Relu => x.iter().map(|p| p.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()).collect(),
            LayerOp::Save(slot) => {
                slots.insert(slot.clone(), x.clone());
                x
            }
            LayerOp::Add(slot) => {
                let s: &Act = &slots[slot];
                x.iter().zip(s).map(|(p, q)| p.iter().zip(q).map(|(r, t)| r.iter().zip(t).map(|(a, b)| a + b).collect()).collect()).collect()
            }
        };
    }
    x.iter()
        .enumerate()
        .map(|(c, p)| {
            (0..h)
                .map(|i| (0..w).map(|j| if residual { input.plane(c)[i * w + j] as f64 - p[i][j] } else { p[i][j] }).collect())
                .collect()
        })
        .collect()
}

fn small_unet(r: &mut impl Rng) -> Net {
    let mut net = Net { tensors: Vec::new(), layers: Vec::new() };
    net.conv("head", ConvKind::Conv, 3, 4, 3, 1, 1, r);
    net.op("a0", LayerOp::Relu);
    net.op("skip", LayerOp::Save("s".into()));
    net.conv("down", ConvKind::Conv, 4, 6, 2, 2, 0, r);
    net.op("a1", LayerOp::Relu);
    net.conv("mid", ConvKind::Conv, 6, 6, 3, 1, 1, r);
    net.op("a2", LayerOp::Relu);
    net.conv("up", ConvKind::Transpose, 6, 4, 2, 2, 0, r);
    net.op("join", LayerOp::Add("s".into()));
    net.conv("tail", ConvKind::Conv, 4, 2, 3, 1, 1, r);
    net
}

#[test]
fn unet_matches_naive_reference() {
    let mut r = rng(32);
    let net = small_unet(&mut r);
    let meta = ArchiveMetadata { sigma_min: 0.0, sigma_max: 0.3, normalization: "unit".into(), extra: Default::default() };
    for prediction in [Prediction::Direct, Prediction::Residual] {
        let arch = WeightArchive::new(Domain::Gradient, prediction, meta.clone(), net.layers.clone(), net.tensors.clone()).unwrap();
        // odd sizes exercise periodic padding to the downsampling multiple
        for (h, w) in [(8, 8), (7, 9), (1, 1)] {
            let data: Vec<f32> = (0..3 * h * w).map(|_| r.random::<f32>() - 0.5).collect();
            let input = Tensor::from_vec(3, h, w, data).unwrap();
            let got = neural_forward(&arch, &input).unwrap();
            let want = ref_forward(&net, &input, prediction == Prediction::Residual, 2);
            assert_eq!((got.channels, got.height, got.width), (2, h, w));
            for c in 0..2 {
                for i in 0..h {
                    for j in 0..w {
                        assert!((got.plane(c)[i * w + j] as f64 - want[c][i][j]).abs() < 1e-5);
                    }
                }
            }
        }
    }
}

#[test]
fn one_by_one_identity_network_is_exact() {
    let mut w = vec![0.0f32; 2 * 3];
    w[0] = 1.0; // out 0 <- in 0
    w[4] = 1.0; // out 1 <- in 1
    let layers = vec![Layer {
        name: "id".into(),
        op: LayerOp::Conv(ConvSpec { kind: ConvKind::Conv, in_channels: 3, out_channels: 2, kernel: 1, stride: 1, padding: 0, weight: "w".into(), bias: None }),
    }];
    let meta = ArchiveMetadata { sigma_min: 0.0, sigma_max: 1.0, normalization: String::new(), extra: Default::default() };
    let arch = WeightArchive::new(Domain::Gradient, Prediction::Direct, meta, layers, vec![("w".into(), vec![2, 3, 1, 1], w)]).unwrap();
    let handle = DenoiserHandle::neural(arch);
    let g = grad(&random_image(6, 5, &mut rng(33)));
    let out = denoise(&handle, &g, 0.1).unwrap();
    let f32_round = g.map(|v| v as f32 as f64);
    assert_eq!(out, f32_round);
}

#[test]
fn neural_inference_is_bitwise_deterministic() {
    let mut r = rng(34);
    let net = small_unet(&mut r);
    let meta = ArchiveMetadata { sigma_min: 0.0, sigma_max: 0.3, normalization: String::new(), extra: Default::default() };
    let arch = WeightArchive::new(Domain::Gradient, Prediction::Residual, meta, net.layers, net.tensors).unwrap();
    let handle = DenoiserHandle::neural(arch);
    let g = grad(&random_image(21, 18, &mut r));
    let a = denoise(&handle, &g, 0.05).unwrap();
    let b = std::thread::spawn(move || denoise(&handle, &g, 0.05).unwrap()).join().unwrap();
    assert!(a.dh.data().iter().zip(b.dh.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(a.dv.data().iter().zip(b.dv.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn desk_networks_reproduce_their_fixtures() {
    let dir = desk();
    let mut checked = 0;
    for domain in ["gradient", "image"] {
        let arch = apnp_core::denoise::load_weights(dir.join(format!("{domain}.apnpw"))).unwrap();
        assert_eq!(arch.domain.name(), domain);
        let mut paths: Vec<_> = std::fs::read_dir(dir.join("fixtures"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(&format!("{domain}_")))
            .collect();
        paths.sort();
        assert!(paths.len() >= 2);
        for p in paths {
            let fx = Fixture::load(&p).unwrap();
            let dev = fx.max_deviation(&arch).unwrap();
            assert!(dev <= fx.tolerance, "{}: {dev:e} > {:e}", p.display(), fx.tolerance);
            checked += 1;
        }
    }
    assert!(checked >= 4);
}

#[test]
fn fixture_round_trips_and_detects_corruption() {
    let mut r = rng(35);
    let fx = Fixture {
        sigma: 0.1,
        input: Tensor::from_vec(2, 3, 4, (0..24).map(|_| r.random()).collect()).unwrap(),
        expected: Tensor::from_vec(1, 3, 4, (0..12).map(|_| r.random()).collect()).unwrap(),
        tolerance: 1e-4,
    };
    let bytes = fx.to_bytes();
    assert_eq!(Fixture::from_bytes(&bytes).unwrap(), fx);
    let mut bad = bytes.clone();
    let n = bad.len();
    bad[n - 12] ^= 1;
    assert!(matches!(Fixture::from_bytes(&bad), Err(Error::Archive(ArchiveError::Checksum { .. }))));
    assert!(matches!(Fixture::from_bytes(&bytes[..n - 9]), Err(Error::Archive(ArchiveError::Truncated { .. }))));
}

fn field(h: usize, w: usize) -> impl Strategy<Value = GradientField> {
    prop::collection::vec(-1.0f64..1.0, 2 * h * w).prop_map(move |d| {
        GradientField::new(Image::new(h, w, d[..h * w].to_vec()).unwrap(), Image::new(h, w, d[h * w..].to_vec()).unwrap())
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn soft_threshold_is_nonexpansive(a in field(4, 5), b in field(4, 5), w in 0.0f64..50.0, sigma in 0.0f64..0.3) {
        let d = DenoiserHandle::soft_threshold(Domain::Gradient, w).unwrap();
        let (da, db) = (denoise(&d, &a, sigma).unwrap(), denoise(&d, &b, sigma).unwrap());
        prop_assert!(da.sub(&db).unwrap().norm_sq() <= a.sub(&b).unwrap().norm_sq() * (1.0 + 1e-12));
        prop_assert!(da.norm_sq() <= a.norm_sq());
    }

    #[test]
    fn soft_threshold_is_sign_equivariant(a in field(3, 6), w in 0.0f64..50.0, sigma in 0.0f64..0.3) {
        let d = DenoiserHandle::soft_threshold(Domain::Gradient, w).unwrap();
        let neg = denoise(&d, &a.map(|v| -v), sigma).unwrap();
        prop_assert_eq!(neg, denoise(&d, &a, sigma).unwrap().map(|v| -v));
    }
}
