//! Weight archive container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "APNPW1\0\0"
//! 8       4     header length N, u32 little-endian
//! 12      N     header, UTF-8 JSON (layers, tensors, metadata)
//! 12+N    P     tensor payload, f32 little-endian, row-major, contiguous
//! 12+N+P  8     CRC-64/XZ of the payload, u64 little-endian
//! ```
//!
//! Tensor offsets in the header are byte offsets from the start of the
//! payload. Convolution weights use the `[out, in, k, k]` layout, transposed
//! convolutions `[in, out, k, k]`; biases are `[out]`.

use std::collections::BTreeMap;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::denoise::Domain;
use crate::error::{ArchiveError, Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"APNPW1\0\0";

pub(crate) const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Whether the network output is the clean signal or the noise to subtract from its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Direct,
    Residual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetadata {
    /// Lower end of the noise levels seen in training, in [0,1] intensity units.
    pub sigma_min: f64,
    /// Upper end of the noise levels seen in training.
    pub sigma_max: f64,
    /// Free-form description of how inputs were scaled.
    #[serde(default)]
    pub normalization: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.numel() * 4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Transpose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: String,
    pub bias: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Conv(ConvSpec),
    Relu,
    /// Stores the current activation under a slot name for a later skip connection.
    Save(String),
    /// Adds the activation saved under a slot name.
    Add(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawHeader {
    domain: Domain,
    in_channels: usize,
    out_channels: usize,
    prediction: Prediction,
    metadata: ArchiveMetadata,
    layers: Vec<Value>,
    tensors: Vec<TensorEntry>,
}

/// Parsed and validated network description plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightArchive {
    pub domain: Domain,
    pub in_channels: usize,
    pub out_channels: usize,
    pub prediction: Prediction,
    pub metadata: ArchiveMetadata,
    pub layers: Vec<Layer>,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    /// Product of the strides of all downsampling layers; inputs are padded to a multiple of it.
    pub(crate) size_multiple: usize,
}

fn header_err(msg: impl Into<String>) -> Error {
    ArchiveError::Header(msg.into()).into()
}

fn layer_from_value(index: usize, v: &Value) -> Result<Layer> {
    let obj = v
        .as_object()
        .ok_or_else(|| header_err(format!("layer {index} is not an object")))?;
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .unwrap_or_else(|| format!("layer{index}"));
    let ty = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| header_err(format!("layer `{name}` has no type")))?;
    let num = |key: &str| -> Result<usize> {
        obj.get(key)
            .and_then(Value::as_u64)
            .map(|n| n as usize)
            .ok_or_else(|| header_err(format!("layer `{name}` missing integer field `{key}`")))
    };
    let text = |key: &str| -> Result<String> {
        obj.get(key)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| header_err(format!("layer `{name}` missing string field `{key}`")))
    };
    let op = match ty {
        "conv2d" | "conv_transpose2d" => LayerOp::Conv(ConvSpec {
            kind: if ty == "conv2d" {
                ConvKind::Conv
            } else {
                ConvKind::Transpose
            },
            in_channels: num("in_channels")?,
            out_channels: num("out_channels")?,
            kernel: num("kernel")?,
            stride: num("stride")?,
            padding: num("padding")?,
            weight: text("weight")?,
            bias: obj.get("bias").and_then(Value::as_str).map(str::to_owned),
        }),
        "relu" => LayerOp::Relu,
        "save" => LayerOp::Save(text("slot")?),
        "add" => LayerOp::Add(text("slot")?),
        other => {
            return Err(ArchiveError::UnsupportedLayer {
                name,
                reason: format!("layer type `{other}` is not supported"),
            }
            .into())
        }
    };
    Ok(Layer { name, op })
}

fn layer_to_value(layer: &Layer) -> Value {
    use serde_json::json;
    match &layer.op {
        LayerOp::Conv(c) => {
            let mut v = json!({
                "name": layer.name,
                "type": if c.kind == ConvKind::Conv { "conv2d" } else { "conv_transpose2d" },
                "in_channels": c.in_channels,
                "out_channels": c.out_channels,
                "kernel": c.kernel,
                "stride": c.stride,
                "padding": c.padding,
                "weight": c.weight,
            });
            if let Some(b) = &c.bias {
                v["bias"] = json!(b);
            }
            v
        }
        LayerOp::Relu => json!({"name": layer.name, "type": "relu"}),
        LayerOp::Save(slot) => json!({"name": layer.name, "type": "save", "slot": slot}),
        LayerOp::Add(slot) => json!({"name": layer.name, "type": "add", "slot": slot}),
    }
}

impl WeightArchive {
    /// Assembles and validates an archive from in-memory parts.
    pub fn new(
        domain: Domain,
        prediction: Prediction,
        metadata: ArchiveMetadata,
        layers: Vec<Layer>,
        tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    ) -> Result<Self> {
        let (in_channels, out_channels) = domain.channels();
        let mut map = BTreeMap::new();
        for (name, shape, data) in tensors {
            if shape.iter().product::<usize>() != data.len() {
                return Err(ArchiveError::Shape(format!(
                    "tensor `{name}` has {} values for shape {shape:?}",
                    data.len()
                ))
                .into());
            }
            map.insert(name, (shape, data));
        }
        let mut archive = WeightArchive {
            domain,
            in_channels,
            out_channels,
            prediction,
            metadata,
            layers,
            tensors: map,
            size_multiple: 1,
        };
        archive.size_multiple = archive.validate()?;
        Ok(archive)
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors.get(name).map(|(s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(|(_, d)| d.len()).sum()
    }

    fn tensor_shape(&self, layer: &str, name: &str) -> Result<&[usize]> {
        self.tensors
            .get(name)
            .map(|(s, _)| s.as_slice())
            .ok_or_else(|| ArchiveError::Shape(format!("layer `{layer}` references missing tensor `{name}`")).into())
    }

    /// Checks channel counts, tensor shapes and skip-connection consistency.
    /// Returns the spatial size multiple the network needs.
    fn validate(&self) -> Result<usize> {
        let (cin, cout) = self.domain.channels();
        if (self.in_channels, self.out_channels) != (cin, cout) {
            return Err(ArchiveError::Shape(format!(
                "{} denoiser must map {cin} -> {cout} channels, header declares {} -> {}",
                self.domain.name(),
                self.in_channels,
                self.out_channels
            ))
            .into());
        }
        if !(self.metadata.sigma_min >= 0.0 && self.metadata.sigma_max >= self.metadata.sigma_min) {
            return Err(header_err("invalid trained noise range"));
        }
        let mut channels = self.in_channels;
        // resolution as a power-of-stride factor: (numerator, denominator)
        let mut down = 1usize;
        let mut max_down = 1usize;
        let mut slots: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for layer in &self.layers {
            let shape_err = |msg: String| -> Error { ArchiveError::Shape(format!("layer `{}`: {msg}", layer.name)).into() };
            match &layer.op {
                LayerOp::Conv(c) => {
                    if c.in_channels != channels {
                        return Err(shape_err(format!(
                            "expects {} input channels, chain provides {channels}",
                            c.in_channels
                        )));
                    }
                    if c.kernel == 0 || c.stride == 0 {
                        return Err(shape_err("kernel and stride must be positive".into()));
                    }
                    let expect = match c.kind {
                        ConvKind::Conv => vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                        ConvKind::Transpose => vec![c.in_channels, c.out_channels, c.kernel, c.kernel],
                    };
                    let got = self.tensor_shape(&layer.name, &c.weight)?;
                    if got != expect.as_slice() {
                        return Err(shape_err(format!("weight shape {got:?}, expected {expect:?}")));
                    }
                    if let Some(b) = &c.bias {
                        let got = self.tensor_shape(&layer.name, b)?;
                        if got != [c.out_channels] {
                            return Err(shape_err(format!("bias shape {got:?}, expected [{}]", c.out_channels)));
                        }
                    }
                    match c.kind {
                        ConvKind::Conv if c.stride == 1 => {
                            if c.kernel != 2 * c.padding + 1 {
                                return Err(ArchiveError::UnsupportedLayer {
                                    name: layer.name.clone(),
                                    reason: "stride-1 convolutions must preserve size (kernel = 2*padding + 1)".into(),
                                }
                                .into());
                            }
                        }
                        _ => {
                            if c.kernel != c.stride || c.padding != 0 {
                                return Err(ArchiveError::UnsupportedLayer {
                                    name: layer.name.clone(),
                                    reason: "resampling layers must have kernel = stride and no padding".into(),
                                }
                                .into());
                            }
                            if c.kind == ConvKind::Conv {
                                down *= c.stride;
                                max_down = max_down.max(down);
                            } else {
                                if down % c.stride != 0 {
                                    return Err(shape_err("upsamples above input resolution".into()));
                                }
                                down /= c.stride;
                            }
                        }
                    }
                    channels = c.out_channels;
                }
                LayerOp::Relu => {}
                LayerOp::Save(slot) => {
                    slots.insert(slot, (channels, down));
                }
                LayerOp::Add(slot) => match slots.get(slot.as_str()) {
                    Some(&(c, d)) if c == channels && d == down => {}
                    Some(&(c, d)) => {
                        return Err(shape_err(format!(
                            "skip `{slot}` holds {c} channels at 1/{d} resolution, chain has {channels} at 1/{down}"
                        )))
                    }
                    None => return Err(shape_err(format!("skip slot `{slot}` used before being saved"))),
                },
            }
        }
        if channels != self.out_channels || down != 1 {
            return Err(ArchiveError::Shape(format!(
                "layer chain ends with {channels} channels at 1/{down} resolution, expected {} at full",
                self.out_channels
            ))
            .into());
        }
        Ok(max_down)
    }

    /// Decodes and validates an archive from its file bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header_bytes, payload) = split_container(bytes, WEIGHTS_MAGIC, "APNPW1")?;
        let raw: RawHeader = serde_json::from_slice(header_bytes).map_err(|e| header_err(e.to_string()))?;
        let layers = raw
            .layers
            .iter()
            .enumerate()
            .map(|(i, v)| layer_from_value(i, v))
            .collect::<Result<Vec<_>>>()?;
        let mut tensors = Vec::with_capacity(raw.tensors.len());
        for entry in &raw.tensors {
            let end = entry.offset + entry.byte_len();
            if end > payload.len() {
                return Err(ArchiveError::Truncated {
                    needed: end,
                    available: payload.len(),
                }
                .into());
            }
            tensors.push((entry.name.clone(), entry.shape.clone(), decode_f32(&payload[entry.offset..end])));
        }
        verify_checksum(bytes, payload)?;
        let archive = WeightArchive::new(raw.domain, raw.prediction, raw.metadata, layers, tensors)?;
        if (archive.in_channels, archive.out_channels) != (raw.in_channels, raw.out_channels) {
            return Err(ArchiveError::Shape(format!(
                "{} denoiser must map {} -> {} channels, header declares {} -> {}",
                raw.domain.name(),
                archive.in_channels,
                archive.out_channels,
                raw.in_channels,
                raw.out_channels
            ))
            .into());
        }
        Ok(archive)
    }

    /// Serializes to the archive file layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::new();
        for (name, (shape, data)) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: payload.len(),
            });
            payload.extend(data.iter().flat_map(|v| v.to_le_bytes()));
        }
        let raw = RawHeader {
            domain: self.domain,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            prediction: self.prediction,
            metadata: self.metadata.clone(),
            layers: self.layers.iter().map(layer_to_value).collect(),
            tensors: entries,
        };
        let header = serde_json::to_vec_pretty(&raw).expect("header serializes");
        write_container(WEIGHTS_MAGIC, &header, &payload)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a weight archive file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightArchive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightArchive::from_bytes(&bytes)
}

/// Splits `magic | len | header | payload | crc` without checking the checksum.
pub(crate) fn split_container<'a>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    magic_name: &'static str,
) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(ArchiveError::BadMagic { expected: magic_name }.into());
    }
    let truncated = |needed: usize| -> Error {
        ArchiveError::Truncated {
            needed,
            available: bytes.len(),
        }
        .into()
    };
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload_start = 12 + header_len;
    if bytes.len() < payload_start + 8 {
        return Err(truncated(payload_start + 8));
    }
    let payload_end = bytes.len() - 8;
    Ok((&bytes[12..payload_start], &bytes[payload_start..payload_end]))
}

pub(crate) fn verify_checksum(bytes: &[u8], payload: &[u8]) -> Result<()> {
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let computed = CRC64.checksum(payload);
    if stored != computed {
        return Err(ArchiveError::Checksum { stored, computed }.into());
    }
    Ok(())
}

pub(crate) fn write_container(magic: &[u8; 8], header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out.extend_from_slice(&CRC64.checksum(payload).to_le_bytes());
    out
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}
