//! Inference fixtures: a network input and the output the training framework
//! produced for it. Same container as weight archives with magic
//! `"APNPFX1\0"`; the payload holds the input tensor followed by the expected
//! output tensor, both f32 little-endian, channel-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::archive::{decode_f32, split_container, verify_checksum, write_container};
use crate::denoise::archive::WeightArchive;
use crate::denoise::engine::{neural_forward, Tensor};
use crate::error::{ArchiveError, Error, Result};

pub const FIXTURE_MAGIC: &[u8; 8] = b"APNPFX1\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FixtureHeader {
    sigma: f64,
    height: usize,
    width: usize,
    in_channels: usize,
    out_channels: usize,
    tolerance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    /// Noise level encoded in the input's noise-map channel.
    pub sigma: f64,
    pub input: Tensor,
    pub expected: Tensor,
    /// Maximum absolute deviation allowed when reproducing `expected`.
    pub tolerance: f64,
}

impl Fixture {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_container(bytes, FIXTURE_MAGIC, "APNPFX1")?;
        let h: FixtureHeader =
            serde_json::from_slice(header).map_err(|e| ArchiveError::Header(e.to_string()))?;
        let plane = h.height * h.width;
        let n_in = h.in_channels * plane;
        let n_out = h.out_channels * plane;
        let needed = (n_in + n_out) * 4;
        if payload.len() < needed {
            return Err(ArchiveError::Truncated {
                needed,
                available: payload.len(),
            }
            .into());
        }
        if payload.len() != needed {
            return Err(ArchiveError::Shape(format!(
                "payload holds {} bytes, header describes {needed}",
                payload.len()
            ))
            .into());
        }
        verify_checksum(bytes, payload)?;
        let values = decode_f32(payload);
        Ok(Fixture {
            sigma: h.sigma,
            input: Tensor::from_vec(h.in_channels, h.height, h.width, values[..n_in].to_vec())?,
            expected: Tensor::from_vec(h.out_channels, h.height, h.width, values[n_in..].to_vec())?,
            tolerance: h.tolerance,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = FixtureHeader {
            sigma: self.sigma,
            height: self.input.height,
            width: self.input.width,
            in_channels: self.input.channels,
            out_channels: self.expected.channels,
            tolerance: self.tolerance,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let payload: Vec<u8> = self
            .input
            .data
            .iter()
            .chain(&self.expected.data)
            .flat_map(|v| v.to_le_bytes())
            .collect();
        write_container(FIXTURE_MAGIC, &header, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Runs `arch` on the fixture input; returns the largest absolute deviation
    /// from the expected output.
    pub fn max_deviation(&self, arch: &WeightArchive) -> Result<f64> {
        let out = neural_forward(arch, &self.input)?;
        if (out.channels, out.height, out.width) != (self.expected.channels, self.expected.height, self.expected.width) {
            return Err(ArchiveError::Shape(format!(
                "network output {}x{}x{} vs fixture {}x{}x{}",
                out.channels, out.height, out.width, self.expected.channels, self.expected.height, self.expected.width
            ))
            .into());
        }
        Ok(out
            .data
            .iter()
            .zip(&self.expected.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max))
    }
}
