//! Kernel sets on disk: one text file per kernel plus a `manifest.csv`
//! listing the Gaussian parameters each file was generated from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cli::io::{read_kernel, write_kernel};
use crate::error::{Error, Result};
use crate::imgcore::BlurKernel;
use crate::operators::{default_kernel_set, KernelParams};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub theta: f64,
    pub size: usize,
}

impl ManifestEntry {
    pub fn params(&self) -> KernelParams {
        KernelParams {
            sigma_x: self.sigma_x,
            sigma_y: self.sigma_y,
            theta: self.theta,
            size: self.size,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NamedKernel {
    pub label: String,
    /// Generating parameters when known (built-in or manifest-listed kernels).
    pub params: Option<KernelParams>,
    pub kernel: BlurKernel,
}

impl NamedKernel {
    pub fn describe(&self) -> String {
        match &self.params {
            Some(p) => format!(
                "{}: sigma_x={} sigma_y={} theta={} size={}",
                self.label, p.sigma_x, p.sigma_y, p.theta, p.size
            ),
            None => format!("{}: {}x{} taps from file", self.label, self.kernel.size(), self.kernel.size()),
        }
    }
}

fn kernel_file_name(index: usize) -> String {
    format!("kernel_{index}.txt")
}

/// The eight default benchmark kernels.
pub fn builtin_kernels() -> Vec<NamedKernel> {
    default_kernel_set()
        .iter()
        .enumerate()
        .map(|(i, p)| NamedKernel {
            label: format!("builtin:{i}"),
            params: Some(*p),
            kernel: p.build().expect("default kernel parameters are valid"),
        })
        .collect()
}

/// Resolves `identity`, `builtin:N` (N in 0..8) or a kernel file path.
pub fn resolve_kernel(spec: &str) -> Result<NamedKernel> {
    if spec == "identity" {
        return Ok(NamedKernel {
            label: "identity".into(),
            params: None,
            kernel: BlurKernel::identity(),
        });
    }
    if let Some(n) = spec.strip_prefix("builtin:") {
        let idx: usize = n
            .parse()
            .map_err(|_| Error::Parameter(format!("bad builtin kernel index `{n}`")))?;
        return builtin_kernels()
            .into_iter()
            .nth(idx)
            .ok_or_else(|| Error::Parameter(format!("builtin kernel {idx} does not exist (0..=7)")));
    }
    Ok(NamedKernel {
        label: spec.to_owned(),
        params: None,
        kernel: read_kernel(spec)?,
    })
}

/// Writes one file per parameter set plus the manifest; returns the written paths.
pub fn write_kernel_set(dir: &Path, params: &[KernelParams]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST);
    let mut writer = csv::Writer::from_path(&manifest_path)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let mut written = Vec::with_capacity(params.len() + 1);
    for (i, p) in params.iter().enumerate() {
        let file = kernel_file_name(i);
        let path = dir.join(&file);
        write_kernel(&path, &p.build()?)?;
        writer
            .serialize(ManifestEntry {
                file,
                sigma_x: p.sigma_x,
                sigma_y: p.sigma_y,
                theta: p.theta,
                size: p.size,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        written.push(path);
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    written.push(manifest_path);
    Ok(written)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

/// Loads every kernel listed in `dir/manifest.csv`.
pub fn load_kernel_dir(dir: &Path) -> Result<Vec<NamedKernel>> {
    let entries = read_manifest(&dir.join(MANIFEST))?;
    if entries.is_empty() {
        return Err(Error::Format(format!("{}: empty kernel manifest", dir.display())));
    }
    entries
        .into_iter()
        .map(|e| {
            Ok(NamedKernel {
                label: e.file.clone(),
                params: Some(e.params()),
                kernel: read_kernel(dir.join(&e.file))?,
            })
        })
        .collect()
}
