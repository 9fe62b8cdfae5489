//! 8-bit grayscale image files and plain-text kernel files.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, GrayImage, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::imgcore::{BlurKernel, Image};

/// Reads an 8-bit grayscale PNG or PGM and scales it to [0,1].
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::UnsupportedFormat {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    let gray = match decoded {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_owned(),
                reason: format!("expected 8-bit grayscale, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    Image::new(
        h as usize,
        w as usize,
        gray.as_raw().iter().map(|&p| p as f64 / 255.0).collect(),
    )
}

/// `round(255 v)` (halves away from zero), clamped to [0, 255].
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes an 8-bit grayscale image; `.pgm`/`.pnm` give binary PGM, anything else PNG.
pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let pixels: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let gray = GrayImage::from_raw(w, h, pixels).expect("buffer matches dimensions");
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    let result = match ext.as_deref() {
        Some("pgm") | Some("pnm") => PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(gray.as_raw(), w, h, image::ExtendedColorType::L8),
        _ => image::codecs::png::PngEncoder::new(out).write_image(gray.as_raw(), w, h, image::ExtendedColorType::L8),
    };
    result.map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Kernel text: the side length on the first line, then one row of taps per line.
pub fn format_kernel(k: &BlurKernel) -> String {
    let mut out = format!("{}\n", k.size());
    for a in 0..k.size() {
        let row: Vec<String> = (0..k.size()).map(|b| format!("{:e}", k.tap(a, b))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_kernel(text: &str) -> Result<BlurKernel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let size: usize = lines
        .next()
        .ok_or_else(|| Error::Format("empty kernel file".into()))?
        .trim()
        .parse()
        .map_err(|e| Error::Format(format!("bad kernel size header: {e}")))?;
    let mut taps = Vec::with_capacity(size * size);
    for (row, line) in lines.enumerate() {
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("row {row}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != size {
            return Err(Error::Format(format!(
                "row {row} has {} taps, expected {size}",
                values.len()
            )));
        }
        taps.extend(values);
    }
    BlurKernel::new(size, taps)
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<BlurKernel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kernel(&text)
}

pub fn write_kernel(path: impl AsRef<Path>, k: &BlurKernel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_kernel(k)).map_err(|e| Error::io(path, e))
}
