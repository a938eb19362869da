//! Client datasets for experiments and binary PPM/PGM image files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::fedsim::Dataset;
use crate::model::InputShape;
use crate::rng;

use super::config::DatasetSource;

/// Gaussian blobs summed into each channel of a synthetic image.
pub const BLOBS_PER_CHANNEL: usize = 3;

/// Builds the client's `n` samples. Synthetic labels are drawn uniformly;
/// directory datasets use the configured labels or else `i mod classes`.
pub fn make_dataset(
    source: &DatasetSource,
    shape: InputShape,
    n: usize,
    classes: usize,
    seed: u64,
) -> Result<Dataset> {
    match source {
        DatasetSource::Synthetic => {
            let mut r = rng::rng_from(seed);
            let mut data = Vec::with_capacity(n * shape.numel());
            for _ in 0..n * shape.channels {
                data.extend(blob_channel(&mut r, shape.height, shape.width));
            }
            let labels = (0..n).map(|_| r.gen_range(0..classes)).collect();
            Dataset::new(
                Array::new(vec![n, shape.channels, shape.height, shape.width], data)?,
                labels,
                classes,
            )
        }
        DatasetSource::Directory { path, labels } => {
            let files = image_files(path)?;
            if files.len() < n {
                return Err(Error::InvalidConfig(format!(
                    "{} holds {} images, {n} are needed",
                    path.display(),
                    files.len()
                )));
            }
            let mut data = Vec::with_capacity(n * shape.numel());
            for f in &files[..n] {
                let img = read_netpbm(f)?;
                if img.shape() != [shape.channels, shape.height, shape.width] {
                    return Err(Error::Format {
                        path: f.display().to_string(),
                        reason: format!(
                            "image is {:?}, expected {:?}",
                            img.shape(),
                            [shape.channels, shape.height, shape.width]
                        ),
                    });
                }
                data.extend_from_slice(img.data());
            }
            let labels = labels
                .clone()
                .unwrap_or_else(|| (0..n).map(|i| i % classes).collect());
            Dataset::new(
                Array::new(vec![n, shape.channels, shape.height, shape.width], data)?,
                labels,
                classes,
            )
        }
    }
}

/// One `h×w` plane: a sum of random Gaussian bumps rescaled to `[0, 1]`.
fn blob_channel(r: &mut impl Rng, h: usize, w: usize) -> Vec<f64> {
    let side = h.min(w) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..BLOBS_PER_CHANNEL)
        .map(|_| {
            (
                r.gen_range(0.0..h as f64),
                r.gen_range(0.0..w as f64),
                r.gen_range(0.15..0.5) * side,
                r.gen_range(0.2..1.0),
            )
        })
        .collect();
    let mut plane: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            blobs
                .iter()
                .map(|&(cy, cx, s, a)| {
                    a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp()
                })
                .sum()
        })
        .collect();
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in &mut plane {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    plane
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pgm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Writes a `[c, h, w]` image (c = 1 or 3) as binary PGM or PPM, mapping
/// `[0, 1]` linearly onto `0..=255`. Values outside the range are clamped.
pub fn write_netpbm(path: &Path, img: &Array) -> Result<()> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        other => {
            return Err(Error::InvalidConfig(format!(
                "cannot store an image of shape {other:?}"
            )))
        }
    };
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for i in 0..h * w {
        for ch in 0..c {
            bytes.push((d[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Reads a binary PGM (P5) or PPM (P6) into `[c, h, w]` values on `[0, 1]`.
pub fn read_netpbm(path: &Path) -> Result<Array> {
    let bytes = fs::read(path)?;
    let bad = |reason: &str| Error::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token().as_deref() {
        Some("P5") => 1,
        Some("P6") => 3,
        _ => return Err(bad("not a binary PGM/PPM file")),
    };
    let mut num = || token().and_then(|t| t.parse::<usize>().ok());
    let (w, h, maxval) = match (num(), num(), num()) {
        (Some(w), Some(h), Some(m)) if w > 0 && h > 0 && (1..=65535).contains(&m) => (w, h, m),
        _ => return Err(bad("malformed header")),
    };
    // One whitespace byte separates the header from the raster.
    let start = pos + 1;
    let depth = if maxval > 255 { 2 } else { 1 };
    let need = w * h * channels * depth;
    if bytes.len() < start + need {
        return Err(bad("truncated raster"));
    }
    let raster = &bytes[start..start + need];
    let mut data = vec![0.0; channels * h * w];
    for i in 0..h * w {
        for ch in 0..channels {
            let k = (i * channels + ch) * depth;
            let v = if depth == 2 {
                u16::from_be_bytes([raster[k], raster[k + 1]]) as usize
            } else {
                raster[k] as usize
            };
            data[ch * h * w + i] = v as f64 / maxval as f64;
        }
    }
    Ok(Array::from_parts(vec![channels, h, w], data))
}
