//! Image persistence and input loading for the harness.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, PgmError};
use crate::grid::{ImageGrid, Shape};
use crate::pgm::{read_pgm, write_pgm};
use crate::synthetic;

use super::config::InputSpec;

const RAW_MAGIC: &[u8; 8] = b"BLF64\0\0\0";

/// Writes an image losslessly: magic, width and height as u64 LE, then the
/// row-major values as f64 LE.
pub fn write_raw(img: &ImageGrid, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(RAW_MAGIC)?;
    w.write_all(&(img.width() as u64).to_le_bytes())?;
    w.write_all(&(img.height() as u64).to_le_bytes())?;
    for v in img.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<ImageGrid, HarnessError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| HarnessError::Config(format!("{}: {m}", path.display()));
    if bytes.len() < 24 || &bytes[..8] != RAW_MAGIC {
        return Err(bad("not a raw image file"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes")) as usize;
    let (w, h) = (word(8), word(16));
    let n = w.checked_mul(h).filter(|n| bytes.len() == 24 + 8 * n).ok_or_else(|| bad("truncated raw image"))?;
    let data = (0..n).map(|k| f64::from_le_bytes(bytes[24 + 8 * k..32 + 8 * k].try_into().expect("8 bytes"))).collect();
    ImageGrid::new(w, h, data).map_err(|e| bad(&e.to_string()))
}

/// Reads a `.pgm` or raw `.f64` image, by extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid, HarnessError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("f64") => read_raw(path),
        _ => Ok(read_pgm(path)?),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads the clean images named by `spec`, sorted by id.
pub fn load_input(spec: &InputSpec, seed: u64) -> Result<Vec<(String, ImageGrid)>, HarnessError> {
    let mut images = match spec {
        InputSpec::Piecewise => vec![("piecewise".to_string(), synthetic::piecewise_constant(32))],
        InputSpec::Geometric => vec![("geometric".to_string(), synthetic::geometric(64))],
        InputSpec::Synthetic { count, size } => synthetic::corpus(*size, *count, seed),
        InputSpec::File(p) => vec![(stem(p), read_image(p)?)],
        InputSpec::Directory(dir) => {
            let files = pgm_files(dir)?;
            if files.is_empty() {
                return Err(HarnessError::Config(format!("no .pgm files in {}", dir.display())));
            }
            files.iter().map(|p| Ok((stem(p), read_pgm(p)?))).collect::<Result<_, PgmError>>()?
        }
    };
    images.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(images)
}

/// Bilinear resampling with pixel-centre alignment and clamped borders.
pub fn resize_bilinear(img: &ImageGrid, width: usize, height: usize) -> Result<ImageGrid, HarnessError> {
    let shape = Shape::new(width, height).map_err(|e| HarnessError::Config(e.to_string()))?;
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let axis = |d: usize, s: f64, n: usize| {
        let x = ((d as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = x.floor() as usize;
        (i0, (i0 + 1).min(n - 1), x - i0 as f64)
    };
    Ok(ImageGrid::from_fn(shape, |i, j| {
        let (i0, i1, tx) = axis(i, sx, img.width());
        let (j0, j1, ty) = axis(j, sy, img.height());
        let top = img.get(i0, j0) * (1.0 - tx) + img.get(i1, j0) * tx;
        let bot = img.get(i0, j1) * (1.0 - tx) + img.get(i1, j1) * tx;
        top * (1.0 - ty) + bot * ty
    }))
}

/// Scales so the shorter edge is `size`, then keeps the top-left
/// `size × size` block.
pub fn resize_and_crop(img: &ImageGrid, size: usize) -> Result<ImageGrid, HarnessError> {
    let short = img.width().min(img.height()) as f64;
    let s = size as f64 / short;
    let w = ((img.width() as f64 * s).round() as usize).max(size);
    let h = ((img.height() as f64 * s).round() as usize).max(size);
    let scaled = if (w, h) == (img.width(), img.height()) { img.clone() } else { resize_bilinear(img, w, h)? };
    let shape = Shape::new(size, size).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(ImageGrid::from_fn(shape, |i, j| scaled.get(i, j)))
}

/// Converts every PGM in `input` to a `size × size` PGM in `output`.
/// Returns the written paths.
pub fn prepare_corpus(input: &Path, output: &Path, size: usize) -> Result<Vec<PathBuf>, HarnessError> {
    if size < 2 {
        return Err(HarnessError::Config(format!("corpus size must be at least 2, got {size}")));
    }
    let files = pgm_files(input)?;
    if files.is_empty() {
        return Err(HarnessError::Config(format!("no .pgm files in {}", input.display())));
    }
    fs::create_dir_all(output)?;
    let mut written = Vec::with_capacity(files.len());
    for p in files {
        let img = resize_and_crop(&read_pgm(&p)?, size)?;
        let dst = output.join(format!("{}.pgm", stem(&p)));
        write_pgm(&img, &dst)?;
        log::info!("prepared {}", dst.display());
        written.push(dst);
    }
    Ok(written)
}
