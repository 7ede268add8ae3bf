//! On-disk formats: raw f64 tensors with JSON sidecars, 8-bit PGM/PPM images,
//! and plain 0-1 mask grids.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Writes `data` as raw little-endian f64 plus a `{shape, dtype, order}`
/// sidecar next to it.
pub fn write_tensor(
    bin_path: &Path,
    json_path: &Path,
    data: &[f64],
    shape: &[usize],
) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        bail!(
            "tensor shape {:?} implies {} entries, got {}",
            shape,
            expected,
            data.len()
        );
    }
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin_path, bytes).with_context(|| format!("writing {}", bin_path.display()))?;
    let dims = shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let sidecar = format!("{{\"shape\":[{dims}],\"dtype\":\"f64\",\"order\":\"row-major\"}}\n");
    fs::write(json_path, sidecar).with_context(|| format!("writing {}", json_path.display()))?;
    Ok(())
}

pub fn read_tensor(bin_path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(bin_path).with_context(|| format!("reading {}", bin_path.display()))?;
    if bytes.len() % 8 != 0 {
        bail!(
            "{} has {} bytes, not a multiple of 8",
            bin_path.display(),
            bytes.len()
        );
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn quantize(v: f64, lo: f64, hi: f64) -> u8 {
    let unit = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (unit * 255.0).round() as u8
}

/// 8-bit binary PGM with values linearly mapped from `[lo, hi]`.
pub fn write_pgm(
    path: &Path,
    data: &[f64],
    height: usize,
    width: usize,
    lo: f64,
    hi: f64,
) -> Result<()> {
    if data.len() != height * width {
        bail!("pgm: {} values for {}x{}", data.len(), height, width);
    }
    if !(hi > lo) {
        bail!("pgm: range must satisfy hi > lo");
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| quantize(v, lo, hi)));
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// 8-bit binary PPM; `data` is row-major `height x width x 3`.
pub fn write_ppm(
    path: &Path,
    data: &[f64],
    height: usize,
    width: usize,
    lo: f64,
    hi: f64,
) -> Result<()> {
    if data.len() != height * width * 3 {
        bail!("ppm: {} values for {}x{}x3", data.len(), height, width);
    }
    if !(hi > lo) {
        bail!("ppm: range must satisfy hi > lo");
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| quantize(v, lo, hi)));
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Plain 0-1 grid: any arrangement of `0` and `1` characters separated by
/// whitespace, read row-major.
pub fn read_mask_file(path: &Path) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut mask = Vec::new();
    for (i, ch) in text.chars().enumerate() {
        match ch {
            '0' => mask.push(false),
            '1' => mask.push(true),
            c if c.is_whitespace() => {}
            c => bail!(
                "mask file {} has invalid character {c:?} at offset {i}",
                path.display()
            ),
        }
    }
    if mask.is_empty() {
        bail!("mask file {} contains no 0/1 entries", path.display());
    }
    Ok(mask)
}
