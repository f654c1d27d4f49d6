//! Binary portable graymap (`P5`) montages of through-plane slices.

use std::fs;
use std::path::Path;

use crate::error::{contract, Result};

/// An 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Montage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Montage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Tiles `k` evenly spaced z-slices of an x-fastest volume side by side.
/// Values are clamped to `[0, 1]` and scaled to `0..=255`. Slice `i` is
/// `floor((i + 0.5) * dz / k)`.
pub fn montage_slices(dims: [usize; 3], values: &[f64], k: usize) -> Result<Montage> {
    let [dx, dy, dz] = dims;
    if values.len() != dx * dy * dz {
        return Err(contract(format!(
            "montage: {} values for dims {dims:?}",
            values.len()
        )));
    }
    if k == 0 || k > dz {
        return Err(contract(format!("montage: need 1..={dz} slices, got {k}")));
    }
    let width = k * dx;
    let mut pixels = vec![0u8; width * dy];
    for i in 0..k {
        let z = ((2 * i + 1) * dz) / (2 * k);
        for y in 0..dy {
            for x in 0..dx {
                let v = values[x + dx * (y + dy * z)];
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                pixels[y * width + i * dx + x] = (v * 255.0).round() as u8;
            }
        }
    }
    Ok(Montage {
        width,
        height: dy,
        pixels,
    })
}

pub fn write_slice_montage(path: impl AsRef<Path>, dims: [usize; 3], values: &[f64], k: usize) -> Result<()> {
    fs::write(path, montage_slices(dims, values, k)?.encode())?;
    Ok(())
}
