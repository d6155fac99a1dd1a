//! Uniform hypercube quantizer: N^{n_y} equal cells around a center, indexed
//! mixed-radix (axis 0 least significant), decoded to cell centers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RVec;

/// Relative slack on the saturation check that absorbs floating-point round-off.
pub const SATURATION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub levels: u64,
    pub n_y: usize,
}

impl QuantizerSpec {
    pub fn new(levels: u64, n_y: usize) -> Result<Self> {
        if levels < 3 || levels.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "quantization level must be odd and ≥ 3, got {levels}"
            )));
        }
        if n_y == 0 {
            return Err(Error::InvalidParameter(
                "output dimension must be positive".into(),
            ));
        }
        let spec = Self { levels, n_y };
        spec.cell_count()?;
        Ok(spec)
    }

    pub fn cell_count(&self) -> Result<u64> {
        (0..self.n_y)
            .try_fold(1u64, |acc, _| acc.checked_mul(self.levels))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "{}^{} cells overflow a 64-bit index",
                    self.levels, self.n_y
                ))
            })
    }

    pub fn middle_index(&self) -> u64 {
        let mid = (self.levels - 1) / 2;
        1 + (0..self.n_y)
            .map(|i| mid * self.levels.pow(i as u32))
            .sum::<u64>()
    }

    /// Channel payload width: ⌈n_y·log₂N / 8⌉ bytes.
    pub fn payload_bytes(&self) -> usize {
        let bits = self.n_y as f64 * (self.levels as f64).log2();
        ((bits / 8.0).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantRegion {
    pub center: RVec,
    pub half_width: f64,
}

/// Cell offset from the middle cell along one axis, in −(N−1)/2..=(N−1)/2.
/// Boundary points resolve toward the middle cell, so every |t| ≤ 1/2 lands in it.
fn axis_offset(y: f64, center: f64, half_width: f64, levels: u64) -> i64 {
    let half = ((levels - 1) / 2) as i64;
    let t = (y - center) * levels as f64 / (2.0 * half_width);
    // The 1e-12 fuzz keeps round-off in t from pushing exact boundary points outward.
    let off = if t >= 0.0 {
        (t - 0.5 - 1e-12).ceil()
    } else {
        -((-t - 0.5 - 1e-12).ceil())
    };
    (off as i64).clamp(-half, half)
}

pub fn encode(y: &RVec, region: &QuantRegion, spec: &QuantizerSpec) -> Result<u64> {
    if y.len() != spec.n_y || region.center.len() != spec.n_y {
        return Err(Error::Dimension(format!(
            "output has length {}, quantizer expects {}",
            y.len(),
            spec.n_y
        )));
    }
    let h = region.half_width;
    let distance = (y - &region.center).amax();
    if !(distance <= h * (1.0 + SATURATION_SLACK) + f64::MIN_POSITIVE) || !distance.is_finite() {
        return Err(Error::QuantizerOverflow {
            distance,
            half_width: h,
        });
    }
    if h == 0.0 {
        return Ok(spec.middle_index());
    }
    let half = ((spec.levels - 1) / 2) as i64;
    let mut index = 0u64;
    let mut radix = 1u64;
    for i in 0..spec.n_y {
        let cell = (axis_offset(y[i], region.center[i], h, spec.levels) + half) as u64;
        index += cell * radix;
        radix = radix.saturating_mul(spec.levels);
    }
    Ok(index + 1)
}

pub fn decode(index: u64, region: &QuantRegion, spec: &QuantizerSpec) -> Result<RVec> {
    let max = spec.cell_count()?;
    if index == 0 || index > max {
        return Err(Error::IndexOutOfRange { index, max });
    }
    let width = 2.0 * region.half_width / spec.levels as f64;
    let half = ((spec.levels - 1) / 2) as i64;
    let mut rest = index - 1;
    let mut q = region.center.clone();
    for i in 0..spec.n_y {
        let offset = (rest % spec.levels) as i64 - half;
        rest /= spec.levels;
        q[i] += offset as f64 * width;
    }
    Ok(q)
}

/// Little-endian payload of the minimal width.
pub fn serialize_index(index: u64, spec: &QuantizerSpec) -> Vec<u8> {
    index.to_le_bytes()[..spec.payload_bytes()].to_vec()
}

pub fn deserialize_index(bytes: &[u8], spec: &QuantizerSpec) -> Result<u64> {
    if bytes.len() != spec.payload_bytes() {
        return Err(Error::InvalidParameter(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            spec.payload_bytes()
        )));
    }
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);
    Ok(u64::from_le_bytes(buf))
}
