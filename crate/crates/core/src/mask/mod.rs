//! Edit-region localization: discrepancy maps, patch region growing, the exact
//! distance transform, and the soft transition band.

mod discrepancy;
mod distance;
mod region;
mod soft;

pub use discrepancy::{discrepancy_avg, discrepancy_once, DiscrepancyMap};
pub use distance::{distance_to_boundary, squared_distance_to};
pub use region::{patch_means, region_grow, GrowOutcome, GrowStatus, PatchGrid};
pub use soft::soften;

use crate::error::{Error, Result};
use crate::tensor::ScalarMap;

/// Hard `{0, 1}` mask at latent resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask with {} entries",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let bits = (0..height * width)
            .map(|i| f(i / width, i % width))
            .collect();
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            weights: self
                .bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Thresholds a map at 0.5 (useful when reading masks back from disk).
    pub fn from_map(m: &ScalarMap) -> Self {
        Self {
            height: m.height(),
            width: m.width(),
            bits: m.data().iter().map(|&v| v >= 0.5).collect(),
        }
    }
}

/// Per-pixel blend weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl SoftMask {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || weights.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask with {} weights",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Data(format!("mask weight {w} is outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.weights[y * self.width + x]
    }

    /// Pixels with a fractional weight.
    pub fn band(&self) -> Vec<bool> {
        self.weights.iter().map(|&w| w > 0.0 && w < 1.0).collect()
    }

    pub fn band_len(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0 && w < 1.0).count()
    }

    pub fn to_map(&self) -> ScalarMap {
        ScalarMap::from_parts(self.height, self.width, self.weights.clone())
    }
}

impl TryFrom<&ScalarMap> for SoftMask {
    type Error = Error;

    fn try_from(m: &ScalarMap) -> Result<Self> {
        SoftMask::new(m.height(), m.width(), m.data().to_vec())
    }
}
