//! Disparity-aware modulation of value tensors: channel-wise AdaIN statistics
//! transfer blended in with a strength that depends on the timestep and on how far
//! apart the two prompts are.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::DiscrepancyMap;
use crate::par;
use crate::tensor::{ensure_same_shape, LatentTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamConfig {
    /// Base strength.
    pub beta: f64,
    /// Sensitivity to the disparity.
    pub gamma: f64,
    /// Disparity at which the sensitivity term is neutral.
    pub eta: f64,
    /// Added to the standard deviation in the normalization denominator.
    pub epsilon: f64,
}

impl Default for DamConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.5,
            eta: 0.5,
            epsilon: 1e-6,
        }
    }
}

impl DamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !(self.gamma.is_finite() && self.eta.is_finite()) {
            return Err(Error::Config("gamma and eta must be finite".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn plane_stats(plane: &[f32]) -> (f64, f64) {
    let n = plane.len() as f64;
    let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = plane
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

pub fn channel_stats(v: &LatentTensor) -> ChannelStats {
    let stats = par::map_range(v.shape().channels, |c| plane_stats(v.channel(c)));
    let (mean, std) = stats.into_iter().unzip();
    ChannelStats { mean, std }
}

/// Renormalizes each channel of `v` to the mean and standard deviation of `v_ref`:
/// `std_ref * (v - mean) / (std + epsilon) + mean_ref`.
pub fn adain(v: &LatentTensor, v_ref: &LatentTensor, epsilon: f64) -> Result<LatentTensor> {
    blend_adain(v, v_ref, 1.0, epsilon)
}

/// `alpha * adain(v, v_ref) + (1 - alpha) * v`, exact at `alpha` of 0 and 1.
pub fn fuse_values(
    v: &LatentTensor,
    v_ref: &LatentTensor,
    alpha: f64,
    epsilon: f64,
) -> Result<LatentTensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    ensure_same_shape(v.shape(), v_ref.shape(), "fuse_values")?;
    if alpha == 0.0 {
        return Ok(v.clone());
    }
    blend_adain(v, v_ref, alpha, epsilon)
}

fn blend_adain(
    v: &LatentTensor,
    v_ref: &LatentTensor,
    alpha: f64,
    epsilon: f64,
) -> Result<LatentTensor> {
    ensure_same_shape(v.shape(), v_ref.shape(), "adain")?;
    let src = channel_stats(v);
    let dst = channel_stats(v_ref);
    let shape = v.shape();
    let mut out = vec![0f32; shape.len()];
    par::for_each_chunk_mut(&mut out, shape.plane(), |c, plane| {
        let scale = dst.std[c] / (src.std[c] + epsilon);
        for (o, &x) in plane.iter_mut().zip(v.channel(c)) {
            let x = x as f64;
            let styled = scale * (x - src.mean[c]) + dst.mean[c];
            *o = if alpha == 1.0 {
                styled as f32
            } else {
                (alpha * styled + (1.0 - alpha) * x) as f32
            };
        }
    });
    LatentTensor::new(shape, out)
}

/// `clip(beta * (1 - t) * (1 - gamma * (delta_bar - eta)), 0, 1)`.
pub fn adaptive_alpha(config: &DamConfig, t: f64, delta_bar: f64) -> f64 {
    let raw = config.beta * (1.0 - t) * (1.0 - config.gamma * (delta_bar - config.eta));
    if raw.is_nan() {
        return 0.0;
    }
    raw.clamp(0.0, 1.0)
}

/// Mean of the discrepancy map after scaling it by its maximum (0 for an all-zero map).
pub fn mean_disparity(s_bar: &DiscrepancyMap) -> f64 {
    let map = s_bar.map();
    let max = map.max();
    if max <= 0.0 {
        return 0.0;
    }
    map.data().iter().map(|v| v / max).sum::<f64>() / map.data().len() as f64
}
