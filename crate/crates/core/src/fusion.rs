//! Latent fusion under binary and soft masks, and quadratic smoothing of the
//! transition band.
//!
//! The refinement objective for one channel `x` with band `B` and snapshot `x_hat` is
//!
//! ```text
//! L(x) = sum_{p in B} [ (x[right(p)] - x[p])^2 + (x[down(p)] - x[p])^2 ]
//!      + lambda * sum_{p in B} (x[p] - x_hat[p])^2
//! ```
//!
//! Differences that would leave the image are zero (replicate boundary). Pixels outside
//! `B` never move and enter the smoothness terms as fixed data. `L` is a strictly convex
//! quadratic in the band pixels, and channels are independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, SoftMask};
use crate::par;
use crate::tensor::{ensure_same_shape, LatentTensor};

/// Fused latent together with the transition band it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLatent {
    tensor: LatentTensor,
    band: Vec<bool>,
}

impl FusedLatent {
    /// Pairs a tensor with an explicit band (one flag per spatial position).
    pub fn with_band(tensor: LatentTensor, band: Vec<bool>) -> Result<Self> {
        if band.len() != tensor.shape().plane() {
            return Err(Error::Shape(format!(
                "band has {} entries for a {} latent",
                band.len(),
                tensor.shape()
            )));
        }
        Ok(Self { tensor, band })
    }

    pub fn tensor(&self) -> &LatentTensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> LatentTensor {
        self.tensor
    }

    pub fn band(&self) -> &[bool] {
        &self.band
    }

    pub fn band_len(&self) -> usize {
        self.band.iter().filter(|&&b| b).count()
    }
}

fn check_mask_dims(t: &LatentTensor, h: usize, w: usize) -> Result<()> {
    let s = t.shape();
    if (s.height, s.width) != (h, w) {
        return Err(Error::Shape(format!("mask is {h}x{w}, latent is {s}")));
    }
    Ok(())
}

/// `m * x_mid + (1 - m) * x_src`, the mask broadcast over channels.
pub fn fuse_latents(
    x_mid: &LatentTensor,
    x_src: &LatentTensor,
    m: &SoftMask,
) -> Result<FusedLatent> {
    ensure_same_shape(x_mid.shape(), x_src.shape(), "fuse_latents")?;
    check_mask_dims(x_mid, m.height(), m.width())?;
    let shape = x_mid.shape();
    let weights = m.weights();
    let mut out = vec![0f32; shape.len()];
    par::for_each_chunk_mut(&mut out, shape.plane(), |c, plane| {
        for (((o, &a), &b), &w) in plane
            .iter_mut()
            .zip(x_mid.channel(c))
            .zip(x_src.channel(c))
            .zip(weights)
        {
            *o = (w * a as f64 + (1.0 - w) * b as f64) as f32;
        }
    });
    Ok(FusedLatent {
        tensor: LatentTensor::new(shape, out)?,
        band: m.band(),
    })
}

/// Hard selection: `x_tar` where the mask is set, `x_src` elsewhere.
pub fn fuse_binary(
    x_tar: &LatentTensor,
    x_src: &LatentTensor,
    m: &BinaryMask,
) -> Result<LatentTensor> {
    ensure_same_shape(x_tar.shape(), x_src.shape(), "fuse_binary")?;
    check_mask_dims(x_tar, m.height(), m.width())?;
    let plane = x_tar.shape().plane();
    let data = x_tar
        .data()
        .iter()
        .zip(x_src.data())
        .enumerate()
        .map(|(i, (&a, &b))| if m.bits()[i % plane] { a } else { b })
        .collect();
    Ok(LatentTensor::from_parts(x_tar.shape(), data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    /// Weight of the fidelity term.
    pub lambda: f64,
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once an iteration lowers the loss by less than this.
    pub tol: f64,
}

impl TvConfig {
    /// Gradient step `1 / (8 + 2 lambda)`, below `2 / L` for the objective's Lipschitz
    /// constant `L <= 16 + 2 lambda`.
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            step_size: 1.0 / (8.0 + 2.0 * lambda),
            max_iters: 500,
            tol: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_iters == 0 || self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("max_iters and tol must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TvConfig {
    fn default() -> Self {
        Self::with_lambda(50.0)
    }
}

/// Result of [`tv_refine`].
#[derive(Debug, Clone)]
pub struct TvOutcome {
    pub tensor: LatentTensor,
    /// Loss after each accepted iteration, per channel, starting with the initial loss.
    pub losses: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Band geometry shared by the loss and gradient of one channel.
struct Stencil<'a> {
    width: usize,
    height: usize,
    band: &'a [bool],
    band_idx: Vec<usize>,
}

impl<'a> Stencil<'a> {
    fn new(width: usize, height: usize, band: &'a [bool]) -> Self {
        let band_idx = (0..band.len()).filter(|&i| band[i]).collect();
        Self {
            width,
            height,
            band,
            band_idx,
        }
    }

    fn right(&self, p: usize) -> Option<usize> {
        (p % self.width + 1 < self.width).then_some(p + 1)
    }

    fn down(&self, p: usize) -> Option<usize> {
        (p / self.width + 1 < self.height).then_some(p + self.width)
    }

    fn loss(&self, x: &[f64], hat: &[f64], lambda: f64) -> f64 {
        let mut smooth = 0.0;
        let mut fidelity = 0.0;
        for &p in &self.band_idx {
            for q in [self.right(p), self.down(p)].into_iter().flatten() {
                let d = x[q] - x[p];
                smooth += d * d;
            }
            let f = x[p] - hat[p];
            fidelity += f * f;
        }
        smooth + lambda * fidelity
    }

    /// Gradient with respect to band pixels, indexed like `band_idx`.
    fn gradient(&self, x: &[f64], hat: &[f64], lambda: f64, grad: &mut [f64]) {
        grad.fill(0.0);
        let mut full = vec![0.0; x.len()];
        for &p in &self.band_idx {
            full[p] += 2.0 * lambda * (x[p] - hat[p]);
            for q in [self.right(p), self.down(p)].into_iter().flatten() {
                let d = x[q] - x[p];
                full[p] -= 2.0 * d;
                if self.band[q] {
                    full[q] += 2.0 * d;
                }
            }
        }
        for (g, &p) in grad.iter_mut().zip(&self.band_idx) {
            *g = full[p];
        }
    }
}

/// Evaluates the refinement objective of `x` against the snapshot `x_hat`, summed over
/// channels.
pub fn tv_loss(x: &FusedLatent, x_hat: &LatentTensor, lambda: f64) -> Result<f64> {
    let t = x.tensor();
    ensure_same_shape(t.shape(), x_hat.shape(), "tv_loss")?;
    let s = t.shape();
    let stencil = Stencil::new(s.width, s.height, &x.band);
    Ok((0..s.channels)
        .map(|c| {
            let xs: Vec<f64> = t.channel(c).iter().map(|&v| v as f64).collect();
            let hs: Vec<f64> = x_hat.channel(c).iter().map(|&v| v as f64).collect();
            stencil.loss(&xs, &hs, lambda)
        })
        .sum())
}

/// Minimizes the band objective by gradient descent, starting from (and anchored to)
/// the fused tensor. Pixels outside the band are returned bit-for-bit unchanged.
pub fn tv_refine(x0: &FusedLatent, config: &TvConfig) -> Result<TvOutcome> {
    config.validate()?;
    let s = x0.tensor.shape();
    if !x0.band.iter().any(|&b| b) {
        return Ok(TvOutcome {
            tensor: x0.tensor.clone(),
            losses: vec![Vec::new(); s.channels],
            iterations: 0,
        });
    }
    let stencil = Stencil::new(s.width, s.height, &x0.band);
    let results = par::map_range(s.channels, |c| {
        refine_channel(&stencil, x0.tensor.channel(c), config)
    });

    let mut data = x0.tensor.data().to_vec();
    let mut losses = Vec::with_capacity(s.channels);
    let mut iterations = 0;
    for (c, r) in results.into_iter().enumerate() {
        let (values, history, iters) = r?;
        let plane = &mut data[c * s.plane()..(c + 1) * s.plane()];
        for &p in &stencil.band_idx {
            plane[p] = values[p] as f32;
        }
        losses.push(history);
        iterations = iterations.max(iters);
    }
    Ok(TvOutcome {
        tensor: LatentTensor::new(s, data)?,
        losses,
        iterations,
    })
}

fn refine_channel(
    stencil: &Stencil<'_>,
    plane: &[f32],
    config: &TvConfig,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let hat: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    let mut x = hat.clone();
    let mut loss = stencil.loss(&x, &hat, config.lambda);
    let mut history = vec![loss];
    let mut grad = vec![0.0; stencil.band_idx.len()];
    let mut candidate = x.clone();
    let mut step = config.step_size;
    let mut iterations = 0;

    for iteration in 1..=config.max_iters {
        stencil.gradient(&x, &hat, config.lambda, &mut grad);
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        // backtrack until the loss does not increase
        let new_loss = loop {
            for (&p, &g) in stencil.band_idx.iter().zip(&grad) {
                candidate[p] = x[p] - step * g;
            }
            let l = stencil.loss(&candidate, &hat, config.lambda);
            if !l.is_finite() {
                return Err(Error::Optimization { iteration, loss: l });
            }
            if l <= loss {
                break Some(l);
            }
            step *= 0.5;
            if step < config.step_size * 1e-12 {
                break None;
            }
        };
        let Some(new_loss) = new_loss else { break };
        std::mem::swap(&mut x, &mut candidate);
        candidate.copy_from_slice(&x);
        iterations = iteration;
        history.push(new_loss);
        let decrease = loss - new_loss;
        loss = new_loss;
        if decrease < config.tol {
            break;
        }
    }
    Ok((x, history, iterations))
}
