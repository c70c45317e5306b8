//! Full-reference quality metrics: MSE, PSNR and single-scale SSIM.

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{ensure_same_shape, LatentTensor};

/// Side length of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 8;

pub fn mse(a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
    ensure_same_shape(a.shape(), b.shape(), "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// MSE over the spatial positions where `region` is set, across all channels.
/// `None` when the region is empty.
pub fn mse_in_region(a: &LatentTensor, b: &LatentTensor, region: &[bool]) -> Result<Option<f64>> {
    ensure_same_shape(a.shape(), b.shape(), "mse")?;
    check_region(a, region)?;
    let plane = a.shape().plane();
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in 0..a.shape().channels {
        for ((&x, &y), _) in a
            .channel(c)
            .iter()
            .zip(b.channel(c))
            .zip(region)
            .filter(|(_, &r)| r)
        {
            let d = x as f64 - y as f64;
            sum += d * d;
            n += 1;
        }
    }
    debug_assert!(n <= plane * a.shape().channels);
    Ok((n > 0).then(|| sum / n as f64))
}

/// `10 log10(peak^2 / mse)`; `f64::INFINITY` when `mse == 0`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(a: &LatentTensor, b: &LatentTensor, peak: f64) -> Result<f64> {
    check_peak(peak)?;
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Config(format!("peak must be positive, got {peak}")));
    }
    Ok(())
}

fn check_region(a: &LatentTensor, region: &[bool]) -> Result<()> {
    if region.len() != a.shape().plane() {
        return Err(Error::Shape(format!(
            "region has {} entries for a {} tensor",
            region.len(),
            a.shape()
        )));
    }
    Ok(())
}

/// SSIM of one window from its first and second moments.
fn ssim_window(a: &[f32], b: &[f32], width: usize, y0: usize, x0: usize, c1: f64, c2: f64) -> f64 {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y0 + SSIM_WINDOW {
        for x in x0..x0 + SSIM_WINDOW {
            sa += a[y * width + x] as f64;
            sb += b[y * width + x] as f64;
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for y in y0..y0 + SSIM_WINDOW {
        for x in x0..x0 + SSIM_WINDOW {
            let da = a[y * width + x] as f64 - ma;
            let db = b[y * width + x] as f64 - mb;
            vaa += da * da;
            vbb += db * db;
            vab += da * db;
        }
    }
    let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
    ((2.0 * (ma * mb) + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2))
}

/// Mean local SSIM over all 8x8 windows at stride 1 of every channel.
pub fn ssim(a: &LatentTensor, b: &LatentTensor, peak: f64) -> Result<f64> {
    let plane = a.shape().plane();
    ssim_windows(a, b, peak, &vec![true; plane])?
        .ok_or_else(|| Error::Shape("no SSIM window fits".into()))
}

/// Mean SSIM over windows lying entirely inside `region`. `None` when no window does.
pub fn ssim_in_region(
    a: &LatentTensor,
    b: &LatentTensor,
    peak: f64,
    region: &[bool],
) -> Result<Option<f64>> {
    ssim_windows(a, b, peak, region)
}

fn ssim_windows(
    a: &LatentTensor,
    b: &LatentTensor,
    peak: f64,
    region: &[bool],
) -> Result<Option<f64>> {
    ensure_same_shape(a.shape(), b.shape(), "ssim")?;
    check_peak(peak)?;
    check_region(a, region)?;
    let s = a.shape();
    if s.height < SSIM_WINDOW || s.width < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} spatial extent, got {s}"
        )));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let rows = s.height - SSIM_WINDOW + 1;
    let cols = s.width - SSIM_WINDOW + 1;
    let inside = |y0: usize, x0: usize| {
        (y0..y0 + SSIM_WINDOW).all(|y| {
            region[y * s.width + x0..y * s.width + x0 + SSIM_WINDOW]
                .iter()
                .all(|&r| r)
        })
    };
    let per_row = par::map_range(s.channels * rows, |i| {
        let (c, y0) = (i / rows, i % rows);
        let (pa, pb) = (a.channel(c), b.channel(c));
        let mut sum = 0.0;
        let mut n = 0usize;
        for x0 in 0..cols {
            if inside(y0, x0) {
                sum += ssim_window(pa, pb, s.width, y0, x0, c1, c2);
                n += 1;
            }
        }
        (sum, n)
    });
    let (sum, n) = per_row
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (rs, rn)| (s + rs, n + rn));
    Ok((n > 0).then(|| sum / n as f64))
}

/// MSE, PSNR and SSIM of one comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    /// `f64::INFINITY` for identical inputs.
    pub psnr: f64,
    /// `None` when no SSIM window fits the compared region.
    pub ssim: Option<f64>,
}

impl MetricReport {
    pub fn compute(a: &LatentTensor, b: &LatentTensor, peak: f64) -> Result<Self> {
        let mse = mse(a, b)?;
        check_peak(peak)?;
        let ssim = if a.shape().height >= SSIM_WINDOW && a.shape().width >= SSIM_WINDOW {
            Some(ssim(a, b, peak)?)
        } else {
            None
        };
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse, peak),
            ssim,
        })
    }

    /// Restricted to spatial positions where `region` is set. `None` for an empty region.
    pub fn compute_in_region(
        a: &LatentTensor,
        b: &LatentTensor,
        peak: f64,
        region: &[bool],
    ) -> Result<Option<Self>> {
        check_peak(peak)?;
        let Some(mse) = mse_in_region(a, b, region)? else {
            return Ok(None);
        };
        let ssim = if a.shape().height >= SSIM_WINDOW && a.shape().width >= SSIM_WINDOW {
            ssim_in_region(a, b, peak, region)?
        } else {
            None
        };
        Ok(Some(Self {
            mse,
            psnr: psnr_from_mse(mse, peak),
            ssim,
        }))
    }
}

impl Serialize for MetricReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("MetricReport", 3)?;
        st.serialize_field("mse", &self.mse)?;
        if self.psnr.is_infinite() {
            st.serialize_field("psnr", "inf")?;
        } else {
            st.serialize_field("psnr", &self.psnr)?;
        }
        st.serialize_field("ssim", &self.ssim)?;
        st.end()
    }
}
