use super::{BinaryMask, SoftMask};
use crate::error::{Error, Result};
use crate::tensor::ScalarMap;

fn band_weight(u: f64, d_max: f64, k: f64) -> f64 {
    1.0 / (1.0 + (k * (u - d_max / 2.0)).exp())
}

/// Converts a binary mask into a soft mask with a sigmoid transition band.
///
/// Weights follow `1 / (1 + exp(k (u - d_max / 2)))` in a signed coordinate `u` that
/// measures distance outward from the region. Outside pixels use `u = D`; inside
/// pixels continue the same axis with `u = -(D + 1)`, because an inside pixel touching
/// the boundary sits one pixel before the first outside pixel. The profile is
/// therefore monotone across the boundary: close to 1 inside, 0.5 at `D = d_max / 2`
/// outside, and close to 0 at the outer edge of the band. Pixels with `D > d_max` keep
/// their binary value exactly.
pub fn soften(m: &BinaryMask, d: &ScalarMap, d_max: f64, k: f64) -> Result<SoftMask> {
    if !(d_max > 0.0 && d_max.is_finite()) {
        return Err(Error::Config(format!(
            "d_max must be positive, got {d_max}"
        )));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Config(format!("k must be positive, got {k}")));
    }
    if (d.height(), d.width()) != (m.height(), m.width()) {
        return Err(Error::Shape(format!(
            "distance map {}x{} vs mask {}x{}",
            d.height(),
            d.width(),
            m.height(),
            m.width()
        )));
    }
    let weights = m
        .bits()
        .iter()
        .zip(d.data())
        .map(|(&inside, &dist)| match (dist <= d_max, inside) {
            (false, true) => 1.0,
            (false, false) => 0.0,
            (true, false) => band_weight(dist, d_max, k),
            (true, true) => band_weight(-(dist + 1.0), d_max, k),
        })
        .collect();
    SoftMask::new(m.height(), m.width(), weights)
}
