//! Dense tensors shared by every stage of the pipeline.

use std::fmt;

use crate::error::{Error, Result};

/// Channel/height/width extent of a [`LatentTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

pub(crate) fn ensure_same_shape(a: Shape, b: Shape, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Rank-3 `f32` tensor stored row-major with the channel axis outermost.
///
/// Every element is finite; constructors reject NaN and infinities.
#[derive(Clone, PartialEq)]
pub struct LatentTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for LatentTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatentTensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl LatentTensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.channels == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::Shape(format!(
                "every extent must be positive, got {shape}"
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {} at index {i}",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from data already known to be finite and correctly sized.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { shape, data }
    }

    pub fn filled(shape: Shape, value: f32) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    /// Builds a tensor by evaluating `f(channel, row, col)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    /// Element-wise combination evaluated in `f64` and rounded once to `f32`.
    ///
    /// Fails with a shape error when shapes differ and a data error if the
    /// result is not finite.
    pub fn zip_map(
        &self,
        other: &LatentTensor,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<LatentTensor> {
        ensure_same_shape(self.shape, other.shape, what)?;
        let data: Vec<f32> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a as f64, b as f64) as f32)
            .collect();
        LatentTensor::new(self.shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<LatentTensor> {
        let data = self.data.iter().map(|&a| f(a as f64) as f32).collect();
        LatentTensor::new(self.shape, data)
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> Result<f64> {
        ensure_same_shape(self.shape, other.shape, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }
}

/// Non-negative per-pixel scalar field (discrepancy maps, distance fields).
///
/// Values are `f64`; `f64::INFINITY` is allowed and used as the "no boundary"
/// sentinel by the distance transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "map extents must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Data(format!(
                "map value {} at index {i} is not >= 0",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(height * width, data.len());
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Single-channel `f32` view for persistence. Infinite entries are not representable
    /// in a tensor and produce a data error.
    pub fn to_tensor(&self) -> Result<LatentTensor> {
        LatentTensor::new(
            Shape::new(1, self.height, self.width),
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }
}

impl TryFrom<&LatentTensor> for ScalarMap {
    type Error = Error;

    fn try_from(t: &LatentTensor) -> Result<Self> {
        let s = t.shape();
        if s.channels != 1 {
            return Err(Error::Shape(format!(
                "expected a single-channel map, got {s}"
            )));
        }
        ScalarMap::new(
            s.height,
            s.width,
            t.data().iter().map(|&v| v as f64).collect(),
        )
    }
}
