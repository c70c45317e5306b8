use std::collections::VecDeque;

use log::warn;

use super::BinaryMask;
use crate::error::{Error, Result};
use crate::tensor::ScalarMap;

/// Mean discrepancy of each non-overlapping `patch_size` square. Edge patches may be
/// smaller and average only the pixels they cover.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
    pub means: Vec<f64>,
}

impl PatchGrid {
    pub fn mean(&self, row: usize, col: usize) -> f64 {
        self.means[row * self.cols + col]
    }

    /// Pixel rectangle `(y0, y1, x0, x1)` covered by a patch, end-exclusive.
    pub fn pixel_bounds(&self, row: usize, col: usize) -> (usize, usize, usize, usize) {
        let y0 = row * self.patch_size;
        let x0 = col * self.patch_size;
        (
            y0,
            (y0 + self.patch_size).min(self.height),
            x0,
            (x0 + self.patch_size).min(self.width),
        )
    }

    /// Expands a per-patch selection to pixel resolution.
    pub fn rasterize(&self, selected: &[bool]) -> BinaryMask {
        let mut bits = vec![false; self.height * self.width];
        for row in 0..self.rows {
            for col in 0..self.cols {
                if !selected[row * self.cols + col] {
                    continue;
                }
                let (y0, y1, x0, x1) = self.pixel_bounds(row, col);
                for y in y0..y1 {
                    bits[y * self.width + x0..y * self.width + x1].fill(true);
                }
            }
        }
        BinaryMask::new(self.height, self.width, bits).expect("grid extents are positive")
    }
}

pub fn patch_means(s: &ScalarMap, patch_size: usize) -> Result<PatchGrid> {
    if patch_size == 0 {
        return Err(Error::Config("patch size must be at least 1".into()));
    }
    let (height, width) = (s.height(), s.width());
    let rows = height.div_ceil(patch_size);
    let cols = width.div_ceil(patch_size);
    let mut grid = PatchGrid {
        patch_size,
        height,
        width,
        rows,
        cols,
        means: Vec::with_capacity(rows * cols),
    };
    for row in 0..rows {
        for col in 0..cols {
            let (y0, y1, x0, x1) = grid.pixel_bounds(row, col);
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += s.data()[y * width + x0..y * width + x1].iter().sum::<f64>();
            }
            grid.means.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowStatus {
    Grown,
    /// Every patch mean was zero; the mask is empty.
    EmptyRegion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowOutcome {
    pub mask: BinaryMask,
    /// Per-patch membership, row-major over the grid.
    pub patches: Vec<bool>,
    pub status: GrowStatus,
}

/// Grows a 4-connected patch region from the highest-mean patch.
///
/// The seed is the first maximum in row-major order. A neighbour joins when its mean
/// is at least `merge_ratio` times the seed mean.
pub fn region_grow(grid: &PatchGrid, merge_ratio: f64) -> Result<GrowOutcome> {
    if !(merge_ratio > 0.0 && merge_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "merge ratio must lie in (0, 1], got {merge_ratio}"
        )));
    }
    if grid.means.is_empty() {
        return Err(Error::Shape("patch grid is empty".into()));
    }
    let mut seed = 0;
    for (i, &m) in grid.means.iter().enumerate() {
        if m > grid.means[seed] {
            seed = i;
        }
    }
    let seed_mean = grid.means[seed];
    let mut patches = vec![false; grid.means.len()];
    if seed_mean <= 0.0 {
        warn!("discrepancy is zero everywhere; no edit region");
        return Ok(GrowOutcome {
            mask: grid.rasterize(&patches),
            patches,
            status: GrowStatus::EmptyRegion,
        });
    }

    let threshold = merge_ratio * seed_mean;
    let (rows, cols) = (grid.rows, grid.cols);
    let mut queue = VecDeque::from([seed]);
    patches[seed] = true;
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / cols, i % cols);
        let neighbours = [
            (r > 0).then(|| i - cols),
            (r + 1 < rows).then(|| i + cols),
            (c > 0).then(|| i - 1),
            (c + 1 < cols).then(|| i + 1),
        ];
        for j in neighbours.into_iter().flatten() {
            if !patches[j] && grid.means[j] >= threshold {
                patches[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(GrowOutcome {
        mask: grid.rasterize(&patches),
        patches,
        status: GrowStatus::Grown,
    })
}
