#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::Write;

use fusionedit::flow::providers::{Rect, TwoBlobProvider};
use fusionedit::flow::{PromptId, VelocityProvider};
use fusionedit::mask::{BinaryMask, PatchGrid};
use fusionedit::{LatentTensor, Result, Shape};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Writes one result line straight to stdout so it shows without `--nocapture`,
/// then fails the test on error.
pub fn report(name: &str, outcome: std::result::Result<String, String>) {
    let line = match &outcome {
        Ok(detail) => format!("PASS  {name:<28} {detail}\n"),
        Err(detail) => format!("FAIL  {name:<28} {detail}\n"),
    };
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    drop(out);
    if let Err(detail) = outcome {
        panic!("{name}: {detail}");
    }
}

/// `v = a * x` for every conditioning. Integrating from `t = 1` to `0` gives
/// `x(0) = x(1) * exp(-a)`.
pub struct LinearFlow {
    pub a: f64,
}

impl VelocityProvider for LinearFlow {
    fn conditionings(&self) -> Vec<PromptId> {
        vec![PromptId::src(), PromptId::tar(), PromptId::null()]
    }

    fn evaluate(&self, x: &LatentTensor, _t: f64, _c: &PromptId) -> Result<LatentTensor> {
        x.map(|v| self.a * v)
    }
}

/// Edits a rectangle of the latent and leaks into its neighbourhood unless masked.
pub fn two_blob() -> TwoBlobProvider {
    TwoBlobProvider {
        kappa: 1.0,
        diffusion: 4.0,
        base: 0.0,
        rect: Rect {
            top: 8,
            left: 8,
            height: 16,
            width: 16,
        },
        offset: vec![1.0, -0.5, 0.25, 0.75],
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> LatentTensor {
    let data = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
    LatentTensor::new(shape, data).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> BinaryMask {
    let bits = (0..h * w).map(|_| rng.random_bool(density)).collect();
    BinaryMask::new(h, w, bits).unwrap()
}

/// Region growing by repeated full sweeps until nothing changes.
pub fn flood_fill_oracle(grid: &PatchGrid, merge_ratio: f64) -> Vec<bool> {
    let n = grid.means.len();
    let mut seed = 0;
    for i in 0..n {
        if grid.means[i] > grid.means[seed] {
            seed = i;
        }
    }
    let mut selected = vec![false; n];
    if grid.means[seed] <= 0.0 {
        return selected;
    }
    let threshold = merge_ratio * grid.means[seed];
    selected[seed] = true;
    loop {
        let mut changed = false;
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let i = r * grid.cols + c;
                if selected[i] || grid.means[i] < threshold {
                    continue;
                }
                let touches = (r > 0 && selected[i - grid.cols])
                    || (r + 1 < grid.rows && selected[i + grid.cols])
                    || (c > 0 && selected[i - 1])
                    || (c + 1 < grid.cols && selected[i + 1]);
                if touches {
                    selected[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return selected;
        }
    }
}

/// `max(dist - 1, 0)` to the nearest opposite pixel by checking every pair.
pub fn distance_oracle(m: &BinaryMask) -> Vec<f64> {
    let (h, w) = (m.height(), m.width());
    let mut out = vec![f64::INFINITY; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = f64::INFINITY;
            for yy in 0..h {
                for xx in 0..w {
                    if m.get(yy, xx) != m.get(y, x) {
                        let dy = y as f64 - yy as f64;
                        let dx = x as f64 - xx as f64;
                        best = best.min((dy * dy + dx * dx).sqrt());
                    }
                }
            }
            out[y * w + x] = (best - 1.0).max(0.0);
        }
    }
    out
}

/// Exact minimizer of the band smoothness objective for one channel, by assembling the
/// normal equations and solving them densely.
pub fn tv_oracle(x0: &[f64], h: usize, w: usize, band: &[bool], lambda: f64) -> Vec<f64> {
    let vars: Vec<usize> = (0..h * w).filter(|&p| band[p]).collect();
    let index = |p: usize| vars.binary_search(&p).ok();
    let n = vars.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut edges = BTreeSet::new();
    for &p in &vars {
        let (y, x) = (p / w, p % w);
        if x + 1 < w {
            edges.insert((p, p + 1));
        }
        if y + 1 < h {
            edges.insert((p, p + w));
        }
    }
    for (p, q) in edges {
        match (index(p), index(q)) {
            (Some(i), Some(j)) => {
                a[(i, i)] += 1.0;
                a[(j, j)] += 1.0;
                a[(i, j)] -= 1.0;
                a[(j, i)] -= 1.0;
            }
            (Some(i), None) => {
                a[(i, i)] += 1.0;
                b[i] += x0[q];
            }
            _ => unreachable!("edges start at band pixels"),
        }
    }
    for (i, &p) in vars.iter().enumerate() {
        a[(i, i)] += lambda;
        b[i] += lambda * x0[p];
    }
    let sol = a.cholesky().expect("system is positive definite").solve(&b);
    let mut out = x0.to_vec();
    for (i, &p) in vars.iter().enumerate() {
        out[p] = sol[i];
    }
    out
}

/// Mean squared horizontal forward difference over the whole tensor.
pub fn cross_seam_energy(t: &LatentTensor) -> f64 {
    let s = t.shape();
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..s.channels {
        for y in 0..s.height {
            for x in 0..s.width - 1 {
                let d = t.get(c, y, x + 1) as f64 - t.get(c, y, x) as f64;
                sum += d * d;
                count += 1;
            }
        }
    }
    sum / count as f64
}
