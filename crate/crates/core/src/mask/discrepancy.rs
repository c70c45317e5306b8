use crate::error::{Error, Result};
use crate::flow::{
    draw_noise, guided_velocity, noised_source, GuidanceConfig, PromptId, VelocityProvider,
};
use crate::par;
use crate::tensor::{LatentTensor, ScalarMap};

/// Averaged semantic discrepancy together with the number of noise draws behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyMap {
    map: ScalarMap,
    repeats: usize,
}

impl DiscrepancyMap {
    pub fn new(map: ScalarMap, repeats: usize) -> Self {
        Self { map, repeats }
    }

    pub fn map(&self) -> &ScalarMap {
        &self.map
    }

    pub fn into_map(self) -> ScalarMap {
        self.map
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    /// True when no pixel carries any discrepancy.
    pub fn is_empty(&self) -> bool {
        self.map.max() == 0.0
    }
}

/// Per-pixel channel L2 norm of `v(Z, t', tar) - v(Z, t', src)` at the forward-noised
/// source `Z = (1 - t') x_src + t' N`, with `N` drawn from `seed`.
pub fn discrepancy_once(
    provider: &dyn VelocityProvider,
    x_src: &LatentTensor,
    t_prime: f64,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<ScalarMap> {
    if !(t_prime > 0.0 && t_prime < 1.0) {
        return Err(Error::Config(format!(
            "t' must lie in (0, 1), got {t_prime}"
        )));
    }
    let shape = x_src.shape();
    let noise = draw_noise(shape, seed);
    let z = noised_source(x_src, &noise, t_prime)?;
    let v_tar = guided_velocity(provider, &z, t_prime, &PromptId::tar(), guidance.tar_scale)?;
    let v_src = guided_velocity(provider, &z, t_prime, &PromptId::src(), guidance.src_scale)?;

    let plane = shape.plane();
    let mut sq = vec![0f64; plane];
    for c in 0..shape.channels {
        for ((acc, &a), &b) in sq.iter_mut().zip(v_tar.channel(c)).zip(v_src.channel(c)) {
            let d = a as f64 - b as f64;
            *acc += d * d;
        }
    }
    Ok(ScalarMap::from_parts(
        shape.height,
        shape.width,
        sq.into_iter().map(f64::sqrt).collect(),
    ))
}

/// Mean of [`discrepancy_once`] over seeds `seed, seed + 1, ..., seed + repeats - 1`.
///
/// Draws may run concurrently; the sum is always taken in seed order.
pub fn discrepancy_avg(
    provider: &dyn VelocityProvider,
    x_src: &LatentTensor,
    t_prime: f64,
    guidance: &GuidanceConfig,
    repeats: usize,
    seed: u64,
) -> Result<DiscrepancyMap> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let draws = par::map_range(repeats, |i| {
        discrepancy_once(
            provider,
            x_src,
            t_prime,
            guidance,
            seed.wrapping_add(i as u64),
        )
    });
    let mut draws = draws.into_iter();
    let first = draws.next().expect("repeats >= 1")?;
    let (h, w) = (first.height(), first.width());
    let mut sum = first.data().to_vec();
    for d in draws {
        for (s, v) in sum.iter_mut().zip(d?.data()) {
            *s += v;
        }
    }
    let n = repeats as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(DiscrepancyMap::new(
        ScalarMap::from_parts(h, w, sum),
        repeats,
    ))
}
