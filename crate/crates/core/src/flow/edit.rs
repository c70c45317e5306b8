use log::debug;

use super::{
    checked_velocity, combine_guidance, draw_noise, guided_velocity, noised_source,
    projected_target, require_null, timestep, GuidanceConfig, PromptId, VelocityProvider,
};
use crate::dam::{adaptive_alpha, fuse_values, DamConfig};
use crate::error::{Error, Result};
use crate::fusion::{fuse_latents, tv_refine, TvConfig};
use crate::mask::SoftMask;
use crate::tensor::{ensure_same_shape, LatentTensor};

/// Integration settings for [`edit_trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConfig {
    pub steps: usize,
    pub guidance: GuidanceConfig,
    /// Boundary refinement after each fusion; `None` disables it.
    pub tv: Option<TvConfig>,
    /// Refine at every step, or only after the last one.
    pub tv_every_step: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            steps: 28,
            guidance: GuidanceConfig::default(),
            tv: Some(TvConfig::default()),
            tv_every_step: true,
        }
    }
}

/// Value modulation settings together with the edit's mean disparity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamPlan {
    pub config: DamConfig,
    pub delta_bar: f64,
}

/// Runs the editing ODE `dX_mid = (v(Z_tar, t, tar) - v(Z_src, t, src)) dt` from
/// `t = 1` (where `X_mid = x_src`) down to `t = 0`.
///
/// Each forward-Euler step applies `X_mid <- X_mid - h * dV` with `h = 1 / steps`,
/// the same convention as [`super::euler_integrate`]. A zero displacement field
/// therefore leaves the source untouched, and a constant displacement `d` moves the
/// result to `x_src - d`.
///
/// With a mask, every step is followed by soft fusion against the source and, when
/// configured, boundary refinement. With a DAM plan, a second unmasked reference
/// trajectory is evolved alongside, and the target-branch value tensor of the masked
/// path is blended toward the reference statistics.
pub fn edit_trajectory(
    provider: &dyn VelocityProvider,
    x_src: &LatentTensor,
    config: &TrajectoryConfig,
    mask: Option<&SoftMask>,
    dam: Option<&DamPlan>,
    seed: u64,
) -> Result<LatentTensor> {
    if config.steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    config.guidance.validate()?;
    require_null(provider, config.guidance.src_scale)?;
    require_null(provider, config.guidance.tar_scale)?;
    if let Some(plan) = dam {
        plan.config.validate()?;
        if !provider.supports_values() {
            return Err(Error::Config(
                "value modulation requested but the provider exposes no value tensors".into(),
            ));
        }
    }
    if let Some(m) = mask {
        let s = x_src.shape();
        if (m.height(), m.width()) != (s.height, s.width) {
            return Err(Error::Shape(format!(
                "mask is {}x{}, latent is {s}",
                m.height(),
                m.width()
            )));
        }
    }

    let noise = draw_noise(x_src.shape(), seed);
    let h = 1.0 / config.steps as f64;
    let mut x_mid = x_src.clone();
    let mut x_ref = dam.map(|_| x_src.clone());
    let src = PromptId::src();
    let tar = PromptId::tar();
    let g = config.guidance;

    for i in 0..config.steps {
        let t = timestep(i, config.steps);
        let z_src = noised_source(x_src, &noise, t)?;
        let v_src = guided_velocity(provider, &z_src, t, &src, g.src_scale)?;
        let z_tar = projected_target(&x_mid, x_src, &noise, t)?;

        let v_tar = match (dam, x_ref.as_mut()) {
            (Some(plan), Some(x_ref)) => {
                let z_ref = projected_target(x_ref, x_src, &noise, t)?;
                let (v_ref_cond, value_ref) = provider.evaluate_with_values(&z_ref, t, &tar)?;
                ensure_same_shape(z_ref.shape(), v_ref_cond.shape(), "provider output")?;
                let alpha = adaptive_alpha(&plan.config, t, plan.delta_bar);
                let eps = plan.config.epsilon;
                let hook = |v: &LatentTensor| fuse_values(v, &value_ref, alpha, eps);
                let v_cond = provider.evaluate_modulated(&z_tar, t, &tar, &hook)?;
                ensure_same_shape(z_tar.shape(), v_cond.shape(), "provider output")?;

                let (v_null, v_ref_null) = if g.tar_scale == 1.0 {
                    (None, None)
                } else {
                    let null = PromptId::null();
                    (
                        Some(checked_velocity(provider, &z_tar, t, &null)?),
                        Some(checked_velocity(provider, &z_ref, t, &null)?),
                    )
                };
                let v_ref = combine_guidance(v_ref_cond, v_ref_null.as_ref(), g.tar_scale)?;
                *x_ref = euler_step(x_ref, &v_ref, &v_src, h)?;
                debug!("step {i}: t = {t:.4}, alpha = {alpha:.6}");
                combine_guidance(v_cond, v_null.as_ref(), g.tar_scale)?
            }
            _ => guided_velocity(provider, &z_tar, t, &tar, g.tar_scale)?,
        };

        x_mid = euler_step(&x_mid, &v_tar, &v_src, h)?;

        if let Some(m) = mask {
            let fused = fuse_latents(&x_mid, x_src, m)?;
            let last = i + 1 == config.steps;
            x_mid = match &config.tv {
                Some(tv) if config.tv_every_step || last => tv_refine(&fused, tv)?.tensor,
                _ => fused.into_tensor(),
            };
        }
    }
    Ok(x_mid)
}

fn euler_step(
    x: &LatentTensor,
    v_tar: &LatentTensor,
    v_src: &LatentTensor,
    h: f64,
) -> Result<LatentTensor> {
    ensure_same_shape(x.shape(), v_tar.shape(), "euler step")?;
    ensure_same_shape(x.shape(), v_src.shape(), "euler step")?;
    let data = x
        .data()
        .iter()
        .zip(v_tar.data())
        .zip(v_src.data())
        .map(|((&x, &a), &b)| (x as f64 - h * (a as f64 - b as f64)) as f32)
        .collect();
    LatentTensor::new(x.shape(), data)
}
