//! Rectified-flow velocity providers and the ODE machinery built on them.
//!
//! Time runs from `t = 1` (pure noise) to `t = 0` (data). Providers return the
//! velocity `dX/dt` of the linear interpolation path `X_t = (1 - t) X + t N`, so
//! integrating toward the data side subtracts `h * v` at every step.

mod edit;
pub mod providers;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, LatentTensor, Shape};

pub use edit::{edit_trajectory, DamPlan, TrajectoryConfig};

/// Opaque identifier selecting one conditioning of a provider.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(String);

impl PromptId {
    pub fn new(tag: impl Into<String>) -> Self {
        Self(tag.into())
    }

    pub fn src() -> Self {
        Self::new("src")
    }

    pub fn tar() -> Self {
        Self::new("tar")
    }

    /// The unconditional branch used by classifier-free guidance.
    pub fn null() -> Self {
        Self::new("null")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Value-tensor rewrite applied inside a provider evaluation.
pub type ValueHook<'a> = dyn Fn(&LatentTensor) -> Result<LatentTensor> + Sync + 'a;

/// A conditional velocity field `v(x, t, c)`.
///
/// Implementations must be deterministic and read-only after construction, so
/// concurrent `evaluate` calls are safe.
pub trait VelocityProvider: Send + Sync {
    /// Conditionings this provider can evaluate.
    fn conditionings(&self) -> Vec<PromptId>;

    fn has_conditioning(&self, c: &PromptId) -> bool {
        self.conditionings().contains(c)
    }

    fn evaluate(&self, x: &LatentTensor, t: f64, c: &PromptId) -> Result<LatentTensor>;

    /// Whether the provider exposes an internal value tensor that can be modulated.
    fn supports_values(&self) -> bool {
        false
    }

    /// Returns `(velocity, value)` for one evaluation.
    fn evaluate_with_values(
        &self,
        _x: &LatentTensor,
        _t: f64,
        _c: &PromptId,
    ) -> Result<(LatentTensor, LatentTensor)> {
        Err(Error::Config(
            "provider does not expose value tensors".into(),
        ))
    }

    /// Evaluates the velocity after passing the internal value tensor through `hook`.
    fn evaluate_modulated(
        &self,
        _x: &LatentTensor,
        _t: f64,
        _c: &PromptId,
        _hook: &ValueHook<'_>,
    ) -> Result<LatentTensor> {
        Err(Error::Config(
            "provider does not expose value tensors".into(),
        ))
    }
}

impl<P: VelocityProvider + ?Sized> VelocityProvider for Box<P> {
    fn conditionings(&self) -> Vec<PromptId> {
        (**self).conditionings()
    }
    fn has_conditioning(&self, c: &PromptId) -> bool {
        (**self).has_conditioning(c)
    }
    fn evaluate(&self, x: &LatentTensor, t: f64, c: &PromptId) -> Result<LatentTensor> {
        (**self).evaluate(x, t, c)
    }
    fn supports_values(&self) -> bool {
        (**self).supports_values()
    }
    fn evaluate_with_values(
        &self,
        x: &LatentTensor,
        t: f64,
        c: &PromptId,
    ) -> Result<(LatentTensor, LatentTensor)> {
        (**self).evaluate_with_values(x, t, c)
    }
    fn evaluate_modulated(
        &self,
        x: &LatentTensor,
        t: f64,
        c: &PromptId,
        hook: &ValueHook<'_>,
    ) -> Result<LatentTensor> {
        (**self).evaluate_modulated(x, t, c, hook)
    }
}

/// Classifier-free guidance scales for the two branches of the editing ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub src_scale: f64,
    pub tar_scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            src_scale: 1.5,
            tar_scale: 5.5,
        }
    }
}

impl GuidanceConfig {
    /// Both branches unguided.
    pub const UNIT: GuidanceConfig = GuidanceConfig {
        src_scale: 1.0,
        tar_scale: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("src", self.src_scale), ("tar", self.tar_scale)] {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::Config(format!(
                    "{name} guidance scale must be finite and >= 0, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Intermediate state of the editing ODE.
#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub x_mid: LatentTensor,
    pub x_src: LatentTensor,
    pub noise: LatentTensor,
    pub t: f64,
    pub step_index: usize,
}

impl TrajectoryState {
    /// State at `t = 1`, where the intermediate latent equals the source.
    pub fn start(x_src: LatentTensor, noise: LatentTensor) -> Result<Self> {
        ensure_same_shape(x_src.shape(), noise.shape(), "trajectory noise")?;
        Ok(Self {
            x_mid: x_src.clone(),
            x_src,
            noise,
            t: 1.0,
            step_index: 0,
        })
    }
}

/// Standard-normal tensor from a ChaCha8 stream seeded with `seed`.
pub fn draw_noise(shape: Shape, seed: u64) -> LatentTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    LatentTensor::from_parts(shape, data)
}

/// Calls the provider and checks that it preserved the input shape.
pub(crate) fn checked_velocity(
    provider: &dyn VelocityProvider,
    x: &LatentTensor,
    t: f64,
    c: &PromptId,
) -> Result<LatentTensor> {
    let v = provider.evaluate(x, t, c)?;
    ensure_same_shape(x.shape(), v.shape(), "provider output")?;
    Ok(v)
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("timestep {t} is outside [0, 1]")));
    }
    Ok(())
}

/// Uniform timestep `t_i = 1 - i / steps`.
pub fn timestep(i: usize, steps: usize) -> f64 {
    1.0 - i as f64 / steps as f64
}

/// Integrates `dX = v dt` from `t = 1` to `t = 0` with forward Euler on a uniform grid.
pub fn euler_integrate(
    provider: &dyn VelocityProvider,
    x1: &LatentTensor,
    c: &PromptId,
    steps: usize,
) -> Result<LatentTensor> {
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = x1.clone();
    for i in 0..steps {
        let v = checked_velocity(provider, &x, timestep(i, steps), c)?;
        x = x.zip_map(&v, "euler step", |x, v| x - h * v)?;
    }
    Ok(x)
}

/// Forward-noised source `(1 - t) x_src + t noise`.
pub fn noised_source(x_src: &LatentTensor, noise: &LatentTensor, t: f64) -> Result<LatentTensor> {
    check_time(t)?;
    x_src.zip_map(noise, "noised_source", |x, n| (1.0 - t) * x + t * n)
}

/// Projection of the intermediate latent into noise space, `x_mid - t x_src + t noise`.
pub fn projected_target(
    x_mid: &LatentTensor,
    x_src: &LatentTensor,
    noise: &LatentTensor,
    t: f64,
) -> Result<LatentTensor> {
    check_time(t)?;
    ensure_same_shape(x_mid.shape(), x_src.shape(), "projected_target")?;
    ensure_same_shape(x_mid.shape(), noise.shape(), "projected_target")?;
    let data: Vec<f32> = x_mid
        .data()
        .iter()
        .zip(x_src.data())
        .zip(noise.data())
        .map(|((&m, &s), &n)| (m as f64 - t * s as f64 + t * n as f64) as f32)
        .collect();
    LatentTensor::new(x_mid.shape(), data)
}

/// `v_null + scale * (v_cond - v_null)`; `v_null` may be absent only when `scale == 1`.
pub(crate) fn combine_guidance(
    v_cond: LatentTensor,
    v_null: Option<&LatentTensor>,
    scale: f64,
) -> Result<LatentTensor> {
    match v_null {
        None if scale == 1.0 => Ok(v_cond),
        None => Err(Error::Config(format!(
            "guidance scale {scale} needs a '{}' conditioning",
            PromptId::null()
        ))),
        Some(n) => n.zip_map(&v_cond, "guidance", |n, c| n + scale * (c - n)),
    }
}

fn require_null(provider: &dyn VelocityProvider, scale: f64) -> Result<()> {
    if scale != 1.0 && !provider.has_conditioning(&PromptId::null()) {
        return Err(Error::Config(format!(
            "guidance scale {scale} requires the provider to declare a '{}' conditioning",
            PromptId::null()
        )));
    }
    Ok(())
}

/// Classifier-free guided velocity. With `scale == 1` this is exactly `v(x, t, c)`.
pub fn guided_velocity(
    provider: &dyn VelocityProvider,
    x: &LatentTensor,
    t: f64,
    c: &PromptId,
    scale: f64,
) -> Result<LatentTensor> {
    require_null(provider, scale)?;
    let v_cond = checked_velocity(provider, x, t, c)?;
    if scale == 1.0 {
        return Ok(v_cond);
    }
    let v_null = checked_velocity(provider, x, t, &PromptId::null())?;
    combine_guidance(v_cond, Some(&v_null), scale)
}

/// Displacement field `v(Z_tar, t, tar) - v(Z_src, t, src)` for the current state.
pub fn delta_velocity(
    provider: &dyn VelocityProvider,
    state: &TrajectoryState,
    guidance: &GuidanceConfig,
) -> Result<LatentTensor> {
    let z_src = noised_source(&state.x_src, &state.noise, state.t)?;
    let z_tar = projected_target(&state.x_mid, &state.x_src, &state.noise, state.t)?;
    let v_tar = guided_velocity(
        provider,
        &z_tar,
        state.t,
        &PromptId::tar(),
        guidance.tar_scale,
    )?;
    let v_src = guided_velocity(
        provider,
        &z_src,
        state.t,
        &PromptId::src(),
        guidance.src_scale,
    )?;
    v_tar.zip_map(&v_src, "delta velocity", |a, b| a - b)
}
