use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dam::DamConfig;
use crate::error::{Error, Result};
use crate::flow::{GuidanceConfig, TrajectoryConfig};
use crate::fusion::TvConfig;

/// Every knob of the editing pipeline. Missing JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    /// Timestep at which the discrepancy map is measured.
    pub t_prime: f64,
    /// Noise draws averaged into the discrepancy map.
    pub repeats: usize,
    pub patch_size: usize,
    /// A neighbouring patch joins the region when its mean reaches this fraction of the
    /// seed patch mean.
    pub merge_ratio: f64,
    /// Transition band width in pixels.
    pub d_max: f64,
    /// Transition sharpness.
    pub k: f64,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub steps: usize,
    pub src_guidance: f64,
    pub tar_guidance: f64,
    pub seed: u64,
    pub mask_enabled: bool,
    pub tv_enabled: bool,
    pub tv_every_step: bool,
    pub dam_enabled: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            t_prime: 0.89,
            repeats: 3,
            patch_size: 8,
            merge_ratio: 0.5,
            d_max: 3.0,
            k: 5.0,
            lambda: 50.0,
            beta: 0.1,
            gamma: 0.5,
            eta: 0.5,
            steps: 28,
            src_guidance: 1.5,
            tar_guidance: 5.5,
            seed: 0,
            mask_enabled: true,
            tv_enabled: true,
            tv_every_step: true,
            dam_enabled: true,
        }
    }
}

impl EditConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: EditConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("t_prime", self.t_prime),
            ("merge_ratio", self.merge_ratio),
            ("d_max", self.d_max),
            ("k", self.k),
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("src_guidance", self.src_guidance),
            ("tar_guidance", self.tar_guidance),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite, got {v}")));
        }
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.t_prime > 0.0 && self.t_prime < 1.0) {
            return bad("t_prime must lie in (0, 1)");
        }
        if self.repeats == 0 || self.patch_size == 0 || self.steps == 0 {
            return bad("repeats, patch_size and steps must be at least 1");
        }
        if !(self.merge_ratio > 0.0 && self.merge_ratio <= 1.0) {
            return bad("merge_ratio must lie in (0, 1]");
        }
        if self.d_max <= 0.0 || self.k <= 0.0 || self.lambda <= 0.0 {
            return bad("d_max, k and lambda must be positive");
        }
        self.dam().validate()?;
        self.guidance().validate()
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            src_scale: self.src_guidance,
            tar_scale: self.tar_guidance,
        }
    }

    pub fn dam(&self) -> DamConfig {
        DamConfig {
            beta: self.beta,
            gamma: self.gamma,
            eta: self.eta,
            ..DamConfig::default()
        }
    }

    pub fn tv(&self) -> TvConfig {
        TvConfig::with_lambda(self.lambda)
    }

    pub fn trajectory(&self) -> TrajectoryConfig {
        TrajectoryConfig {
            steps: self.steps,
            guidance: self.guidance(),
            tv: self.tv_enabled.then(|| self.tv()),
            tv_every_step: self.tv_every_step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        EditConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: EditConfig = serde_json::from_str(r#"{"d_max": 0.5, "seed": 9}"#).unwrap();
        assert_eq!(cfg.d_max, 0.5);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.steps, 28);
        assert_eq!(cfg.lambda, 50.0);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<EditConfig>(r#"{"lamda": 3}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for cfg in [
            EditConfig {
                t_prime: 1.0,
                ..Default::default()
            },
            EditConfig {
                repeats: 0,
                ..Default::default()
            },
            EditConfig {
                merge_ratio: 0.0,
                ..Default::default()
            },
            EditConfig {
                k: -1.0,
                ..Default::default()
            },
            EditConfig {
                tar_guidance: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
