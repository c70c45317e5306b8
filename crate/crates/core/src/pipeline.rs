//! End-to-end editing: discrepancy, region masks, then the masked editing trajectory.

use std::fmt;
use std::path::Path;

use log::info;

use crate::config::EditConfig;
use crate::dam::mean_disparity;
use crate::error::{Error, Result};
use crate::flow::{edit_trajectory, DamPlan, PromptId, VelocityProvider};
use crate::io::{export_heat_image, export_mask_image, write_scalar_map, write_tensor};
use crate::mask::{
    discrepancy_avg, distance_to_boundary, patch_means, region_grow, soften, BinaryMask,
    DiscrepancyMap, GrowStatus, SoftMask,
};
use crate::metrics::MetricReport;
use crate::tensor::{LatentTensor, ScalarMap};

/// Soft-mask weight below which a pixel counts as preserved background.
pub const PRESERVED_THRESHOLD: f64 = 0.5;

/// Pipeline stage that produced an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    Config,
    Discrepancy,
    Mask,
    Edit,
    Metrics,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Input => "input",
            Stage::Config => "config",
            Stage::Discrepancy => "discrepancy",
            Stage::Mask => "mask",
            Stage::Edit => "edit",
            Stage::Metrics => "metrics",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage '{stage}' failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

/// Tags a library error with the stage it came from.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Binary region, its distance field and the soft mask derived from them.
#[derive(Debug, Clone)]
pub struct RegionMasks {
    pub binary: BinaryMask,
    pub distance: ScalarMap,
    pub soft: SoftMask,
    pub status: GrowStatus,
}

impl RegionMasks {
    /// Spatial positions whose soft weight is below [`PRESERVED_THRESHOLD`].
    pub fn preserved(&self) -> Vec<bool> {
        preserved_region(&self.soft)
    }
}

pub fn preserved_region(soft: &SoftMask) -> Vec<bool> {
    soft.weights()
        .iter()
        .map(|&w| w < PRESERVED_THRESHOLD)
        .collect()
}

pub fn compute_discrepancy(
    provider: &dyn VelocityProvider,
    x_src: &LatentTensor,
    cfg: &EditConfig,
) -> Result<DiscrepancyMap> {
    discrepancy_avg(
        provider,
        x_src,
        cfg.t_prime,
        &cfg.guidance(),
        cfg.repeats,
        cfg.seed,
    )
}

/// Region growing followed by the distance-aware soft band.
pub fn build_masks(s_bar: &ScalarMap, cfg: &EditConfig) -> Result<RegionMasks> {
    let grid = patch_means(s_bar, cfg.patch_size)?;
    let grown = region_grow(&grid, cfg.merge_ratio)?;
    let distance = distance_to_boundary(&grown.mask);
    let soft = soften(&grown.mask, &distance, cfg.d_max, cfg.k)?;
    Ok(RegionMasks {
        binary: grown.mask,
        distance,
        soft,
        status: grown.status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditStatus {
    Edited,
    /// The prompts produced no discrepancy; the source is returned unchanged.
    EmptyRegion,
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub output: LatentTensor,
    pub discrepancy: DiscrepancyMap,
    pub masks: RegionMasks,
    pub delta_bar: f64,
    pub status: EditStatus,
}

impl EditOutcome {
    /// Metrics of the output against `x_src` over the preserved region.
    pub fn preserved_report(
        &self,
        x_src: &LatentTensor,
        peak: f64,
    ) -> Result<Option<MetricReport>> {
        MetricReport::compute_in_region(&self.output, x_src, peak, &self.masks.preserved())
    }

    /// Writes `edited.npy`, the discrepancy map and both masks (NPY and PNG) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(&self.output, dir.join("edited.npy"))?;
        write_discrepancy(self.discrepancy.map(), dir)?;
        write_masks(&self.masks, dir)
    }
}

pub fn write_discrepancy(s_bar: &ScalarMap, dir: &Path) -> Result<()> {
    write_scalar_map(s_bar, dir.join("discrepancy.npy"))?;
    export_heat_image(s_bar, dir.join("discrepancy.png"))
}

pub fn write_masks(masks: &RegionMasks, dir: &Path) -> Result<()> {
    write_scalar_map(
        &masks.binary.to_soft().to_map(),
        dir.join("mask_binary.npy"),
    )?;
    export_mask_image(&masks.binary.to_soft(), dir.join("mask_binary.png"))?;
    write_scalar_map(&masks.soft.to_map(), dir.join("mask_soft.npy"))?;
    export_mask_image(&masks.soft, dir.join("mask_soft.png"))
}

/// Runs discrepancy, masking and the editing trajectory in sequence.
pub fn run_edit(
    provider: &dyn VelocityProvider,
    x_src: &LatentTensor,
    cfg: &EditConfig,
) -> std::result::Result<EditOutcome, StageError> {
    cfg.validate().at(Stage::Config)?;
    for c in [PromptId::src(), PromptId::tar()] {
        if !provider.has_conditioning(&c) {
            return Err(Error::Config(format!(
                "provider lacks the '{c}' conditioning"
            )))
            .at(Stage::Config);
        }
    }
    if cfg.dam_enabled && !provider.supports_values() {
        return Err(Error::Config(
            "value modulation is enabled but the provider exposes no value tensors".into(),
        ))
        .at(Stage::Config);
    }

    let discrepancy = compute_discrepancy(provider, x_src, cfg).at(Stage::Discrepancy)?;
    let masks = build_masks(discrepancy.map(), cfg).at(Stage::Mask)?;
    let delta_bar = mean_disparity(&discrepancy);
    info!(
        "discrepancy mean {:.6}, max {:.6}, region {} px, band {} px",
        discrepancy.map().mean(),
        discrepancy.map().max(),
        masks.binary.count_ones(),
        masks.soft.band_len()
    );

    if masks.status == GrowStatus::EmptyRegion {
        return Ok(EditOutcome {
            output: x_src.clone(),
            discrepancy,
            masks,
            delta_bar,
            status: EditStatus::EmptyRegion,
        });
    }

    let plan = cfg.dam_enabled.then(|| DamPlan {
        config: cfg.dam(),
        delta_bar,
    });
    let output = edit_trajectory(
        provider,
        x_src,
        &cfg.trajectory(),
        cfg.mask_enabled.then_some(&masks.soft),
        plan.as_ref(),
        cfg.seed,
    )
    .at(Stage::Edit)?;
    Ok(EditOutcome {
        output,
        discrepancy,
        masks,
        delta_bar,
        status: EditStatus::Edited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::providers::{GridManifest, GridProvider, Rect, TwoBlobProvider};
    use crate::tensor::Shape;

    fn blob() -> TwoBlobProvider {
        TwoBlobProvider {
            kappa: 1.0,
            diffusion: 4.0,
            base: 0.0,
            rect: Rect {
                top: 8,
                left: 8,
                height: 16,
                width: 8,
            },
            offset: vec![1.0, -0.5],
        }
    }

    #[test]
    fn blob_mask_covers_rectangle_patches() {
        let p = blob();
        let x = crate::flow::draw_noise(Shape::new(2, 32, 32), 1);
        let cfg = EditConfig::default();
        let s = compute_discrepancy(&p, &x, &cfg).unwrap();
        let masks = build_masks(s.map(), &cfg).unwrap();
        for y in 0..32 {
            for xx in 0..32 {
                assert_eq!(
                    masks.binary.get(y, xx),
                    p.rect.contains(y, xx),
                    "({y},{xx})"
                );
            }
        }
        assert!(masks.soft.band_len() > 0);
    }

    #[test]
    fn masking_protects_background() {
        let p = blob();
        let x = crate::flow::draw_noise(Shape::new(2, 32, 32), 2);
        let on = EditConfig::default();
        let off = EditConfig {
            mask_enabled: false,
            ..EditConfig::default()
        };
        let a = run_edit(&p, &x, &on).unwrap();
        let b = run_edit(&p, &x, &off).unwrap();
        let ra = a.preserved_report(&x, 1.0).unwrap().unwrap();
        let rb = b.preserved_report(&x, 1.0).unwrap().unwrap();
        assert!(ra.mse < rb.mse, "{} vs {}", ra.mse, rb.mse);
    }

    #[test]
    fn dam_on_grid_is_config_stage_error() {
        let dir = tempfile::tempdir().unwrap();
        let shape = Shape::new(1, 8, 8);
        let t = LatentTensor::zeros(shape).unwrap();
        write_tensor(&t, dir.path().join("v.npy")).unwrap();
        let manifest = GridManifest {
            conditionings: vec![PromptId::src(), PromptId::tar()],
            steps: 1,
            files: [
                ("src/0".to_string(), "v.npy".into()),
                ("tar/0".to_string(), "v.npy".into()),
            ]
            .into(),
            latent_shape: None,
        };
        let g = GridProvider::from_manifest(&manifest, dir.path()).unwrap();
        let err = run_edit(&g, &t, &EditConfig::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Config);
        assert!(matches!(err.source, Error::Config(_)));
    }
}
