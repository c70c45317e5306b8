use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusionedit::flow::providers::load_provider;
use fusionedit::flow::VelocityProvider;
use fusionedit::io::{read_scalar_map, read_tensor};
use fusionedit::mask::{GrowStatus, SoftMask};
use fusionedit::metrics::MetricReport;
use fusionedit::pipeline::{
    build_masks, compute_discrepancy, preserved_region, run_edit, write_discrepancy, write_masks,
    AtStage, EditStatus, Stage, StageError,
};
use fusionedit::{EditConfig, Error};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "fusionedit",
    version,
    about = "Region-aware latent editing over rectified-flow velocity fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure where the source and target conditionings disagree.
    Discrepancy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
    },
    /// Grow the edit region from a discrepancy map and soften its boundary.
    Mask {
        #[command(flatten)]
        common: Common,
        /// Discrepancy map written by the `discrepancy` command.
        #[arg(long)]
        discrepancy: PathBuf,
    },
    /// Run the full pipeline and write the edited latent.
    Edit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        toggles: Toggles,
        /// Peak value for PSNR and SSIM.
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
    },
    /// Compare two latents.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        /// Soft mask; restricts the comparison to weights below 0.5.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Input {
    /// `manifest.json`, `analytic:<params.json>` or `twoblob:<params.json>`.
    #[arg(long)]
    provider: String,
    /// Source latent (`C x H x W` float32 NPY).
    #[arg(long)]
    source: PathBuf,
}

#[derive(Args)]
struct Toggles {
    #[arg(long, overrides_with = "no_dam")]
    dam: bool,
    #[arg(long)]
    no_dam: bool,
    /// Edit without spatial fusion.
    #[arg(long)]
    no_mask: bool,
    /// Skip boundary refinement.
    #[arg(long)]
    no_tv: bool,
}

impl Common {
    fn config(&self) -> Result<EditConfig, StageError> {
        let mut cfg = match &self.config {
            Some(path) => EditConfig::load(path).at(Stage::Config)?,
            None => EditConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d_max) = self.d_max {
            cfg.d_max = d_max;
        }
        if let Some(steps) = self.steps {
            cfg.steps = steps;
        }
        cfg.validate().at(Stage::Config)?;
        Ok(cfg)
    }
}

impl Input {
    fn load(&self) -> Result<(Box<dyn VelocityProvider>, fusionedit::LatentTensor), StageError> {
        let provider = load_provider(&self.provider).at(Stage::Input)?;
        let source = read_tensor(&self.source).at(Stage::Input)?;
        Ok((provider, source))
    }
}

fn ensure_dir(dir: &Path) -> Result<(), StageError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
        .at(Stage::Output)
}

fn print(value: serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(&value).expect("json values serialize")
    );
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Discrepancy { common, input } => {
            let cfg = common.config()?;
            let (provider, source) = input.load()?;
            let s = compute_discrepancy(&provider, &source, &cfg).at(Stage::Discrepancy)?;
            ensure_dir(&common.out)?;
            write_discrepancy(s.map(), &common.out).at(Stage::Output)?;
            print(json!({
                "mean": s.map().mean(),
                "max": s.map().max(),
                "repeats": s.repeats(),
            }));
        }
        Command::Mask {
            common,
            discrepancy,
        } => {
            let cfg = common.config()?;
            let s = read_scalar_map(&discrepancy).at(Stage::Input)?;
            let masks = build_masks(&s, &cfg).at(Stage::Mask)?;
            ensure_dir(&common.out)?;
            write_masks(&masks, &common.out).at(Stage::Output)?;
            if masks.status == GrowStatus::EmptyRegion {
                eprintln!("warning: discrepancy map is zero everywhere; wrote empty masks");
            }
            print(json!({
                "status": status_name(masks.status == GrowStatus::EmptyRegion),
                "region_pixels": masks.binary.count_ones(),
                "band_pixels": masks.soft.band_len(),
            }));
        }
        Command::Edit {
            common,
            input,
            toggles,
            peak,
        } => {
            let mut cfg = common.config()?;
            if toggles.dam {
                cfg.dam_enabled = true;
            }
            if toggles.no_dam {
                cfg.dam_enabled = false;
            }
            cfg.mask_enabled &= !toggles.no_mask;
            cfg.tv_enabled &= !toggles.no_tv;
            let (provider, source) = input.load()?;
            let outcome = run_edit(&provider, &source, &cfg)?;
            if outcome.status == EditStatus::EmptyRegion {
                eprintln!("warning: discrepancy map is zero everywhere; source returned unchanged");
            }
            let report = outcome.preserved_report(&source, peak).at(Stage::Metrics)?;
            outcome.write(&common.out).at(Stage::Output)?;
            print(json!({
                "status": status_name(outcome.status == EditStatus::EmptyRegion),
                "delta_bar": outcome.delta_bar,
                "region_pixels": outcome.masks.binary.count_ones(),
                "preserved": report,
            }));
        }
        Command::Metrics { a, b, mask, peak } => {
            let ta = read_tensor(&a).at(Stage::Input)?;
            let tb = read_tensor(&b).at(Stage::Input)?;
            let report = match mask {
                None => Some(MetricReport::compute(&ta, &tb, peak).at(Stage::Metrics)?),
                Some(path) => {
                    let m = read_scalar_map(&path).at(Stage::Input)?;
                    let soft = SoftMask::try_from(&m).at(Stage::Input)?;
                    MetricReport::compute_in_region(&ta, &tb, peak, &preserved_region(&soft))
                        .at(Stage::Metrics)?
                }
            };
            print(serde_json::to_value(report).expect("reports serialize"));
        }
    }
    Ok(())
}

fn status_name(empty: bool) -> &'static str {
    if empty {
        "empty_region"
    } else {
        "edited"
    }
}

/// 2 for unusable inputs or configuration, 1 for failures during computation.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format(_) | Error::Shape(_) | Error::Config(_) => 2,
        Error::Data(_) | Error::Optimization { .. } => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FUSIONEDIT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e.source))
        }
    }
}
