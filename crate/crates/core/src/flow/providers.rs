//! Built-in velocity providers.
//!
//! * [`AnalyticProvider`] transports every point to a fixed mean per conditioning;
//!   its Euler trajectories have closed forms.
//! * [`GridProvider`] replays velocity tensors recorded from an external model.
//! * [`TwoBlobProvider`] differs between `src` and `tar` only inside a rectangle,
//!   for localization tests.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{PromptId, ValueHook, VelocityProvider};
use crate::error::{Error, Result};
use crate::io::read_tensor;
use crate::tensor::{ensure_same_shape, LatentTensor, Shape};

fn unknown(c: &PromptId) -> Error {
    Error::Config(format!("provider does not declare conditioning '{c}'"))
}

/// Per-conditioning target of an analytic provider.
#[derive(Debug, Clone)]
pub enum MeanField {
    Constant(f32),
    Tensor(LatentTensor),
}

impl MeanField {
    fn value(&self, i: usize) -> f64 {
        match self {
            MeanField::Constant(v) => *v as f64,
            MeanField::Tensor(t) => t.data()[i] as f64,
        }
    }

    fn check(&self, shape: Shape) -> Result<()> {
        match self {
            MeanField::Constant(_) => Ok(()),
            MeanField::Tensor(t) => ensure_same_shape(t.shape(), shape, "analytic mean"),
        }
    }
}

/// Exact velocity field of a point mass.
///
/// For data concentrated at `mu`, the interpolant is `X_t = (1 - t) mu + t N`, so
/// `dX/dt = N - mu`. Eliminating `N = (X_t - (1 - t) mu) / t` gives
///
/// ```text
/// v(x, t) = (x - mu) / t
/// ```
///
/// which is evaluated with `t` clamped below at `epsilon`. A forward-Euler step from
/// `t = h` with step `h` lands exactly on `mu`.
///
/// The value tensor exposed for modulation is the input latent itself.
#[derive(Debug, Clone)]
pub struct AnalyticProvider {
    means: BTreeMap<PromptId, MeanField>,
    epsilon: f64,
}

impl AnalyticProvider {
    pub const DEFAULT_EPSILON: f64 = 1e-4;

    pub fn new(means: BTreeMap<PromptId, MeanField>) -> Self {
        Self {
            means,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Every conditioning (`src`, `tar`, `null`) shares one mean.
    pub fn uniform(mean: MeanField) -> Self {
        Self::new(
            [PromptId::src(), PromptId::tar(), PromptId::null()]
                .into_iter()
                .map(|c| (c, mean.clone()))
                .collect(),
        )
    }

    fn velocity_from_value(
        &self,
        value: &LatentTensor,
        t: f64,
        c: &PromptId,
    ) -> Result<LatentTensor> {
        let mean = self.means.get(c).ok_or_else(|| unknown(c))?;
        mean.check(value.shape())?;
        let scale = 1.0 / t.max(self.epsilon);
        let data = value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| ((x as f64 - mean.value(i)) * scale) as f32)
            .collect();
        LatentTensor::new(value.shape(), data)
    }
}

impl VelocityProvider for AnalyticProvider {
    fn conditionings(&self) -> Vec<PromptId> {
        self.means.keys().cloned().collect()
    }

    fn evaluate(&self, x: &LatentTensor, t: f64, c: &PromptId) -> Result<LatentTensor> {
        self.velocity_from_value(x, t, c)
    }

    fn supports_values(&self) -> bool {
        true
    }

    fn evaluate_with_values(
        &self,
        x: &LatentTensor,
        t: f64,
        c: &PromptId,
    ) -> Result<(LatentTensor, LatentTensor)> {
        Ok((self.velocity_from_value(x, t, c)?, x.clone()))
    }

    fn evaluate_modulated(
        &self,
        x: &LatentTensor,
        t: f64,
        c: &PromptId,
        hook: &ValueHook<'_>,
    ) -> Result<LatentTensor> {
        let value = hook(x)?;
        ensure_same_shape(x.shape(), value.shape(), "modulated value")?;
        self.velocity_from_value(&value, t, c)
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

/// Time-independent field whose conditionings differ only inside `rect`.
///
/// ```text
/// v_c(x) = kappa * (x - mu_c) - diffusion * laplacian(x)
/// ```
///
/// `mu_src = mu_null = base` everywhere, and `mu_tar = base + offset[channel]` inside
/// the rectangle. At a common input the conditionings therefore differ by
/// `-kappa * offset` inside the rectangle and not at all outside it. The diffusion
/// term couples neighbours, so an unmasked edit leaks past the rectangle the way
/// real attention-based models bleed edits into the background.
///
/// The value tensor exposed for modulation is the input latent itself.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoBlobProvider {
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default)]
    pub diffusion: f64,
    #[serde(default)]
    pub base: f64,
    pub rect: Rect,
    /// One entry per channel, or a single entry applied to all channels.
    pub offset: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

impl TwoBlobProvider {
    fn offset_for(&self, channel: usize) -> f64 {
        match self.offset.as_slice() {
            [single] => *single,
            many => many.get(channel).copied().unwrap_or(0.0),
        }
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if self.offset.len() != 1 && self.offset.len() != shape.channels {
            return Err(Error::Config(format!(
                "offset has {} entries for a {}-channel latent",
                self.offset.len(),
                shape.channels
            )));
        }
        Ok(())
    }

    fn velocity_from_value(&self, value: &LatentTensor, c: &PromptId) -> Result<LatentTensor> {
        let target = match c.as_str() {
            "src" | "null" => false,
            "tar" => true,
            _ => return Err(unknown(c)),
        };
        let s = value.shape();
        self.check(s)?;
        let (h, w) = (s.height, s.width);
        let mut data = Vec::with_capacity(s.len());
        for ch in 0..s.channels {
            let plane = value.channel(ch);
            let off = self.offset_for(ch);
            for y in 0..h {
                for x in 0..w {
                    let centre = plane[y * w + x] as f64;
                    let mut mean = self.base;
                    if target && self.rect.contains(y, x) {
                        mean += off;
                    }
                    let mut lap = 0.0;
                    if self.diffusion != 0.0 {
                        if y > 0 {
                            lap += plane[(y - 1) * w + x] as f64 - centre;
                        }
                        if y + 1 < h {
                            lap += plane[(y + 1) * w + x] as f64 - centre;
                        }
                        if x > 0 {
                            lap += plane[y * w + x - 1] as f64 - centre;
                        }
                        if x + 1 < w {
                            lap += plane[y * w + x + 1] as f64 - centre;
                        }
                    }
                    data.push((self.kappa * (centre - mean) - self.diffusion * lap) as f32);
                }
            }
        }
        LatentTensor::new(s, data)
    }
}

impl VelocityProvider for TwoBlobProvider {
    fn conditionings(&self) -> Vec<PromptId> {
        vec![PromptId::src(), PromptId::tar(), PromptId::null()]
    }

    fn evaluate(&self, x: &LatentTensor, _t: f64, c: &PromptId) -> Result<LatentTensor> {
        self.velocity_from_value(x, c)
    }

    fn supports_values(&self) -> bool {
        true
    }

    fn evaluate_with_values(
        &self,
        x: &LatentTensor,
        _t: f64,
        c: &PromptId,
    ) -> Result<(LatentTensor, LatentTensor)> {
        Ok((self.velocity_from_value(x, c)?, x.clone()))
    }

    fn evaluate_modulated(
        &self,
        x: &LatentTensor,
        _t: f64,
        c: &PromptId,
        hook: &ValueHook<'_>,
    ) -> Result<LatentTensor> {
        let value = hook(x)?;
        ensure_same_shape(x.shape(), value.shape(), "modulated value")?;
        self.velocity_from_value(&value, c)
    }
}

/// On-disk description of a recorded velocity grid.
#[derive(Debug, Clone, Deserialize)]
pub struct GridManifest {
    pub conditionings: Vec<PromptId>,
    pub steps: usize,
    /// `"<conditioning>/<step>"` to an NPY path relative to the manifest.
    pub files: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub latent_shape: Option<[usize; 3]>,
}

/// Replays recorded velocities keyed by `(conditioning, step)`.
///
/// A query at time `t` returns the tensor for the nearest uniform step
/// `round((1 - t) * steps)`. The input latent is ignored apart from a shape check,
/// so this provider has no value tensors to modulate.
#[derive(Debug, Clone)]
pub struct GridProvider {
    conditionings: Vec<PromptId>,
    steps: usize,
    shape: Shape,
    velocities: HashMap<(PromptId, usize), LatentTensor>,
}

impl GridProvider {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: GridManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, root)
    }

    pub fn from_manifest(manifest: &GridManifest, root: &Path) -> Result<Self> {
        if manifest.steps == 0 {
            return Err(Error::Config("grid manifest declares zero steps".into()));
        }
        if manifest.conditionings.is_empty() {
            return Err(Error::Config(
                "grid manifest declares no conditionings".into(),
            ));
        }
        let mut velocities = HashMap::new();
        let mut shape = manifest.latent_shape.map(|[c, h, w]| Shape::new(c, h, w));
        for c in &manifest.conditionings {
            for step in 0..manifest.steps {
                let key = format!("{c}/{step}");
                let rel = manifest.files.get(&key).ok_or_else(|| {
                    Error::Config(format!("grid manifest is missing key '{key}'"))
                })?;
                let tensor = read_tensor(root.join(rel))?;
                match shape {
                    None => shape = Some(tensor.shape()),
                    Some(s) => {
                        ensure_same_shape(s, tensor.shape(), &format!("grid entry '{key}'"))?
                    }
                }
                velocities.insert((c.clone(), step), tensor);
            }
        }
        Ok(Self {
            conditionings: manifest.conditionings.clone(),
            steps: manifest.steps,
            shape: shape.expect("at least one entry was loaded"),
            velocities,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn step_for(&self, t: f64) -> usize {
        let i = ((1.0 - t) * self.steps as f64).round();
        (i.max(0.0) as usize).min(self.steps - 1)
    }
}

impl VelocityProvider for GridProvider {
    fn conditionings(&self) -> Vec<PromptId> {
        self.conditionings.clone()
    }

    fn evaluate(&self, x: &LatentTensor, t: f64, c: &PromptId) -> Result<LatentTensor> {
        ensure_same_shape(x.shape(), self.shape, "grid provider input")?;
        self.velocities
            .get(&(c.clone(), self.step_for(t)))
            .cloned()
            .ok_or_else(|| unknown(c))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MeanSpec {
    Constant(f32),
    File(PathBuf),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyticParams {
    means: BTreeMap<PromptId, MeanSpec>,
    #[serde(default)]
    epsilon: Option<f64>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl AnalyticProvider {
    /// Loads `{"means": {"src": 0.0, "tar": "tar.npy", ...}, "epsilon": 1e-4}`.
    pub fn load(params_path: impl AsRef<Path>) -> Result<Self> {
        let path = params_path.as_ref();
        let params: AnalyticParams = read_json(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        let means = params
            .means
            .into_iter()
            .map(|(c, spec)| {
                let field = match spec {
                    MeanSpec::Constant(v) if v.is_finite() => MeanField::Constant(v),
                    MeanSpec::Constant(v) => {
                        return Err(Error::Config(format!("mean for '{c}' is not finite: {v}")))
                    }
                    MeanSpec::File(p) => MeanField::Tensor(read_tensor(root.join(p))?),
                };
                Ok((c, field))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let mut provider = AnalyticProvider::new(means);
        if let Some(eps) = params.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!(
                    "epsilon must be positive, got {eps}"
                )));
            }
            provider.epsilon = eps;
        }
        Ok(provider)
    }
}

impl TwoBlobProvider {
    pub fn load(params_path: impl AsRef<Path>) -> Result<Self> {
        let p: TwoBlobProvider = read_json(params_path.as_ref())?;
        if p.offset.is_empty() {
            return Err(Error::Config("two-blob offset must not be empty".into()));
        }
        Ok(p)
    }
}

/// Parses `analytic:<params.json>`, `twoblob:<params.json>`, or a grid manifest path.
pub fn load_provider(spec: &str) -> Result<Box<dyn VelocityProvider>> {
    if let Some(p) = spec.strip_prefix("analytic:") {
        Ok(Box::new(AnalyticProvider::load(p)?))
    } else if let Some(p) = spec.strip_prefix("twoblob:") {
        Ok(Box::new(TwoBlobProvider::load(p)?))
    } else {
        Ok(Box::new(GridProvider::load(spec)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{draw_noise, euler_integrate};
    use crate::io::write_tensor;

    #[test]
    fn analytic_euler_lands_on_mean() {
        let shape = Shape::new(2, 4, 4);
        let mu = draw_noise(shape, 11);
        let p = AnalyticProvider::uniform(MeanField::Tensor(mu.clone()));
        let x1 = draw_noise(shape, 12);
        let x0 = euler_integrate(&p, &x1, &PromptId::src(), 28).unwrap();
        assert!(x0.max_abs_diff(&mu).unwrap() < 1e-5);
    }

    #[test]
    fn analytic_unknown_conditioning() {
        let p = AnalyticProvider::new(BTreeMap::from([(
            PromptId::src(),
            MeanField::Constant(0.0),
        )]));
        let x = LatentTensor::zeros(Shape::new(1, 1, 1)).unwrap();
        assert!(matches!(
            p.evaluate(&x, 0.5, &PromptId::tar()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn analytic_epsilon_clamps_time() {
        let p = AnalyticProvider::uniform(MeanField::Constant(0.0));
        let x = LatentTensor::filled(Shape::new(1, 1, 1), 1.0).unwrap();
        let v = p.evaluate(&x, 0.0, &PromptId::src()).unwrap();
        assert_eq!(v.data()[0], 1e4);
    }

    #[test]
    fn two_blob_difference_is_confined() {
        let p = TwoBlobProvider {
            kappa: 1.0,
            diffusion: 0.3,
            base: 0.0,
            rect: Rect {
                top: 1,
                left: 2,
                height: 2,
                width: 3,
            },
            offset: vec![3.0, 4.0],
        };
        let x = draw_noise(Shape::new(2, 5, 6), 3);
        let vs = p.evaluate(&x, 0.5, &PromptId::src()).unwrap();
        let vt = p.evaluate(&x, 0.5, &PromptId::tar()).unwrap();
        for c in 0..2 {
            for y in 0..5 {
                for xx in 0..6 {
                    let d = vt.get(c, y, xx) - vs.get(c, y, xx);
                    if p.rect.contains(y, xx) {
                        let want = -[3.0, 4.0][c];
                        assert!((d - want).abs() < 1e-5, "{d} vs {want}");
                    } else {
                        assert_eq!(d, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn grid_round_trip_and_missing_key() {
        let dir = tempfile::tempdir().unwrap();
        let shape = Shape::new(1, 2, 2);
        let mut files = serde_json::Map::new();
        for c in ["src", "tar"] {
            for step in 0..3 {
                let name = format!("{c}_{step}.npy");
                let t =
                    LatentTensor::filled(shape, step as f32 + if c == "tar" { 10.0 } else { 0.0 })
                        .unwrap();
                write_tensor(&t, dir.path().join(&name)).unwrap();
                files.insert(format!("{c}/{step}"), name.into());
            }
        }
        let manifest = serde_json::json!({
            "conditionings": ["src", "tar"],
            "steps": 3,
            "files": files,
        });
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, manifest.to_string()).unwrap();
        let g = GridProvider::load(&mpath).unwrap();
        let x = LatentTensor::zeros(shape).unwrap();
        assert_eq!(
            g.evaluate(&x, 1.0, &PromptId::src()).unwrap().data()[0],
            0.0
        );
        assert_eq!(
            g.evaluate(&x, 1.0 - 1.0 / 3.0, &PromptId::tar())
                .unwrap()
                .data()[0],
            11.0
        );
        assert_eq!(
            g.evaluate(&x, 0.0, &PromptId::src()).unwrap().data()[0],
            2.0
        );
        assert!(!g.supports_values());

        let mut broken = manifest.clone();
        broken["files"].as_object_mut().unwrap().remove("tar/1");
        std::fs::write(&mpath, broken.to_string()).unwrap();
        let err = GridProvider::load(&mpath).unwrap_err();
        assert!(err.to_string().contains("tar/1"), "{err}");
    }

    #[test]
    fn grid_rejects_shape_drift() {
        let dir = tempfile::tempdir().unwrap();
        write_tensor(
            &LatentTensor::zeros(Shape::new(1, 2, 2)).unwrap(),
            dir.path().join("a.npy"),
        )
        .unwrap();
        write_tensor(
            &LatentTensor::zeros(Shape::new(1, 2, 3)).unwrap(),
            dir.path().join("b.npy"),
        )
        .unwrap();
        let manifest = GridManifest {
            conditionings: vec![PromptId::src()],
            steps: 2,
            files: [
                ("src/0".to_string(), "a.npy".into()),
                ("src/1".to_string(), "b.npy".into()),
            ]
            .into(),
            latent_shape: None,
        };
        let err = GridProvider::from_manifest(&manifest, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");

        let declared = GridManifest {
            files: [
                ("src/0".to_string(), "a.npy".into()),
                ("src/1".to_string(), "a.npy".into()),
            ]
            .into(),
            latent_shape: Some([2, 2, 2]),
            ..manifest
        };
        assert!(GridProvider::from_manifest(&declared, dir.path()).is_err());
    }

    #[test]
    fn load_provider_dispatch() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        std::fs::write(&a, r#"{"means": {"src": 0.5, "tar": 1.0}}"#).unwrap();
        let p = load_provider(&format!("analytic:{}", a.display())).unwrap();
        assert!(p.has_conditioning(&PromptId::tar()));
        assert!(!p.has_conditioning(&PromptId::null()));

        let b = dir.path().join("b.json");
        std::fs::write(
            &b,
            r#"{"rect": {"top": 0, "left": 0, "height": 1, "width": 1}, "offset": [1.0]}"#,
        )
        .unwrap();
        let p = load_provider(&format!("twoblob:{}", b.display())).unwrap();
        assert!(p.supports_values());

        assert!(matches!(
            load_provider(dir.path().join("missing.json").to_str().unwrap()),
            Err(Error::Io { .. })
        ));
    }
}
