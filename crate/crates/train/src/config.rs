//! Run configuration: a TOML file with one table per section. Unknown keys
//! are rejected; `section.key=value` overrides are applied before parsing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ukan_core::diffusion::NoiseSchedule;
use ukan_core::kan::SplineSpec;
use ukan_core::nn::Activation;
use ukan_core::{MixerKind, Profile, UkanConfig};
use ukan_data::{AugmentConfig, Rotation};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Segment,
    Diffuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    None,
    Flips,
    /// Flips and right-angle rotations.
    Full,
    /// Flips and rotations by any angle.
    Arbitrary,
}

impl AugmentMode {
    pub fn to_config(self) -> AugmentConfig {
        match self {
            AugmentMode::None => AugmentConfig::NONE,
            AugmentMode::Flips => AugmentConfig::FLIPS,
            AugmentMode::Full => AugmentConfig::SEGMENTATION,
            AugmentMode::Arbitrary => AugmentConfig { rotation: Rotation::Arbitrary, ..AugmentConfig::FLIPS },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `s`, `base` or `l`.
    pub profile: String,
    /// Mixer used by every token layer unless `layers` is given.
    pub block_kind: String,
    pub num_layers: usize,
    /// Per-layer mixers (`kan`, `mlp`, `identity`); overrides `block_kind` and `num_layers`.
    pub layers: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv_stages: Option<usize>,
    /// Explicit widths; empty means the profile's.
    pub conv_channels: Vec<usize>,
    pub kan_dims: Vec<usize>,
    pub patch_stride: usize,
    pub grid_size: usize,
    pub spline_order: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    /// `identity`, `relu` or `silu`.
    pub mlp_activation: String,
    pub time_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let spline = SplineSpec::default();
        Self {
            profile: "base".into(),
            block_kind: "kan".into(),
            num_layers: 3,
            layers: Vec::new(),
            conv_stages: None,
            conv_channels: Vec::new(),
            kan_dims: Vec::new(),
            patch_stride: 2,
            grid_size: spline.grid_size,
            spline_order: spline.order,
            grid_min: spline.grid_min,
            grid_max: spline.grid_max,
            mlp_activation: "identity".into(),
            time_embed_dim: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory with `images/` (and `masks/`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Existing manifest; built from `root` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub train_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentMode>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            manifest: None,
            height: 256,
            width: 256,
            channels: 3,
            train_ratio: 0.8,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { batch_size: 8, lr: 1e-4, lr_min: 1e-5, epochs: None, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub bce_weight: f64,
    pub dice_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { bce_weight: 0.5, dice_weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Chains sampled together by `generate`.
    pub sample_batch: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 0.02, sample_batch: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/ukan") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a parsed table, creating sections as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| TrainError::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(TrainError::Config(format!("bad override key {key:?}")));
    }
    let mut t = table;
    for part in &path[..path.len() - 1] {
        let entry = t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| TrainError::Config(format!("override {key:?}: {part:?} is not a section")))?;
    }
    t.insert(path[path.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

impl TrainConfig {
    /// Defaults for `task`.
    pub fn new(task: Task) -> Self {
        Self {
            task,
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            diffusion: DiffusionConfig::default(),
            output: OutputConfig::default(),
        }
        .resolved()
    }

    /// Parses, applies overrides, fills task-dependent defaults and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| TrainError::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: TrainConfig = table.try_into().map_err(|e| TrainError::Config(format!("config: {e}")))?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        Self::parse(&text, overrides)
    }

    /// Applies overrides to an already-built config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::parse(&self.to_toml(), overrides)
    }

    /// Every optional key replaced by its task default.
    pub fn resolved(mut self) -> Self {
        let seg = self.task == Task::Segment;
        self.optim.epochs.get_or_insert(if seg { 400 } else { 1000 });
        self.data.augment.get_or_insert(if seg { AugmentMode::Full } else { AugmentMode::Flips });
        self.model.conv_stages.get_or_insert(3);
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn epochs(&self) -> usize {
        self.optim.epochs.unwrap_or(0)
    }

    pub fn augment(&self) -> AugmentConfig {
        self.data.augment.unwrap_or(AugmentMode::None).to_config()
    }

    pub fn layers(&self) -> Result<Vec<MixerKind>> {
        let names: Vec<String> = if self.model.layers.is_empty() {
            vec![self.model.block_kind.clone(); self.model.num_layers]
        } else {
            self.model.layers.clone()
        };
        names
            .iter()
            .map(|n| n.parse().map_err(|e: ukan_core::TensorError| TrainError::Config(e.to_string())))
            .collect()
    }

    pub fn model_config(&self) -> Result<UkanConfig> {
        let m = &self.model;
        let profile: Profile = m.profile.parse().map_err(|e: ukan_core::TensorError| TrainError::Config(e.to_string()))?;
        let mut cfg = match self.task {
            Task::Segment => {
                let mut c = UkanConfig::segmentation(profile);
                c.in_channels = self.data.channels;
                c
            }
            Task::Diffuse => {
                let mut c = UkanConfig::diffusion(profile, self.data.channels);
                c.time_embed_dim = Some(m.time_embed_dim);
                c
            }
        };
        if !m.conv_channels.is_empty() {
            cfg.conv_channels = m.conv_channels.clone();
        }
        if !m.kan_dims.is_empty() {
            cfg.kan_dims = m.kan_dims.clone();
        }
        if let Some(l) = m.conv_stages {
            if l > cfg.conv_channels.len() {
                return Err(TrainError::Config(format!(
                    "conv_stages = {l} but only {} conv widths are configured",
                    cfg.conv_channels.len()
                )));
            }
            cfg = cfg.with_conv_stages(l);
        }
        cfg.layers = self.layers()?;
        cfg.patch_stride = m.patch_stride;
        cfg.spline = SplineSpec::new(m.grid_size, m.spline_order, m.grid_min, m.grid_max)?;
        cfg.mlp_activation = match m.mlp_activation.as_str() {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "silu" => Activation::Silu,
            other => return Err(TrainError::Config(format!("unknown mlp_activation {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let d = &self.diffusion;
        Ok(NoiseSchedule::linear(d.steps, d.beta_start, d.beta_end)?)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("optim.lr = {} must be positive", o.lr));
        }
        if !(o.lr_min >= 0.0 && o.lr_min <= o.lr) {
            return bad(format!("optim.lr_min = {} must be in [0, lr]", o.lr_min));
        }
        if o.batch_size == 0 {
            return bad("optim.batch_size must be at least 1".into());
        }
        if self.epochs() == 0 {
            return bad("optim.epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            return bad("optim.beta1/beta2 must be in [0, 1) and eps positive".into());
        }
        let d = &self.data;
        if !(d.channels == 1 || d.channels == 3) {
            return bad(format!("data.channels = {} must be 1 or 3", d.channels));
        }
        if !(d.train_ratio > 0.0 && d.train_ratio <= 1.0) {
            return bad(format!("data.train_ratio = {} must be in (0, 1]", d.train_ratio));
        }
        if self.loss.bce_weight < 0.0 || self.loss.dice_weight < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        if self.diffusion.sample_batch == 0 {
            return bad("diffusion.sample_batch must be at least 1".into());
        }
        let model = self.model_config()?;
        model.check_input(&[1, d.channels, d.height, d.width])?;
        if self.task == Task::Diffuse {
            self.schedule()?;
        }
        Ok(())
    }
}
