//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::Path;

use radarfall_core::models::{HvraeConfig, LatentMode};
use radarfall_core::preprocess::{PatternShape, RadarPose};
use radarfall_core::simulator::{adl_recipe, benchmark_recipe, single_recipe, MotionKind, Recipe, SimulatorConfig};
use radarfall_core::DetectionThresholds;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarSection {
    /// Degrees; converted to radians at this boundary only.
    pub tilt_deg: f64,
    pub height: f64,
}

impl Default for RadarSection {
    fn default() -> Self {
        Self { tilt_deg: 10.0, height: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternSection {
    pub frames: usize,
    pub points: usize,
    /// Window stride when building the training corpus.
    pub train_stride: usize,
    /// Window stride when scoring; 1 scores every frame.
    pub score_stride: usize,
}

impl Default for PatternSection {
    fn default() -> Self {
        Self { frames: 10, points: 64, train_stride: 1, score_stride: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeEntry {
    pub motion: MotionKind,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// `adl`, `single`, `benchmark` or `custom` (uses `motions`).
    pub preset: String,
    /// Multiplier for the `adl` preset.
    pub scale: usize,
    pub motions: Vec<RecipeEntry>,
    pub simulator: SimulatorConfig,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            preset: "benchmark".into(),
            scale: 20,
            motions: Vec::new(),
            simulator: SimulatorConfig::default(),
        }
    }
}

impl SimulateSection {
    pub fn recipe(&self) -> Result<Recipe, UsageError> {
        match self.preset.as_str() {
            "adl" => Ok(adl_recipe(self.scale)),
            "single" => Ok(single_recipe()),
            "benchmark" => Ok(benchmark_recipe()),
            "custom" => Ok(self.motions.iter().map(|e| (e.motion, e.count)).collect()),
            other => Err(UsageError(format!(
                "unknown recipe preset '{other}' (adl, single, benchmark, custom)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Frames either side of a label; derived from the frame rate when absent.
    pub half_window: Option<u64>,
    pub false_alarm_budgets: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { half_window: None, false_alarm_budgets: vec![0, 2, 5] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    pub latent_mode: LatentMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub target_id: Option<i64>,
    pub radar: RadarSection,
    pub pattern: PatternSection,
    /// `frames`, `points` and `seed` here are overwritten from the sections above.
    pub model: HvraeConfig,
    pub scoring: ScoringSection,
    pub detection: DetectionThresholds,
    pub simulate: SimulateSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {}", path.display(), e.message())))?;
        Ok(cfg)
    }

    pub fn pose(&self) -> anyhow::Result<RadarPose> {
        Ok(RadarPose::from_degrees(self.radar.tilt_deg, self.radar.height)?)
    }

    pub fn require_seed(&self) -> Result<u64, UsageError> {
        self.seed
            .ok_or_else(|| UsageError("a seed is required (--seed or `seed` in the config)".into()))
    }

    pub fn train_shape(&self) -> PatternShape {
        PatternShape {
            frames: self.pattern.frames,
            points: self.pattern.points,
            stride: self.pattern.train_stride,
        }
    }

    /// Model settings with the shape and seed sections folded in.
    pub fn model_config(&self) -> Result<HvraeConfig, UsageError> {
        Ok(HvraeConfig {
            frames: self.pattern.frames,
            points: self.pattern.points,
            seed: self.require_seed()?,
            ..self.model.clone()
        })
    }

    /// The frozen copy written next to every output.
    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# config could not be serialized: {e}\n"))
    }
}
