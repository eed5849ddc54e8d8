use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::field::{HiddenSpec, ModelConfig};
use crate::objectives::LossWeights;
use crate::optimization::{FitConfig, TrainConfig};
use crate::reconstruction_geometry::CorrespondConfig;
use crate::shape_data::SamplingConfig;

/// Model architecture: a named preset with optional field overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `default`, `toy` or `tiny`.
    pub preset: Option<String>,
    pub code_dim: Option<usize>,
    pub feature_dim: Option<usize>,
    pub template_hidden: Option<HiddenSpec>,
    pub deform_hidden: Option<HiddenSpec>,
    pub refine_hidden: Option<HiddenSpec>,
    pub hyper_hidden: Option<HiddenSpec>,
    pub omega0: Option<f64>,
    pub refinement: Option<bool>,
}

impl ModelSection {
    pub fn build(&self, m: usize) -> Result<ModelConfig> {
        let mut c = match self.preset.as_deref().unwrap_or("default") {
            "default" => ModelConfig::new(m),
            "tiny" => ModelConfig::tiny(m),
            "toy" => ModelConfig::toy(m),
            other => return Err(Error::Config(format!("unknown model preset '{other}'"))),
        };
        if let Some(v) = self.code_dim {
            c.code_dim = v;
        }
        if let Some(v) = self.feature_dim {
            c.feature_dim = v;
        }
        if let Some(v) = self.template_hidden {
            c.template_hidden = v;
        }
        if let Some(v) = self.deform_hidden {
            c.deform_hidden = v;
        }
        if let Some(v) = self.refine_hidden {
            c.refine_hidden = v;
        }
        if let Some(v) = self.hyper_hidden {
            c.hyper_hidden = v;
        }
        if let Some(v) = self.omega0 {
            c.omega0 = v;
        }
        if let Some(v) = self.refinement {
            c.refinement = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Every tunable of every subcommand; sections mirror the library types.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    /// Training weights; fitting uses `fit.preset`.
    pub weights: LossWeights,
    pub sampling: SamplingConfig,
    pub fit: FitConfig,
    pub eval: EvalConfig,
    pub correspond: CorrespondConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let parsed = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|msg| Error::Parse {
            path: path.display().to_string(),
            msg,
        })
    }
}
