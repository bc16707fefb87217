//! Versioned JSON model files covering every fitted model kind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clmm::{ClmFit, ClmmFit};
use crate::data::{Design, Schema};
use crate::error::{OmerfError, Result};
use crate::link::ThresholdVector;
use crate::omerf::{latent_from_probs, OmerfModel, OrdinalInitializer, OrdinalPrediction};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "clm")]
    Clm,
    #[serde(rename = "clmm")]
    Clmm,
    #[serde(rename = "ordforest-init")]
    OrdforestInit,
    #[serde(rename = "omerf")]
    Omerf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Clm, ModelKind::Clmm, ModelKind::OrdforestInit, ModelKind::Omerf];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Clm => "clm",
            ModelKind::Clmm => "clmm",
            ModelKind::OrdforestInit => "ordforest-init",
            ModelKind::Omerf => "omerf",
        }
    }

    /// Stable index used when deriving per-model seeds.
    pub fn stream(self) -> u64 {
        self as u64
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = OmerfError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                OmerfError::validation(format!(
                    "unknown model '{s}' (expected clm, clmm, ordforest-init or omerf)"
                ))
            })
    }
}

/// The probability forest used on its own, with the marginal thresholds
/// kept so a latent score can be reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdforestModel {
    pub initializer: OrdinalInitializer,
    pub theta0: ThresholdVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "fit")]
pub enum FittedModel {
    #[serde(rename = "clm")]
    Clm(ClmFit),
    #[serde(rename = "clmm")]
    Clmm(ClmmFit),
    #[serde(rename = "ordforest-init")]
    OrdforestInit(OrdforestModel),
    #[serde(rename = "omerf")]
    Omerf(Box<OmerfModel>),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Clm(_) => ModelKind::Clm,
            FittedModel::Clmm(_) => ModelKind::Clmm,
            FittedModel::OrdforestInit(_) => ModelKind::OrdforestInit,
            FittedModel::Omerf(_) => ModelKind::Omerf,
        }
    }

    pub fn predict(&self, design: &Design) -> Result<OrdinalPrediction> {
        match self {
            FittedModel::Clm(fit) => Ok(OrdinalPrediction::from_latent(&fit.theta, fit.latent(&design.x)?)),
            FittedModel::Clmm(fit) => {
                let latent = fit.latent(&design.x, &design.z, &design.group_labels, None)?;
                Ok(OrdinalPrediction::from_latent(&fit.theta, latent))
            }
            FittedModel::OrdforestInit(m) => {
                let probs = m.initializer.predict_proba(&design.x)?;
                let latent = probs.iter().map(|p| latent_from_probs(p, &m.theta0)).collect();
                let class = probs.iter().map(|p| crate::link::argmax_category(p)).collect();
                Ok(OrdinalPrediction { latent, probs, class })
            }
            FittedModel::Omerf(m) => m.predict_design(design),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub n_categories: u32,
    /// Column roles the model was fitted with; reused to read prediction data.
    pub schema: Schema,
    pub model: FittedModel,
}

impl ModelFile {
    pub fn new(model: FittedModel, schema: Schema, n_categories: u32) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            n_categories,
            schema,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| OmerfError::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| OmerfError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| OmerfError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(OmerfError::Schema(format!(
                "{}: unsupported model format version {:?} (expected {MODEL_FORMAT_VERSION})",
                path.display(),
                version
            )));
        }
        Ok(serde_json::from_value(value)?)
    }
}
