//! The two loaded models and the health scaler, read-only after startup.

use std::path::{Path, PathBuf};

use memscreen_core::health::{HealthRecord, ScalerParams, FEATURE_COUNT};
use memscreen_core::models::{self, load_weights_as, save_weights, ModelError, ModelId, PredictionResult};
use memscreen_nn::ModelGraph;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Weights {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("scaler {path}: {reason}")]
    Scaler { path: PathBuf, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelInfo {
    pub model: ModelId,
    pub input_shape: Vec<usize>,
    pub parameters: usize,
    /// CRC-32 of the serialized weights, hex.
    pub checksum: String,
}

pub struct ModelRegistry {
    health: ModelGraph<f32>,
    scaler: ScalerParams,
    face: ModelGraph<f32>,
    info: [ModelInfo; 2],
}

fn info_for(model: ModelId, graph: &ModelGraph<f32>, bytes: &[u8]) -> ModelInfo {
    ModelInfo {
        model,
        input_shape: graph.input_shape().to_vec(),
        parameters: graph.param_count(),
        checksum: format!("{:08x}", crc32fast::hash(bytes)),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, RegistryError> {
    std::fs::read(path).map_err(|source| RegistryError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_scaler(path: &Path) -> Result<ScalerParams, RegistryError> {
    let bytes = read(path)?;
    let bad = |reason: String| RegistryError::Scaler {
        path: path.to_path_buf(),
        reason,
    };
    let scaler: ScalerParams = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    if scaler.mean.len() != FEATURE_COUNT || scaler.std.len() != FEATURE_COUNT {
        return Err(bad(format!("expected {FEATURE_COUNT} features")));
    }
    if scaler.std.iter().chain(&scaler.mean).any(|v| !v.is_finite()) || scaler.std.iter().any(|&s| s <= 0.0) {
        return Err(bad("non-finite or non-positive statistics".into()));
    }
    Ok(scaler)
}

impl ModelRegistry {
    pub fn new(health: ModelGraph<f32>, scaler: ScalerParams, face: ModelGraph<f32>) -> Result<Self, RegistryError> {
        let h = save_weights(&health)?;
        let f = save_weights(&face)?;
        Self::checked(health, scaler, face, &h, &f)
    }

    fn checked(
        health: ModelGraph<f32>,
        scaler: ScalerParams,
        face: ModelGraph<f32>,
        health_bytes: &[u8],
        face_bytes: &[u8],
    ) -> Result<Self, RegistryError> {
        for (id, g) in [(ModelId::Mod1D, &health), (ModelId::Mod2D, &face)] {
            if models::architecture_of(g) != Some(id) {
                return Err(ModelError::Manifest(format!("registry slot {id} holds a different architecture")).into());
            }
        }
        let info = [
            info_for(ModelId::Mod1D, &health, health_bytes),
            info_for(ModelId::Mod2D, &face, face_bytes),
        ];
        Ok(Self {
            health,
            scaler,
            face,
            info,
        })
    }

    pub fn load(weights_1d: &Path, scaler: &Path, weights_2d: &Path) -> Result<Self, RegistryError> {
        let h = read(weights_1d)?;
        let health = load_weights_as(&h, ModelId::Mod1D).map_err(|source| RegistryError::Weights {
            path: weights_1d.to_path_buf(),
            source,
        })?;
        let f = read(weights_2d)?;
        let face = load_weights_as(&f, ModelId::Mod2D).map_err(|source| RegistryError::Weights {
            path: weights_2d.to_path_buf(),
            source,
        })?;
        Self::checked(health, load_scaler(scaler)?, face, &h, &f)
    }

    pub fn predict_health(&self, record: &HealthRecord) -> Result<PredictionResult, ModelError> {
        models::predict_health(&self.health, record, &self.scaler)
    }

    pub fn predict_face(&self, image_bytes: &[u8]) -> Result<PredictionResult, ModelError> {
        models::predict_face(&self.face, image_bytes)
    }

    pub fn info(&self) -> &[ModelInfo] {
        &self.info
    }

    pub fn face_side(&self) -> usize {
        self.face.input_shape()[0]
    }
}
