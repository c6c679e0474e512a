//! Rule-based combination of the health and face predictions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEALTH_WEIGHT: f64 = 0.3;
pub const FACE_WEIGHT: f64 = 0.7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("missing {0} prediction")]
    Missing(&'static str),
    #[error("{field} prediction must be 0 or 1, got {value}")]
    NotBinary { field: &'static str, value: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionOutcome {
    Demented,
    DementedHighProbability,
    NonDementedHighProbability,
    NonDemented,
}

impl FusionOutcome {
    pub const ALL: [FusionOutcome; 4] = [
        FusionOutcome::Demented,
        FusionOutcome::DementedHighProbability,
        FusionOutcome::NonDementedHighProbability,
        FusionOutcome::NonDemented,
    ];

    pub fn is_demented(self) -> bool {
        matches!(self, FusionOutcome::Demented | FusionOutcome::DementedHighProbability)
    }

    pub fn is_qualified(self) -> bool {
        matches!(
            self,
            FusionOutcome::DementedHighProbability | FusionOutcome::NonDementedHighProbability
        )
    }

    pub fn text(self) -> &'static str {
        match self {
            FusionOutcome::Demented => "Demented",
            FusionOutcome::DementedHighProbability => "Demented with a high probability",
            FusionOutcome::NonDementedHighProbability => "Non-Demented with a high probability",
            FusionOutcome::NonDemented => "Non-Demented",
        }
    }
}

impl fmt::Display for FusionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionInput {
    pub health_pred: Option<u8>,
    pub face_pred: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionDecision {
    pub outcome: FusionOutcome,
    /// `0.3 * health + 0.7 * face`; shown to users, never decides.
    pub weighted_score: f64,
    pub health_pred: u8,
    pub face_pred: u8,
}

fn binary(field: &'static str, v: Option<u8>) -> Result<u8, FusionError> {
    match v {
        None => Err(FusionError::Missing(field)),
        Some(b @ (0 | 1)) => Ok(b),
        Some(value) => Err(FusionError::NotBinary { field, value }),
    }
}

pub fn fuse(input: FusionInput) -> Result<FusionDecision, FusionError> {
    let h = binary("health", input.health_pred)?;
    let f = binary("face", input.face_pred)?;
    let outcome = match (h, f) {
        (1, 1) => FusionOutcome::Demented,
        (0, 1) => FusionOutcome::DementedHighProbability,
        (1, 0) => FusionOutcome::NonDementedHighProbability,
        _ => FusionOutcome::NonDemented,
    };
    Ok(FusionDecision {
        outcome,
        weighted_score: HEALTH_WEIGHT * f64::from(h) + FACE_WEIGHT * f64::from(f),
        health_pred: h,
        face_pred: f,
    })
}

pub fn fuse_pair(health_pred: u8, face_pred: u8) -> Result<FusionDecision, FusionError> {
    fuse(FusionInput {
        health_pred: Some(health_pred),
        face_pred: Some(face_pred),
    })
}
