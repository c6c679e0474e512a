//! Final verdict for a finished session.

use memscreen_core::fusion::{fuse_pair, FusionDecision, FusionOutcome};
use memscreen_core::game::{GameSession, Phase};
use memscreen_core::models::ModelId;
use serde::Serialize;
use thiserror::Error;

pub const PASSED_TEXT: &str = "Passed: no dementia indication";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecisionError {
    #[error("no decision yet: session is in phase {0}")]
    NotReady(Phase),
    #[error("session was abandoned; no decision is available")]
    Abandoned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// Both levels cleared without any prediction.
    Passed,
    /// Only one model ran; its label decides, unqualified.
    SingleModel { source: ModelId, outcome: FusionOutcome },
    Fused(FusionDecision),
}

impl Verdict {
    pub fn text(&self) -> &'static str {
        match self {
            Verdict::Passed => PASSED_TEXT,
            Verdict::SingleModel { outcome, .. } => outcome.text(),
            Verdict::Fused(d) => d.outcome.text(),
        }
    }

    pub fn caveat(&self) -> Option<String> {
        match self {
            Verdict::SingleModel { source, .. } => {
                Some(format!("based on the {source} model alone; the other model was not run"))
            }
            _ => None,
        }
    }
}

fn single(source: ModelId, pred: u8) -> Verdict {
    let outcome = if pred == 1 {
        FusionOutcome::Demented
    } else {
        FusionOutcome::NonDemented
    };
    Verdict::SingleModel { source, outcome }
}

pub fn decide(session: &GameSession) -> Result<Verdict, DecisionError> {
    match session.phase() {
        Phase::Completed => {}
        Phase::Failed => return Err(DecisionError::Abandoned),
        other => return Err(DecisionError::NotReady(other)),
    }
    Ok(match (session.health_prediction(), session.face_prediction()) {
        (None, None) => Verdict::Passed,
        (Some(h), Some(f)) => Verdict::Fused(fuse_pair(h, f).expect("engine stores binary predictions")),
        (None, Some(f)) => single(ModelId::Mod2D, f),
        (Some(h), None) => single(ModelId::Mod1D, h),
    })
}
