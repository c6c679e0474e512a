//! Request handling independent of the HTTP layer. Every method runs
//! synchronously under the session's lock; the router calls them on the
//! blocking pool.

use std::sync::Arc;

use base64::Engine;
use memscreen_core::game::{write_log, EventKind, GameConfig, GameSession, SessionView, Transition};
use memscreen_core::health::{HealthError, HealthRecord};
use memscreen_core::image::MAX_IMAGE_BYTES;
use memscreen_core::models::{ModelError, ModelId, PredictionLabel, PredictionResult};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::clock::Clock;
use crate::error::ApiError;
use crate::flow::{decide, Verdict};
use crate::registry::{ModelInfo, ModelRegistry};
use crate::store::{lock, Entry, SessionStore, SharedEntry};

pub const HEALTH_FIELDS: [&str; 6] = ["age", "blood_oxygen", "heart_rate", "body_temp", "weight", "diabetic"];

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_id: String,
    pub view: SessionView,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventResponse {
    pub view: SessionView,
    /// Last phase change caused by this request, if any.
    pub transition: Option<Transition>,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub score: f64,
    pub label: PredictionLabel,
    pub model: ModelId,
    pub view: SessionView,
}

#[derive(Debug, Serialize)]
pub struct DecisionResponse {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub text: &'static str,
    pub caveat: Option<String>,
    pub health: Option<PredictionResult>,
    pub face: Option<PredictionResult>,
}

#[derive(Debug, Serialize)]
pub struct HealthzResponse {
    pub status: &'static str,
    pub version: &'static str,
    pub sessions: usize,
    pub models: Vec<ModelInfo>,
}

pub struct ScreeningService {
    registry: Arc<ModelRegistry>,
    store: SessionStore,
    clock: Arc<dyn Clock>,
    game: GameConfig,
}

fn parse_object(body: &[u8], allow_empty: bool) -> Result<Map<String, Value>, ApiError> {
    if allow_empty && body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::invalid("request body must be a JSON object", &[])),
        Err(e) => Err(ApiError::invalid(format!("malformed JSON: {e}"), &[])),
    }
}

fn optional_uint(body: &Map<String, Value>, field: &'static str, max: u64) -> Result<Option<u64>, ApiError> {
    match body.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => match v.as_u64() {
            Some(n) if n <= max => Ok(Some(n)),
            _ => Err(ApiError::invalid(format!("`{field}` must be an integer in 0..={max}"), &[field])),
        },
    }
}

fn response_for(entry: &Entry, transitions: Vec<Transition>) -> EventResponse {
    EventResponse {
        view: entry.session.view(),
        transition: transitions.last().copied(),
        transitions,
    }
}

/// Reads the six raw measurements, naming every missing or malformed field.
pub fn parse_health(body: &Map<String, Value>) -> Result<HealthRecord, ApiError> {
    let mut bad = Vec::new();
    let mut num = |field: &'static str| match body.get(field).and_then(Value::as_f64) {
        Some(v) if v.is_finite() => v,
        _ => {
            bad.push(field);
            f64::NAN
        }
    };
    let age = num("age");
    let blood_oxygen = num("blood_oxygen");
    let heart_rate = num("heart_rate");
    let body_temp = num("body_temp");
    let weight = num("weight");
    let diabetic = match body.get("diabetic") {
        Some(Value::Bool(b)) => u8::from(*b),
        Some(v) if v.as_u64() == Some(0) || v.as_u64() == Some(1) => v.as_u64().unwrap_or(0) as u8,
        _ => {
            bad.push("diabetic");
            0
        }
    };
    if !bad.is_empty() {
        return Err(ApiError::invalid(
            format!("missing or invalid health fields: {}", bad.join(", ")),
            &bad,
        ));
    }
    let record = HealthRecord {
        age,
        blood_oxygen,
        heart_rate,
        body_temp,
        weight,
        diabetic,
        dementia_label: None,
    };
    let checked = record
        .validate()
        .and_then(|_| memscreen_core::health::categorize(&record).map(|_| ()));
    match checked {
        Ok(()) => Ok(record),
        Err(e) => {
            let field = match &e {
                HealthError::NotFinite { field } | HealthError::NotBinary { field, .. } => *field,
                _ => "age",
            };
            Err(ApiError::invalid(e.to_string(), &[field]))
        }
    }
}

/// Image bytes from `{"image": "<base64>"}`, where the string may carry a
/// `data:image/png;base64,` style prefix.
pub fn parse_face(body: &Map<String, Value>) -> Result<Vec<u8>, ApiError> {
    let text = body
        .get("image")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::invalid("`image` must be a base64 string", &["image"]))?;
    let payload = match text.strip_prefix("data:") {
        Some(rest) => {
            let (meta, data) = rest
                .split_once(',')
                .ok_or_else(|| ApiError::invalid("malformed data URL", &["image"]))?;
            let mime = meta.strip_suffix(";base64").ok_or_else(|| {
                ApiError::invalid("data URL must be base64 encoded", &["image"])
            })?;
            if !matches!(mime, "image/png" | "image/jpeg" | "image/jpg") {
                return Err(ApiError::UnsupportedMedia(format!("media type `{mime}` is not accepted; use image/png or image/jpeg")));
            }
            data
        }
        None => text,
    };
    if payload.len() / 4 * 3 > MAX_IMAGE_BYTES + 3 {
        return Err(ApiError::TooLarge { limit: MAX_IMAGE_BYTES });
    }
    let compact: String = payload.chars().filter(|c| !c.is_ascii_whitespace()).collect();
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(compact.as_bytes())
        .map_err(|e| ApiError::invalid(format!("`image` is not valid base64: {e}"), &["image"]))?;
    if bytes.len() > MAX_IMAGE_BYTES {
        return Err(ApiError::TooLarge { limit: MAX_IMAGE_BYTES });
    }
    let png = bytes.starts_with(b"\x89PNG\r\n\x1a\n");
    let jpeg = bytes.starts_with(&[0xff, 0xd8, 0xff]);
    if !png && !jpeg {
        return Err(ApiError::UnsupportedMedia("image must be PNG or JPEG".into()));
    }
    Ok(bytes)
}

impl ScreeningService {
    pub fn new(registry: Arc<ModelRegistry>, game: GameConfig, session_ttl_ms: u64, clock: Arc<dyn Clock>) -> Self {
        Self {
            registry,
            store: SessionStore::new(session_ttl_ms),
            clock,
            game,
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    fn entry(&self, id: &str) -> Result<SharedEntry, ApiError> {
        self.store.get(id, self.now_ms()).ok_or(ApiError::SessionNotFound)
    }

    pub fn sweep(&self) -> usize {
        self.store.sweep(self.now_ms())
    }

    /// `{level?, seed?}`; an empty body starts at Level 1 with a random seed.
    pub fn create_session(&self, body: &[u8]) -> Result<SessionResponse, ApiError> {
        let body = parse_object(body, true)?;
        let level = optional_uint(&body, "level", 2)?.unwrap_or(1) as u8;
        if level == 0 {
            return Err(ApiError::invalid("`level` must be 1 or 2", &["level"]));
        }
        let seed = optional_uint(&body, "seed", u64::MAX)?.unwrap_or_else(|| OsRng.next_u64());
        let now = self.now_ms();
        let session = GameSession::new(self.game.clone(), level, seed, now)?;
        let view = session.view();
        let session_id = self.store.insert(Entry::new(session, now));
        log::info!("session {session_id} created at level {level}");
        Ok(SessionResponse { session_id, view })
    }

    pub fn view(&self, id: &str) -> Result<EventResponse, ApiError> {
        let shared = self.entry(id)?;
        let mut entry = lock(&shared);
        let t = entry.sync_clock(self.now_ms());
        Ok(response_for(&entry, t))
    }

    /// `{kind, card_index?}` with kind one of `flip`, `tick`, `advance`,
    /// `abandon`. Time and sequence numbers come from the server.
    pub fn post_event(&self, id: &str, body: &[u8]) -> Result<EventResponse, ApiError> {
        let body = parse_object(body, false)?;
        let kind = match body.get("kind").and_then(Value::as_str) {
            Some("flip") => match body.get("card_index").and_then(Value::as_u64) {
                Some(i) => Some(EventKind::Flip { card_index: i as usize }),
                None => return Err(ApiError::invalid("flip needs a non-negative `card_index`", &["card_index"])),
            },
            Some("tick") => None,
            Some("advance") => Some(EventKind::Advance),
            Some("abandon") => Some(EventKind::Abandon),
            Some(k @ ("health" | "face")) => {
                return Err(ApiError::invalid(
                    format!("`{k}` results are submitted through /api/sessions/{{id}}/{k}"),
                    &["kind"],
                ))
            }
            _ => return Err(ApiError::invalid("`kind` must be flip, tick, advance or abandon", &["kind"])),
        };
        let shared = self.entry(id)?;
        let mut entry = lock(&shared);
        let now = self.now_ms();
        let mut transitions = entry.sync_clock(now);
        if let Some(kind) = kind {
            transitions.extend(entry.apply(kind, now)?);
        }
        Ok(response_for(&entry, transitions))
    }

    pub fn submit_health(&self, id: &str, body: &[u8]) -> Result<PredictionResponse, ApiError> {
        let record = parse_health(&parse_object(body, false)?)?;
        let shared = self.entry(id)?;
        let mut entry = lock(&shared);
        let now = self.now_ms();
        entry.sync_clock(now);
        let result = match entry.health {
            Some((prev, result)) if prev == record => result,
            Some(_) => return Err(ApiError::Conflict("health metrics were already submitted for this session".into())),
            None => {
                let result = self.registry.predict_health(&record).map_err(internal)?;
                entry.apply(
                    EventKind::HealthSubmitted {
                        prediction: result.label.as_binary(),
                    },
                    now,
                )?;
                entry.health = Some((record, result));
                result
            }
        };
        Ok(PredictionResponse {
            score: result.score,
            label: result.label,
            model: result.model,
            view: entry.session.view(),
        })
    }

    pub fn submit_face(&self, id: &str, body: &[u8]) -> Result<PredictionResponse, ApiError> {
        let bytes = parse_face(&parse_object(body, false)?)?;
        let key = (crc32fast::hash(&bytes), bytes.len());
        let shared = self.entry(id)?;
        let mut entry = lock(&shared);
        let now = self.now_ms();
        entry.sync_clock(now);
        let result = match entry.face {
            Some((prev, result)) if prev == key => result,
            Some(_) => return Err(ApiError::Conflict("a face image was already submitted for this session".into())),
            None => {
                // Phase is checked before the comparatively slow inference.
                if entry.session.phase() != memscreen_core::game::Phase::AwaitingFaceCapture {
                    return Err(memscreen_core::game::GameError::PhaseConflict {
                        phase: entry.session.phase(),
                        event: "face",
                    }
                    .into());
                }
                let result = self.registry.predict_face(&bytes).map_err(|e| match e {
                    ModelError::Image(err) => ApiError::invalid(format!("cannot decode image: {err}"), &["image"]),
                    other => internal(other),
                })?;
                entry.apply(
                    EventKind::FaceSubmitted {
                        prediction: result.label.as_binary(),
                    },
                    now,
                )?;
                entry.face = Some((key, result));
                result
            }
        };
        Ok(PredictionResponse {
            score: result.score,
            label: result.label,
            model: result.model,
            view: entry.session.view(),
        })
    }

    pub fn decision(&self, id: &str) -> Result<DecisionResponse, ApiError> {
        let shared = self.entry(id)?;
        let mut entry = lock(&shared);
        entry.sync_clock(self.now_ms());
        let verdict = decide(&entry.session)?;
        Ok(DecisionResponse {
            text: verdict.text(),
            caveat: verdict.caveat(),
            verdict,
            health: entry.health.map(|(_, r)| r),
            face: entry.face.map(|(_, r)| r),
        })
    }

    /// Event log as CSV (`seq,kind,payload,server_time`).
    pub fn log_csv(&self, id: &str) -> Result<String, ApiError> {
        let shared = self.entry(id)?;
        let mut entry = lock(&shared);
        entry.sync_clock(self.now_ms());
        let mut buf = Vec::new();
        write_log(&mut buf, &entry.log).map_err(internal)?;
        String::from_utf8(buf).map_err(internal)
    }

    pub fn healthz(&self) -> HealthzResponse {
        HealthzResponse {
            status: "ok",
            version: env!("CARGO_PKG_VERSION"),
            sessions: self.store.len(),
            models: self.registry.info().to_vec(),
        }
    }

    pub fn game_config(&self) -> &GameConfig {
        &self.game
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(e.to_string())
}
