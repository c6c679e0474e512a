//! Shared harness: a live server on an ephemeral port, backed by the
//! reference models and a manual clock.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use base64::Engine;
use memscreen_core::fixtures;
use memscreen_core::game::GameConfig;
use memscreen_nn::Tensor;
use memscreen_service::{http, ManualClock, ModelRegistry, ScreeningService};
use reqwest::StatusCode;
use serde_json::{json, Value};

pub const FACE_SIDE: usize = 48;
pub const START_MS: u64 = 1_700_000_000_000;

pub struct TestServer {
    pub base: String,
    pub clock: ManualClock,
    pub client: reqwest::Client,
    pub service: Arc<ScreeningService>,
}

pub fn reference_registry() -> ModelRegistry {
    ModelRegistry::new(
        fixtures::reference_mod1d(),
        fixtures::reference_scaler(),
        fixtures::reference_mod2d(FACE_SIDE),
    )
    .unwrap()
}

impl TestServer {
    pub async fn start() -> Self {
        Self::start_with(GameConfig::default(), 1_800_000, None).await
    }

    pub async fn start_with(game: GameConfig, ttl_ms: u64, static_dir: Option<PathBuf>) -> Self {
        let clock = ManualClock::new(START_MS);
        let service = Arc::new(ScreeningService::new(
            Arc::new(reference_registry()),
            game,
            ttl_ms,
            Arc::new(clock.clone()),
        ));
        let addr = http::spawn(SocketAddr::from(([127, 0, 0, 1], 0)), Arc::clone(&service), static_dir)
            .await
            .unwrap();
        Self {
            base: format!("http://{addr}"),
            clock,
            client: reqwest::Client::new(),
            service,
        }
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn get_text(&self, path: &str) -> (StatusCode, String) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    /// New session at `level`; returns its id and the memorisation view.
    pub async fn create(&self, level: u8, seed: u64) -> (String, Value) {
        let (status, body) = self.post("/api/sessions", json!({ "level": level, "seed": seed })).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        (body["session_id"].as_str().unwrap().to_string(), body["view"].clone())
    }

    pub async fn event(&self, id: &str, body: Value) -> (StatusCode, Value) {
        self.post(&format!("/api/sessions/{id}/events"), body).await
    }

    pub async fn flip(&self, id: &str, card: usize) -> Value {
        let (status, body) = self.event(id, json!({ "kind": "flip", "card_index": card })).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }

    /// Moves the clock by `ms` and lets the server notice.
    pub async fn wait(&self, id: &str, ms: u64) -> Value {
        self.clock.advance(ms);
        let (status, body) = self.event(id, json!({ "kind": "tick" })).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }

    /// Flips three mutually different cards in rotation until the click
    /// threshold is crossed. `memo` is a view taken while all cards show.
    pub async fn exceed_threshold(&self, id: &str, memo: &Value) -> Value {
        let trio = distinct_three(memo);
        let threshold = memo["click_threshold"].as_u64().unwrap();
        let mut last = Value::Null;
        for click in 1..=threshold + 1 {
            last = self.flip(id, trio[click as usize % 3]).await;
            let phase = last["view"]["phase"].as_str().unwrap();
            if click <= threshold {
                assert_eq!(phase, "Playing", "click {click}");
            }
        }
        last
    }

    /// Matches every pair using the values shown during memorisation.
    pub async fn clear_level(&self, id: &str, memo: &Value) -> Value {
        let mut last = Value::Null;
        for (a, b) in pairs(memo) {
            self.flip(id, a).await;
            last = self.flip(id, b).await;
        }
        last
    }

    pub async fn submit_health(&self, id: &str, diabetic: u8) -> (StatusCode, Value) {
        self.post(&format!("/api/sessions/{id}/health"), health_body(diabetic)).await
    }

    pub async fn submit_face(&self, id: &str, bright: bool) -> (StatusCode, Value) {
        self.post(&format!("/api/sessions/{id}/face"), json!({ "image": face_data_url(bright) }))
            .await
    }
}

pub fn values(view: &Value) -> Vec<u64> {
    view["cards"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["value"].as_u64().expect("memorisation view shows values"))
        .collect()
}

pub fn distinct_three(view: &Value) -> [usize; 3] {
    let v = values(view);
    let b = (0..v.len()).find(|&i| v[i] != v[0]).unwrap();
    let c = (0..v.len()).find(|&i| v[i] != v[0] && v[i] != v[b]).unwrap();
    [0, b, c]
}

pub fn pairs(view: &Value) -> Vec<(usize, usize)> {
    let v = values(view);
    let mut out = Vec::new();
    for i in 0..v.len() {
        if let Some(j) = (i + 1..v.len()).find(|&j| v[j] == v[i]) {
            out.push((i, j));
        }
    }
    out
}

/// Measurements whose only risk signal is the diabetic flag.
pub fn health_body(diabetic: u8) -> Value {
    json!({
        "age": 72,
        "blood_oxygen": 97.5,
        "heart_rate": 55,
        "body_temp": 36.9,
        "weight": 64.0,
        "diabetic": diabetic,
    })
}

/// PNG whose red channel is all 1 (`bright`) or all 0.
pub fn face_png(bright: bool) -> Vec<u8> {
    let mut t = Tensor::<f32>::full(vec![40, 40, 3], 0.3);
    for px in t.data_mut().chunks_mut(3) {
        px[0] = if bright { 1.0 } else { 0.0 };
    }
    memscreen_core::image::encode_png(&t).unwrap()
}

pub fn face_data_url(bright: bool) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(face_png(bright))
    )
}

/// Level 1 past the threshold, health, Level 2 past the threshold, face,
/// then the decision. Returns the decision body.
pub async fn full_flow(server: &TestServer, seed: u64, health: u8, face: u8) -> Value {
    let (id, memo1) = server.create(1, seed).await;
    server.wait(&id, 5_000).await;
    let r = server.exceed_threshold(&id, &memo1).await;
    assert_eq!(r["view"]["phase"], "AwaitingHealthInput");
    assert_eq!(r["transition"]["to"], "AwaitingHealthInput");
    assert_eq!(r["view"]["click_count"], 37);

    let (status, h) = server.submit_health(&id, health).await;
    assert_eq!(status, StatusCode::OK, "{h}");
    assert_eq!(h["label"], if health == 1 { "Demented" } else { "NonDemented" });
    assert_eq!((h["view"]["level"].as_u64(), h["view"]["phase"].as_str()), (Some(2), Some("Memorizing")));

    let memo2 = h["view"].clone();
    server.wait(&id, 10_000).await;
    let r = server.exceed_threshold(&id, &memo2).await;
    assert_eq!(r["view"]["phase"], "AwaitingFaceCapture");
    assert_eq!(r["view"]["click_count"], 71);

    let (status, f) = server.submit_face(&id, face == 1).await;
    assert_eq!(status, StatusCode::OK, "{f}");
    assert_eq!(f["view"]["phase"], "Completed");

    let (status, d) = server.get(&format!("/api/sessions/{id}/decision")).await;
    assert_eq!(status, StatusCode::OK, "{d}");
    d
}

pub fn expected_text(health: u8, face: u8) -> &'static str {
    match (health, face) {
        (1, 1) => "Demented",
        (0, 1) => "Demented with a high probability",
        (1, 0) => "Non-Demented with a high probability",
        _ => "Non-Demented",
    }
}
