//! In-memory session table with idle expiry.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use memscreen_core::game::{EventKind, GameError, GameEvent, GameSession, LogEntry, Transition};
use memscreen_core::health::HealthRecord;
use memscreen_core::models::PredictionResult;
use rand::rngs::OsRng;
use rand::RngCore;

/// One live session and everything submitted to it.
#[derive(Debug)]
pub struct Entry {
    pub session: GameSession,
    pub log: Vec<LogEntry>,
    pub health: Option<(HealthRecord, PredictionResult)>,
    /// CRC-32 and length of the accepted image bytes.
    pub face: Option<((u32, usize), PredictionResult)>,
    pub last_access_ms: u64,
}

impl Entry {
    pub fn new(session: GameSession, now_ms: u64) -> Self {
        let log = vec![LogEntry::creation(&session)];
        Self {
            session,
            log,
            health: None,
            face: None,
            last_access_ms: now_ms,
        }
    }

    /// Applies `kind` under the next sequence number and logs it.
    pub fn apply(&mut self, kind: EventKind, now_ms: u64) -> Result<Vec<Transition>, GameError> {
        let event = GameEvent {
            seq: self.session.last_seq() + 1,
            kind,
        };
        let transitions = self.session.apply_event(event)?;
        self.log.push(LogEntry::event(&event, now_ms));
        Ok(transitions)
    }

    /// Brings the session's timers up to `now_ms`.
    pub fn sync_clock(&mut self, now_ms: u64) -> Vec<Transition> {
        if self.session.phase().is_terminal() || now_ms <= self.session.now_ms() {
            return Vec::new();
        }
        self.apply(EventKind::Tick { now_ms }, now_ms)
            .expect("forward tick on a live session is always accepted")
    }
}

pub type SharedEntry = Arc<Mutex<Entry>>;

pub fn lock(entry: &SharedEntry) -> MutexGuard<'_, Entry> {
    entry.lock().unwrap_or_else(|p| p.into_inner())
}

pub struct SessionStore {
    sessions: Mutex<HashMap<String, SharedEntry>>,
    ttl_ms: u64,
}

/// 128 random bits from the OS, hex encoded.
pub fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    OsRng.fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl SessionStore {
    pub fn new(ttl_ms: u64) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            ttl_ms,
        }
    }

    fn table(&self) -> MutexGuard<'_, HashMap<String, SharedEntry>> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn insert(&self, entry: Entry) -> String {
        let mut table = self.table();
        loop {
            let id = new_session_id();
            if !table.contains_key(&id) {
                table.insert(id.clone(), Arc::new(Mutex::new(entry)));
                return id;
            }
        }
    }

    /// Looks up a session, dropping it instead if it has been idle past the TTL.
    pub fn get(&self, id: &str, now_ms: u64) -> Option<SharedEntry> {
        let mut table = self.table();
        let entry = table.get(id)?.clone();
        let mut guard = lock(&entry);
        if now_ms.saturating_sub(guard.last_access_ms) > self.ttl_ms {
            drop(guard);
            table.remove(id);
            return None;
        }
        guard.last_access_ms = guard.last_access_ms.max(now_ms);
        drop(guard);
        Some(entry)
    }

    /// Removes every idle session; returns how many went.
    pub fn sweep(&self, now_ms: u64) -> usize {
        let mut table = self.table();
        let before = table.len();
        table.retain(|_, e| now_ms.saturating_sub(lock(e).last_access_ms) <= self.ttl_ms);
        before - table.len()
    }

    pub fn len(&self) -> usize {
        self.table().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
