//! Server-authoritative memory-game state machine for both levels.
//!
//! Time enters only through [`EventKind::Tick`], so a session is a pure
//! function of its creation parameters and accepted events.

use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("invalid level config: {0}")]
    InvalidConfig(String),
    #[error("session is in terminal phase {0}")]
    Terminal(Phase),
    #[error("event `{event}` is not accepted in phase {phase}")]
    PhaseConflict { phase: Phase, event: &'static str },
    #[error("sequence number {got} does not follow {last}")]
    Sequence { last: u64, got: u64 },
    #[error("card index {index} out of range for {cards} cards")]
    CardOutOfRange { index: usize, cards: usize },
    #[error("card {0} is already face up or matched")]
    CardUnavailable(usize),
    #[error("time {got} ms precedes last seen time {last} ms")]
    TimeRegression { last: u64, got: u64 },
    #[error("prediction must be 0 or 1, got {0}")]
    InvalidPrediction(u8),
    #[error("level {0} does not exist")]
    UnknownLevel(u8),
    #[error("malformed event log line {line}: {reason}")]
    Log { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, GameError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Created,
    Memorizing,
    Playing,
    AwaitingHealthInput,
    AwaitingFaceCapture,
    LevelPassed,
    Completed,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Failed)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Whether `from → to` is an edge of the phase graph.
pub fn is_allowed_transition(from: Phase, to: Phase) -> bool {
    use Phase::*;
    if to == Failed {
        return !from.is_terminal();
    }
    matches!(
        (from, to),
        (Created, Memorizing)
            | (Memorizing, Playing)
            | (Playing, LevelPassed)
            | (Playing, AwaitingHealthInput)
            | (Playing, AwaitingFaceCapture)
            | (Playing, Completed)
            | (LevelPassed, Memorizing)
            | (AwaitingHealthInput, Memorizing)
            | (AwaitingFaceCapture, Completed)
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub level: u8,
    pub click_threshold: u32,
    pub countdown_ms: u64,
    pub show_ms: u64,
    pub rows: usize,
    pub cols: usize,
    /// Period of the two-card position swap; `None` disables it.
    pub swap_interval_ms: Option<u64>,
}

impl LevelConfig {
    pub fn level1() -> Self {
        Self {
            level: 1,
            click_threshold: 36,
            countdown_ms: 120_000,
            show_ms: 5_000,
            rows: 4,
            cols: 4,
            swap_interval_ms: None,
        }
    }

    pub fn level2() -> Self {
        Self {
            level: 2,
            click_threshold: 70,
            countdown_ms: 300_000,
            show_ms: 10_000,
            rows: 4,
            cols: 5,
            swap_interval_ms: Some(15_000),
        }
    }

    pub fn cards(&self) -> usize {
        self.rows * self.cols
    }

    pub fn pairs(&self) -> usize {
        self.cards() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GameError::InvalidConfig(format!("level {}: {m}", self.level)));
        if self.cards() == 0 || self.cards() % 2 != 0 {
            return bad("rows * cols must be positive and even");
        }
        if self.pairs() > usize::from(u16::MAX) {
            return bad("grid too large");
        }
        if self.click_threshold == 0 {
            return bad("click threshold must be positive");
        }
        if self.countdown_ms == 0 {
            return bad("countdown must be positive");
        }
        if self.swap_interval_ms == Some(0) {
            return bad("swap interval must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub level1: LevelConfig,
    pub level2: LevelConfig,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            level1: LevelConfig::level1(),
            level2: LevelConfig::level2(),
        }
    }
}

impl GameConfig {
    pub fn level(&self, level: u8) -> Result<&LevelConfig> {
        match level {
            1 => Ok(&self.level1),
            2 => Ok(&self.level2),
            other => Err(GameError::UnknownLevel(other)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.level1.validate()?;
        self.level2.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub value: u16,
    pub face_up: bool,
    pub matched: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Flip { card_index: usize },
    Tick { now_ms: u64 },
    HealthSubmitted { prediction: u8 },
    FaceSubmitted { prediction: u8 },
    /// Starts Level 2 after Level 1 was passed.
    Advance,
    /// Gives up; the session fails.
    Abandon,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Flip { .. } => "flip",
            EventKind::Tick { .. } => "tick",
            EventKind::HealthSubmitted { .. } => "health",
            EventKind::FaceSubmitted { .. } => "face",
            EventKind::Advance => "advance",
            EventKind::Abandon => "abandon",
        }
    }

    fn payload(&self) -> String {
        match *self {
            EventKind::Flip { card_index } => card_index.to_string(),
            EventKind::Tick { now_ms } => now_ms.to_string(),
            EventKind::HealthSubmitted { prediction } | EventKind::FaceSubmitted { prediction } => {
                prediction.to_string()
            }
            EventKind::Advance | EventKind::Abandon => String::new(),
        }
    }

    fn parse(kind: &str, payload: &str) -> std::result::Result<Self, String> {
        let num = |p: &str| p.parse::<u64>().map_err(|e| format!("payload `{p}`: {e}"));
        Ok(match kind {
            "flip" => EventKind::Flip {
                card_index: num(payload)? as usize,
            },
            "tick" => EventKind::Tick { now_ms: num(payload)? },
            "health" => EventKind::HealthSubmitted {
                prediction: num(payload)? as u8,
            },
            "face" => EventKind::FaceSubmitted {
                prediction: num(payload)? as u8,
            },
            "advance" => EventKind::Advance,
            "abandon" => EventKind::Abandon,
            other => return Err(format!("unknown kind `{other}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameEvent {
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub seq: u64,
    pub level: u8,
    pub from: Phase,
    pub to: Phase,
}

/// Why the current level ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelEnd {
    AllPairsMatched,
    ClickThreshold,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameSession {
    config: GameConfig,
    seed: u64,
    created_at_ms: u64,
    start_level: u8,
    level: u8,
    phase: Phase,
    cards: Vec<Card>,
    open: Vec<usize>,
    click_count: u32,
    matched_pairs: usize,
    now_ms: u64,
    deadline_ms: u64,
    next_swap_ms: Option<u64>,
    swaps: u64,
    last_seq: u64,
    health_prediction: Option<u8>,
    face_prediction: Option<u8>,
    level_results: Vec<(u8, LevelEnd)>,
    acknowledged: bool,
}

impl GameSession {
    /// New session at `start_level`, already in its memorisation window.
    pub fn new(config: GameConfig, start_level: u8, seed: u64, now_ms: u64) -> Result<Self> {
        config.validate()?;
        config.level(start_level)?;
        let mut s = Self {
            config,
            seed,
            created_at_ms: now_ms,
            start_level,
            level: start_level,
            phase: Phase::Created,
            cards: Vec::new(),
            open: Vec::new(),
            click_count: 0,
            matched_pairs: 0,
            now_ms,
            deadline_ms: now_ms,
            next_swap_ms: None,
            swaps: 0,
            last_seq: 0,
            health_prediction: None,
            face_prediction: None,
            level_results: Vec::new(),
            acknowledged: false,
        };
        s.start_level(start_level);
        Ok(s)
    }

    fn level_config(&self) -> &LevelConfig {
        self.config.level(self.level).expect("validated level")
    }

    fn start_level(&mut self, level: u8) {
        self.level = level;
        let cfg = self.level_config().clone();
        self.cards = shuffled_grid(&cfg, self.seed);
        self.open.clear();
        self.click_count = 0;
        self.matched_pairs = 0;
        self.swaps = 0;
        self.next_swap_ms = None;
        self.deadline_ms = self.now_ms + cfg.show_ms;
        self.phase = Phase::Memorizing;
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn created_at_ms(&self) -> u64 {
        self.created_at_ms
    }
    pub fn initial_level(&self) -> u8 {
        self.start_level
    }
    pub fn level(&self) -> u8 {
        self.level
    }
    pub fn phase(&self) -> Phase {
        self.phase
    }
    pub fn cards(&self) -> &[Card] {
        &self.cards
    }
    pub fn click_count(&self) -> u32 {
        self.click_count
    }
    pub fn click_threshold(&self) -> u32 {
        self.level_config().click_threshold
    }
    pub fn matched_pairs(&self) -> usize {
        self.matched_pairs
    }
    pub fn total_pairs(&self) -> usize {
        self.cards.len() / 2
    }
    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }
    pub fn deadline_ms(&self) -> u64 {
        self.deadline_ms
    }
    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }
    pub fn health_prediction(&self) -> Option<u8> {
        self.health_prediction
    }
    pub fn face_prediction(&self) -> Option<u8> {
        self.face_prediction
    }
    /// How each finished level ended, in order.
    pub fn level_results(&self) -> &[(u8, LevelEnd)] {
        &self.level_results
    }
    /// Level 2 was cleared and the player acknowledged.
    pub fn acknowledged(&self) -> bool {
        self.acknowledged
    }

    /// Applies one event. A rejected event leaves the session untouched.
    pub fn apply_event(&mut self, event: GameEvent) -> Result<Vec<Transition>> {
        if self.phase.is_terminal() {
            return Err(GameError::Terminal(self.phase));
        }
        if event.seq <= self.last_seq {
            return Err(GameError::Sequence {
                last: self.last_seq,
                got: event.seq,
            });
        }
        self.check(&event.kind)?;
        self.last_seq = event.seq;
        let before = (self.level, self.phase);
        let mut transitions = Vec::new();
        let record = |s: &Self, from: (u8, Phase), out: &mut Vec<Transition>| {
            if s.phase != from.1 {
                out.push(Transition {
                    seq: event.seq,
                    level: from.0,
                    from: from.1,
                    to: s.phase,
                });
            }
        };
        match event.kind {
            EventKind::Tick { now_ms } => {
                self.now_ms = now_ms;
                // A long gap can pass several deadlines at once.
                loop {
                    let from = (self.level, self.phase);
                    self.advance_clock();
                    if self.phase == from.1 {
                        break;
                    }
                    record(self, from, &mut transitions);
                }
            }
            EventKind::Flip { card_index } => {
                self.flip(card_index);
                record(self, before, &mut transitions);
            }
            EventKind::HealthSubmitted { prediction } => {
                self.health_prediction = Some(prediction);
                self.start_level(2);
                record(self, before, &mut transitions);
            }
            EventKind::FaceSubmitted { prediction } => {
                self.face_prediction = Some(prediction);
                self.phase = Phase::Completed;
                record(self, before, &mut transitions);
            }
            EventKind::Advance => {
                self.start_level(2);
                record(self, before, &mut transitions);
            }
            EventKind::Abandon => {
                self.phase = Phase::Failed;
                record(self, before, &mut transitions);
            }
        }
        Ok(transitions)
    }

    fn check(&self, kind: &EventKind) -> Result<()> {
        let conflict = || GameError::PhaseConflict {
            phase: self.phase,
            event: kind.name(),
        };
        match *kind {
            EventKind::Tick { now_ms } => {
                if now_ms < self.now_ms {
                    return Err(GameError::TimeRegression {
                        last: self.now_ms,
                        got: now_ms,
                    });
                }
            }
            EventKind::Flip { card_index } => {
                if self.phase != Phase::Playing {
                    return Err(conflict());
                }
                let card = self.cards.get(card_index).ok_or(GameError::CardOutOfRange {
                    index: card_index,
                    cards: self.cards.len(),
                })?;
                if card.face_up || card.matched {
                    return Err(GameError::CardUnavailable(card_index));
                }
            }
            EventKind::HealthSubmitted { prediction } => {
                if self.phase != Phase::AwaitingHealthInput {
                    return Err(conflict());
                }
                if prediction > 1 {
                    return Err(GameError::InvalidPrediction(prediction));
                }
            }
            EventKind::FaceSubmitted { prediction } => {
                if self.phase != Phase::AwaitingFaceCapture {
                    return Err(conflict());
                }
                if prediction > 1 {
                    return Err(GameError::InvalidPrediction(prediction));
                }
            }
            EventKind::Advance => {
                if self.phase != Phase::LevelPassed || self.level != 1 {
                    return Err(conflict());
                }
            }
            EventKind::Abandon => {}
        }
        Ok(())
    }

    /// One step of clock-driven progress at `self.now_ms`.
    fn advance_clock(&mut self) {
        match self.phase {
            Phase::Memorizing if self.now_ms >= self.deadline_ms => {
                let cfg = self.level_config().clone();
                let start = self.deadline_ms;
                self.deadline_ms = start + cfg.countdown_ms;
                self.next_swap_ms = cfg.swap_interval_ms.map(|p| start + p);
                self.phase = Phase::Playing;
            }
            Phase::Playing => {
                while let Some(at) = self.next_swap_ms {
                    if at > self.now_ms.min(self.deadline_ms) {
                        break;
                    }
                    self.swap_two_cards();
                    self.next_swap_ms = Some(at + self.level_config().swap_interval_ms.expect("swap enabled"));
                }
                if self.now_ms >= self.deadline_ms {
                    self.end_level(LevelEnd::Timeout);
                }
            }
            _ => {}
        }
    }

    fn flip(&mut self, index: usize) {
        if self.open.len() == 2 {
            for &i in &self.open {
                self.cards[i].face_up = false;
            }
            self.open.clear();
        }
        self.click_count += 1;
        self.cards[index].face_up = true;
        self.open.push(index);
        if self.open.len() == 2 {
            let (a, b) = (self.open[0], self.open[1]);
            if self.cards[a].value == self.cards[b].value {
                for i in [a, b] {
                    self.cards[i].matched = true;
                }
                self.matched_pairs += 1;
                self.open.clear();
            }
        }
        if self.matched_pairs == self.total_pairs() {
            self.end_level(LevelEnd::AllPairsMatched);
        } else if self.click_count > self.click_threshold() {
            self.end_level(LevelEnd::ClickThreshold);
        }
    }

    fn end_level(&mut self, how: LevelEnd) {
        self.level_results.push((self.level, how));
        self.next_swap_ms = None;
        self.phase = match (self.level, how) {
            (1, LevelEnd::AllPairsMatched) => Phase::LevelPassed,
            (_, LevelEnd::AllPairsMatched) => {
                self.acknowledged = true;
                Phase::Completed
            }
            (1, _) => Phase::AwaitingHealthInput,
            (_, _) => Phase::AwaitingFaceCapture,
        };
    }

    /// Exchanges the positions of two unmatched face-down cards.
    fn swap_two_cards(&mut self) {
        let candidates: Vec<usize> = (0..self.cards.len())
            .filter(|&i| !self.cards[i].matched && !self.cards[i].face_up)
            .collect();
        self.swaps += 1;
        if candidates.len() < 2 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(self.level) << 32 | self.swaps);
        let a = rng.gen_range(0..candidates.len());
        let mut b = rng.gen_range(0..candidates.len() - 1);
        if b >= a {
            b += 1;
        }
        self.cards.swap(candidates[a], candidates[b]);
    }

    pub fn view(&self) -> SessionView {
        let reveal_all = self.phase == Phase::Memorizing;
        let remaining_ms = match self.phase {
            Phase::Memorizing | Phase::Playing => Some(self.deadline_ms.saturating_sub(self.now_ms)),
            _ => None,
        };
        SessionView {
            level: self.level,
            phase: self.phase,
            click_count: self.click_count,
            click_threshold: self.click_threshold(),
            matched_pairs: self.matched_pairs,
            total_pairs: self.total_pairs(),
            rows: self.level_config().rows,
            cols: self.level_config().cols,
            remaining_ms,
            last_seq: self.last_seq,
            cards: self
                .cards
                .iter()
                .enumerate()
                .map(|(index, c)| CardView {
                    index,
                    value: (reveal_all || c.face_up || c.matched).then_some(c.value),
                    face_up: reveal_all || c.face_up,
                    matched: c.matched,
                })
                .collect(),
            health_submitted: self.health_prediction.is_some(),
            face_submitted: self.face_prediction.is_some(),
            acknowledged: self.acknowledged,
        }
    }
}

fn shuffled_grid(cfg: &LevelConfig, seed: u64) -> Vec<Card> {
    let mut values: Vec<u16> = (0..cfg.pairs() as u16).flat_map(|v| [v, v]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(cfg.level));
    values.shuffle(&mut rng);
    values
        .into_iter()
        .map(|value| Card {
            value,
            face_up: false,
            matched: false,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardView {
    pub index: usize,
    /// Absent while the card is face down.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<u16>,
    pub face_up: bool,
    pub matched: bool,
}

/// Client-facing state with face-down values withheld.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub level: u8,
    pub phase: Phase,
    pub click_count: u32,
    pub click_threshold: u32,
    pub matched_pairs: usize,
    pub total_pairs: usize,
    pub rows: usize,
    pub cols: usize,
    pub remaining_ms: Option<u64>,
    pub last_seq: u64,
    pub cards: Vec<CardView>,
    pub health_submitted: bool,
    pub face_submitted: bool,
    pub acknowledged: bool,
}

/// One line of the exported event log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub kind: String,
    pub payload: String,
    pub server_time: u64,
}

impl LogEntry {
    /// Header line recording how the session was created.
    pub fn creation(session: &GameSession) -> Self {
        Self {
            seq: 0,
            kind: "create".into(),
            payload: format!("{}:{}", session.initial_level(), session.seed()),
            server_time: session.created_at_ms(),
        }
    }

    pub fn event(event: &GameEvent, server_time: u64) -> Self {
        Self {
            seq: event.seq,
            kind: event.kind.name().into(),
            payload: event.kind.payload(),
            server_time,
        }
    }
}

pub fn write_log<W: Write>(writer: W, entries: &[LogEntry]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log<R: Read>(reader: R) -> Result<Vec<LogEntry>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .enumerate()
        .map(|(i, e)| {
            e.map_err(|err| GameError::Log {
                line: i + 2,
                reason: err.to_string(),
            })
        })
        .collect()
}

/// Rebuilds a session from its exported log.
pub fn replay(config: GameConfig, entries: &[LogEntry]) -> Result<GameSession> {
    let first = entries.first().ok_or(GameError::Log {
        line: 1,
        reason: "empty log".into(),
    })?;
    let bad = |line: usize, reason: String| GameError::Log { line, reason };
    if first.kind != "create" {
        return Err(bad(1, "first entry must be `create`".into()));
    }
    let (level, seed) = first
        .payload
        .split_once(':')
        .and_then(|(l, s)| Some((l.parse::<u8>().ok()?, s.parse::<u64>().ok()?)))
        .ok_or_else(|| bad(1, format!("bad create payload `{}`", first.payload)))?;
    let mut session = GameSession::new(config, level, seed, first.server_time)?;
    for (i, e) in entries.iter().enumerate().skip(1) {
        let kind = EventKind::parse(&e.kind, &e.payload).map_err(|r| bad(i + 1, r))?;
        session.apply_event(GameEvent { seq: e.seq, kind })?;
    }
    Ok(session)
}
