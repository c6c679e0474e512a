use memscreen_core::game::{
    is_allowed_transition, replay, EventKind, GameConfig, GameEvent, GameSession, LevelEnd, LogEntry, Phase,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_event(rng: &mut ChaCha8Rng, s: &GameSession) -> EventKind {
    let roll: f64 = rng.gen();
    if roll < 0.75 {
        EventKind::Flip {
            card_index: rng.gen_range(0..s.cards().len() + 2),
        }
    } else if roll < 0.90 {
        EventKind::Tick {
            now_ms: s.now_ms() + rng.gen_range(0..25_000),
        }
    } else if roll < 0.94 {
        EventKind::HealthSubmitted {
            prediction: rng.gen_range(0..=2),
        }
    } else if roll < 0.98 {
        EventKind::FaceSubmitted {
            prediction: rng.gen_range(0..=2),
        }
    } else if roll < 0.995 {
        EventKind::Advance
    } else {
        EventKind::Abandon
    }
}

/// Drives one random session and checks every invariant along the way.
fn fuzz_one(seed: u64, level: u8) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = GameSession::new(GameConfig::default(), level, seed, 0).unwrap();
    let mut log = vec![LogEntry::creation(&s)];
    let mut seq = 0u64;
    for _ in 0..400 {
        if s.phase().is_terminal() {
            break;
        }
        seq = if rng.gen_bool(0.03) { seq } else { seq + 1 };
        let event = GameEvent {
            seq,
            kind: random_event(&mut rng, &s),
        };
        let before = s.clone();
        match s.apply_event(event) {
            Ok(transitions) => {
                log.push(LogEntry::event(&event, s.now_ms()));
                let mut phase = before.phase();
                for t in &transitions {
                    assert_eq!(t.from, phase);
                    assert!(is_allowed_transition(t.from, t.to), "{:?} -> {:?}", t.from, t.to);
                    phase = t.to;
                }
                assert_eq!(phase, s.phase());
                if s.level() == before.level() && s.phase() != Phase::Memorizing {
                    assert!(s.click_count() >= before.click_count());
                    assert!(s.matched_pairs() >= before.matched_pairs());
                    for (a, b) in before.cards().iter().zip(s.cards()) {
                        if a.matched {
                            assert!(b.matched && b.value == a.value);
                        }
                    }
                }
                if s.phase() == Phase::Playing {
                    assert!(s.click_count() <= s.click_threshold());
                }
                if let EventKind::Flip { .. } = event.kind {
                    if before.phase() == Phase::Playing && s.phase() != Phase::Playing {
                        let end = s.level_results().last().unwrap().1;
                        if end == LevelEnd::ClickThreshold {
                            assert_eq!(s.click_count(), s.click_threshold() + 1);
                        }
                    }
                }
            }
            Err(_) => assert_eq!(s, before),
        }
    }
    assert_eq!(replay(GameConfig::default(), &log).unwrap(), s);
}

#[test]
fn fuzzed_sessions_respect_invariants() {
    for seed in 0..300 {
        fuzz_one(seed, 1);
        fuzz_one(seed, 2);
    }
}

#[test]
fn threshold_crossing_on_level_two_awaits_face_capture() {
    let mut s = GameSession::new(GameConfig::default(), 2, 1, 0).unwrap();
    s.apply_event(GameEvent {
        seq: 1,
        kind: EventKind::Tick { now_ms: 10_000 },
    })
    .unwrap();
    let c = s.cards().to_vec();
    let a = 0;
    let b = (0..c.len()).find(|&i| c[i].value != c[a].value).unwrap();
    let d = (0..c.len())
        .find(|&i| c[i].value != c[a].value && c[i].value != c[b].value)
        .unwrap();
    for click in 1..=71u64 {
        s.apply_event(GameEvent {
            seq: click + 1,
            kind: EventKind::Flip {
                card_index: [a, b, d][click as usize % 3],
            },
        })
        .unwrap();
        if click == 70 {
            assert_eq!(s.phase(), Phase::Playing);
        }
    }
    assert_eq!(s.phase(), Phase::AwaitingFaceCapture);
    s.apply_event(GameEvent {
        seq: 100,
        kind: EventKind::FaceSubmitted { prediction: 1 },
    })
    .unwrap();
    assert_eq!(s.phase(), Phase::Completed);
    assert_eq!(s.face_prediction(), Some(1));
}

#[test]
fn health_submission_starts_level_two() {
    let mut s = GameSession::new(GameConfig::default(), 1, 4, 0).unwrap();
    let t = s
        .apply_event(GameEvent {
            seq: 1,
            kind: EventKind::Tick { now_ms: 200_000 },
        })
        .unwrap();
    assert_eq!(t.len(), 2);
    assert_eq!(s.phase(), Phase::AwaitingHealthInput);
    s.apply_event(GameEvent {
        seq: 2,
        kind: EventKind::HealthSubmitted { prediction: 0 },
    })
    .unwrap();
    assert_eq!((s.level(), s.phase()), (2, Phase::Memorizing));
    assert_eq!(s.view().cards.len(), 20);
    assert_eq!(s.click_count(), 0);
}

#[test]
fn terminal_sessions_reject_everything() {
    let mut s = GameSession::new(GameConfig::default(), 1, 4, 0).unwrap();
    s.apply_event(GameEvent {
        seq: 1,
        kind: EventKind::Abandon,
    })
    .unwrap();
    assert_eq!(s.phase(), Phase::Failed);
    assert!(s
        .apply_event(GameEvent {
            seq: 2,
            kind: EventKind::Tick { now_ms: 1 },
        })
        .is_err());
}
