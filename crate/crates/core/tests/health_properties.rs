use memscreen_core::health::{
    self, categorize, fit_apply_scaler, smote_oversample, split, Example, HealthRecord, ScalerParams,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Boundary table written out independently of the library.
fn class_oracle(v: f64, bounds: (f64, f64)) -> u8 {
    if v < bounds.0 {
        1
    } else if v > bounds.1 {
        3
    } else {
        2
    }
}

fn record() -> impl Strategy<Value = HealthRecord> {
    (40.0f64..=90.0, 85.0f64..=101.0, 40.0f64..=130.0, 35.0f64..=39.0, 40.0f64..=100.0, 0u8..=1)
        .prop_map(|(age, o2, hr, t, w, d)| HealthRecord {
            age,
            blood_oxygen: o2,
            heart_rate: hr,
            body_temp: t,
            weight: w,
            diabetic: d,
            dementia_label: None,
        })
}

fn labelled(n_neg: usize, n_pos: usize, dims: usize, seed: u64) -> Vec<Example> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_neg + n_pos)
        .map(|i| Example {
            features: (0..dims).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            label: u8::from(i >= n_neg),
        })
        .collect()
}

proptest! {
    #[test]
    fn categorize_matches_boundary_table(r in record()) {
        let c = categorize(&r).unwrap().0;
        prop_assert_eq!(c[0], r.diabetic);
        prop_assert_eq!(c[1], class_oracle(r.blood_oxygen, (95.0, 100.0)));
        prop_assert_eq!(c[2], class_oracle(r.body_temp, (36.5, 37.5)));
        prop_assert_eq!(c[3], class_oracle(r.heart_rate, (60.0, 100.0)));
        prop_assert_eq!(c[4], class_oracle(r.weight, (50.0, 70.0)));
        let age = if r.age < 65.0 { 1 } else if r.age < 75.0 { 2 } else { 3 };
        prop_assert_eq!(c[5], age);
    }

    #[test]
    fn categorize_survives_csv_round_trip(r in record()) {
        let mut buf = Vec::new();
        health::write_csv(&mut buf, &[r]).unwrap();
        let back = health::read_csv(&buf[..]).unwrap();
        prop_assert_eq!(categorize(&back[0]).unwrap(), categorize(&r).unwrap());
    }

    #[test]
    fn smote_points_lie_on_minority_segments(n_neg in 5usize..40, n_pos in 2usize..5, k in 1usize..8, seed in 0u64..1000) {
        let set = labelled(n_neg, n_pos, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = smote_oversample(&set, k, &mut rng).unwrap();
        prop_assert_eq!(out.iter().filter(|e| e.label == 0).count(), n_neg);
        prop_assert_eq!(out.iter().filter(|e| e.label == 1).count(), n_neg);
        let minority: Vec<&Example> = set.iter().filter(|e| e.label == 1).collect();
        for s in &out[set.len()..] {
            prop_assert_eq!(s.label, 1);
            // Some pair (a, b) must give one u in [0, 1] for every coordinate.
            let on_segment = minority.iter().any(|a| minority.iter().any(|b| {
                let mut u: Option<f64> = None;
                for d in 0..3 {
                    let span = b.features[d] - a.features[d];
                    let off = s.features[d] - a.features[d];
                    if span.abs() < 1e-12 {
                        if off.abs() > 1e-9 { return false; }
                        continue;
                    }
                    let ud = off / span;
                    if !(-1e-9..=1.0 + 1e-9).contains(&ud) { return false; }
                    match u {
                        Some(prev) if (prev - ud).abs() > 1e-7 => return false,
                        _ => u = Some(ud),
                    }
                }
                true
            }));
            prop_assert!(on_segment);
        }
    }

    #[test]
    fn scaler_standardises_and_inverts(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 2..40)) {
        let params = ScalerParams::fit(&rows).unwrap();
        let n = rows.len() as f64;
        for d in 0..4 {
            let mean: f64 = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var: f64 = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            prop_assert!((params.mean[d] - mean).abs() < 1e-12);
            let sd = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
            prop_assert!((params.std[d] - sd).abs() < 1e-12);
            let scaled: Vec<f64> = rows.iter().map(|r| params.transform(r)[d]).collect();
            prop_assert!((scaled.iter().sum::<f64>() / n).abs() < 1e-9);
        }
        for r in &rows {
            let back = params.inverse_transform(&params.transform(r));
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_is_a_seeded_partition(n in 10usize..300, seed in 0u64..50) {
        let items: Vec<usize> = (0..n).collect();
        let s = split(&items, seed).unwrap();
        let (tr, va, te) = health::split_sizes(n);
        prop_assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (tr, va, te));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(split(&items, seed).unwrap(), s);
    }
}

#[test]
fn held_out_sets_use_training_statistics() {
    let train: Vec<Example> = (0..10)
        .map(|i| Example {
            features: vec![i as f64],
            label: 0,
        })
        .collect();
    let test: Vec<Example> = (0..10)
        .map(|i| Example {
            features: vec![100.0 + i as f64],
            label: 0,
        })
        .collect();
    let (scaled_train, others, params) = fit_apply_scaler(&train, &[&test]).unwrap();
    assert!((params.mean[0] - 4.5).abs() < 1e-12);
    let train_mean: f64 = scaled_train.iter().map(|e| e.features[0]).sum::<f64>() / 10.0;
    assert!(train_mean.abs() < 1e-12);
    // With its own statistics the test set would be centred at zero.
    let test_mean: f64 = others[0].iter().map(|e| e.features[0]).sum::<f64>() / 10.0;
    assert!((test_mean - (104.5 - 4.5) / params.std[0]).abs() < 1e-9);
}

#[test]
fn prepare_balances_only_the_training_split() {
    let records = memscreen_core::synth::health_records(500, 3);
    let p = health::prepare(&records, 3).unwrap();
    let pos = p.train.iter().filter(|e| e.label == 1).count();
    assert_eq!(pos * 2, p.train.len());
    assert_eq!(p.test.len(), 100);
    assert_eq!(p.validation.len(), 80);
}
