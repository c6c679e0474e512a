//! Seeded synthetic corpora: health records with a class-separable label
//! rule, and two-texture face stand-in images.

use std::fs;
use std::path::Path;

use memscreen_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::health::{self, HealthRecord};
use crate::image::{self as img, ImageSample};

/// Risk points from the categorised features; label 1 iff at least 3.
pub fn synthetic_risk(record: &HealthRecord) -> u8 {
    let age = health::age_class(record.age).expect("generated age in range");
    (age - 1)
        + 2 * record.diabetic
        + u8::from(health::heart_rate_class(record.heart_rate) == 3)
        + u8::from(health::blood_oxygen_class(record.blood_oxygen) == 1)
}

fn one_decimal(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// `n` records whose label is a deterministic function of their classes,
/// with dementia as the minority class.
pub fn health_records(n: usize, seed: u64) -> Vec<HealthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut r = HealthRecord {
                age: rng.gen_range(40..=90) as f64,
                blood_oxygen: one_decimal(rng.gen_range(90.0..100.0)),
                heart_rate: rng.gen_range(50..=115) as f64,
                body_temp: one_decimal(rng.gen_range(35.8..38.2)),
                weight: one_decimal(rng.gen_range(42.0..95.0)),
                diabetic: u8::from(rng.gen_bool(0.25)),
                dementia_label: None,
            };
            r.dementia_label = Some(u8::from(synthetic_risk(&r) >= 3));
            r
        })
        .collect()
}

/// One texture image in `[0, 1]`. Label 1 draws stripes, label 0 a
/// checkerboard; both average about 0.5 and carry pixel noise.
pub fn texture_image(label: u8, side: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let period = rng.gen_range(0.06..0.12) * side as f64;
    let phase = rng.gen_range(0.0..period);
    let angle: f64 = rng.gen_range(-0.4..0.4);
    let tint = [rng.gen_range(0.8..1.0), rng.gen_range(0.7..1.0), rng.gen_range(0.6..1.0)];
    let (s, c) = angle.sin_cos();
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let (fy, fx) = (y as f64, x as f64);
            let u = c * fx + s * fy + phase;
            let v = -s * fx + c * fy + phase;
            let on = if label == 1 {
                (u / period).floor() as i64 % 2 == 0
            } else {
                ((u / period).floor() as i64 + (v / period).floor() as i64) % 2 == 0
            };
            let base = if on { 0.8 } else { 0.2 };
            for t in tint {
                let noise: f64 = rng.gen_range(-0.08..0.08);
                data.push((base * t + 0.5 * (1.0 - t) + noise).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::new(vec![side, side, 3], data).expect("rgb extents")
}

/// `per_class` images of each class, alternating labels, all in memory.
pub fn texture_samples(per_class: usize, side: usize, seed: u64) -> Vec<ImageSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2 * per_class)
        .map(|i| {
            let label = (i % 2) as u8;
            ImageSample {
                pixels: texture_image(label, side, &mut rng),
                label,
                source_path: format!("synthetic/{i}"),
            }
        })
        .collect()
}

/// 70/20/10 train/test/validation counts for `per_class` images.
pub fn image_split_counts(per_class: usize) -> [(&'static str, usize); 3] {
    let train = (per_class as f64 * 0.7).round() as usize;
    let test = ((per_class as f64 * 0.2).round() as usize).min(per_class - train);
    [("train", train), ("test", test), ("validation", per_class - train - test)]
}

/// Writes `<root>/{train,test,validation}/{demented,non_demented}/*.png`
/// with `per_class` images of each class spread 70/20/10 over the splits.
pub fn write_image_corpus(root: &Path, per_class: usize, side: usize, seed: u64) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (split, count) in image_split_counts(per_class) {
        for (class, label) in img::CLASS_DIRS {
            let dir = root.join(split).join(class);
            fs::create_dir_all(&dir)?;
            for i in 0..count {
                let pixels = texture_image(label, side, &mut rng);
                let png = img::encode_png(&pixels).map_err(std::io::Error::other)?;
                fs::write(dir.join(format!("{class}_{i:05}.png")), png)?;
            }
        }
    }
    Ok(())
}
