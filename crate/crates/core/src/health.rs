//! Health-metrics pipeline for the 1D model: categorisation, SMOTE,
//! standard scaling, splitting and batching.

use std::io::{Read, Write};

use memscreen_nn::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Batch;

/// Number of model input features.
pub const FEATURE_COUNT: usize = 6;

/// Column names of the model input, in model order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "diabetic",
    "blood_oxygen_class",
    "body_temp_class",
    "heart_rate_class",
    "weight_class",
    "age_class",
];

/// Default SMOTE neighbourhood size.
pub const DEFAULT_SMOTE_K: usize = 5;

#[derive(Debug, Error)]
pub enum HealthError {
    #[error("field `{field}` is not finite")]
    NotFinite { field: &'static str },
    #[error("field `{field}` must be 0 or 1, got {value}")]
    NotBinary { field: &'static str, value: f64 },
    #[error("age {0} is outside the supported range 40-90 years")]
    AgeOutOfRange(f64),
    #[error("oversampling needs both classes present")]
    SingleClass,
    #[error("minority class has {0} samples; at least 2 are needed")]
    MinorityTooSmall(usize),
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("empty sample set")]
    Empty,
    #[error("record {row}: {source}")]
    Csv {
        row: usize,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    CsvWrite(#[from] csv::Error),
    #[error("record {row}: missing dementia label")]
    MissingLabel { row: usize },
    #[error("record {row}: {source}")]
    InvalidRecord {
        row: usize,
        #[source]
        source: Box<HealthError>,
    },
}

pub type Result<T> = std::result::Result<T, HealthError>;

/// One row of raw physical measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthRecord {
    pub age: f64,
    pub blood_oxygen: f64,
    pub heart_rate: f64,
    pub body_temp: f64,
    pub weight: f64,
    pub diabetic: u8,
    #[serde(rename = "dementia", default, skip_serializing_if = "Option::is_none")]
    pub dementia_label: Option<u8>,
}

impl HealthRecord {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("age", self.age),
            ("blood_oxygen", self.blood_oxygen),
            ("heart_rate", self.heart_rate),
            ("body_temp", self.body_temp),
            ("weight", self.weight),
        ] {
            if !v.is_finite() {
                return Err(HealthError::NotFinite { field });
            }
        }
        if self.diabetic > 1 {
            return Err(HealthError::NotBinary {
                field: "diabetic",
                value: f64::from(self.diabetic),
            });
        }
        if let Some(l) = self.dementia_label {
            if l > 1 {
                return Err(HealthError::NotBinary {
                    field: "dementia",
                    value: f64::from(l),
                });
            }
        }
        Ok(())
    }
}

/// Class-coded features in model order:
/// `[diabetic, blood_oxygen, body_temp, heart_rate, weight, age]`.
/// Classes are 1..=3; `diabetic` is 0/1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CategorizedFeatureVector(pub [u8; FEATURE_COUNT]);

impl CategorizedFeatureVector {
    pub fn to_f64(self) -> [f64; FEATURE_COUNT] {
        self.0.map(f64::from)
    }

    pub fn age_class(self) -> u8 {
        self.0[5]
    }
}

fn three_way(value: f64, low: f64, high: f64) -> u8 {
    if value < low {
        1
    } else if value <= high {
        2
    } else {
        3
    }
}

pub fn heart_rate_class(bpm: f64) -> u8 {
    three_way(bpm, 60.0, 100.0)
}

pub fn body_temp_class(celsius: f64) -> u8 {
    three_way(celsius, 36.5, 37.5)
}

pub fn blood_oxygen_class(percent: f64) -> u8 {
    three_way(percent, 95.0, 100.0)
}

pub fn weight_class(kg: f64) -> u8 {
    three_way(kg, 50.0, 70.0)
}

/// 40-64 → 1, 65-74 → 2, 75-90 → 3. Fractional ages fall into the class
/// whose integer range they follow (64.5 → 1).
pub fn age_class(years: f64) -> Result<u8> {
    if !(40.0..=90.0).contains(&years) {
        return Err(HealthError::AgeOutOfRange(years));
    }
    Ok(if years < 65.0 {
        1
    } else if years < 75.0 {
        2
    } else {
        3
    })
}

pub fn categorize(record: &HealthRecord) -> Result<CategorizedFeatureVector> {
    record.validate()?;
    Ok(CategorizedFeatureVector([
        record.diabetic,
        blood_oxygen_class(record.blood_oxygen),
        body_temp_class(record.body_temp),
        heart_rate_class(record.heart_rate),
        weight_class(record.weight),
        age_class(record.age)?,
    ]))
}

/// A feature vector with its binary label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Example {
    pub fn from_record(record: &HealthRecord, row: usize) -> Result<Self> {
        let label = record
            .dementia_label
            .ok_or(HealthError::MissingLabel { row })?;
        let features = categorize(record).map_err(|e| HealthError::InvalidRecord {
            row,
            source: Box::new(e),
        })?;
        Ok(Self {
            features: features.to_f64().to_vec(),
            label,
        })
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<HealthRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize::<HealthRecord>().enumerate() {
        let rec = rec.map_err(|source| HealthError::Csv { row, source })?;
        rec.validate().map_err(|e| HealthError::InvalidRecord {
            row,
            source: Box::new(e),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_csv<W: Write>(writer: W, records: &[HealthRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "age",
        "blood_oxygen",
        "heart_rate",
        "body_temp",
        "weight",
        "diabetic",
        "dementia",
    ])?;
    for r in records {
        wtr.write_record(&[
            r.age.to_string(),
            r.blood_oxygen.to_string(),
            r.heart_rate.to_string(),
            r.body_temp.to_string(),
            r.weight.to_string(),
            r.diabetic.to_string(),
            r.dementia_label.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| HealthError::CsvWrite(e.into()))?;
    Ok(())
}

/// Balances the two classes by synthesising minority samples on segments
/// between each chosen sample and one of its `k` nearest minority
/// neighbours. Originals come first, synthetic samples are appended.
pub fn smote_oversample<R: Rng + ?Sized>(
    samples: &[Example],
    k: usize,
    rng: &mut R,
) -> Result<Vec<Example>> {
    let positives = samples.iter().filter(|s| s.label == 1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(HealthError::SingleClass);
    }
    let minority_label = u8::from(positives < negatives);
    let minority: Vec<&Example> = samples.iter().filter(|s| s.label == minority_label).collect();
    if minority.len() < 2 {
        return Err(HealthError::MinorityTooSmall(minority.len()));
    }
    let deficit = positives.abs_diff(negatives);
    let k = k.clamp(1, minority.len() - 1);

    let neighbours: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&j| j != i)
                .map(|j| (squared_distance(&minority[i].features, &minority[j].features), j))
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dists.truncate(k);
            dists.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut out = samples.to_vec();
    out.reserve(deficit);
    for _ in 0..deficit {
        let i = rng.gen_range(0..minority.len());
        let j = neighbours[i][rng.gen_range(0..k)];
        let gap: f64 = rng.gen();
        let base = &minority[i].features;
        let features = base
            .iter()
            .zip(&minority[j].features)
            .map(|(a, b)| a + gap * (b - a))
            .collect();
        out.push(Example {
            features,
            label: minority_label,
        });
    }
    Ok(out)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-feature standardisation statistics fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerParams {
    /// Population mean and standard deviation per column; a zero deviation
    /// is stored as 1 so constant columns map to 0.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(HealthError::Empty)?;
        let n = rows.len() as f64;
        let dims = first.len();
        let mut mean = vec![0.0; dims];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse_transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn transform_examples(&self, set: &[Example]) -> Vec<Example> {
        set.iter()
            .map(|e| Example {
                features: self.transform(&e.features),
                label: e.label,
            })
            .collect()
    }
}

/// Fits a scaler on `train` and applies it to `train` and every set in `others`.
pub fn fit_apply_scaler(
    train: &[Example],
    others: &[&[Example]],
) -> Result<(Vec<Example>, Vec<Vec<Example>>, ScalerParams)> {
    let rows: Vec<Vec<f64>> = train.iter().map(|e| e.features.clone()).collect();
    let params = ScalerParams::fit(&rows)?;
    let scaled_train = params.transform_examples(train);
    let scaled_others = others.iter().map(|s| params.transform_examples(s)).collect();
    Ok((scaled_train, scaled_others, params))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub split_seed: u64,
}

/// Sizes for an 80/20 train/test split followed by a 20% validation carve
/// from the training part. Held-out sizes round up, so 10 → 6/2/2 and
/// 1000 → 640/160/200.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n.div_ceil(5);
    let train_full = n - test;
    let validation = train_full.div_ceil(5);
    (train_full - validation, validation, test)
}

/// Seeded shuffle, then `[test | validation | train]` carved off the front.
pub fn split<T: Clone>(items: &[T], seed: u64) -> Result<SplitDataset<T>> {
    if items.len() < 10 {
        return Err(HealthError::TooFewRecords {
            needed: 10,
            got: items.len(),
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (_, n_val, n_test) = split_sizes(items.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok(SplitDataset {
        test: pick(&order[..n_test]),
        validation: pick(&order[n_test..n_test + n_val]),
        train: pick(&order[n_test + n_val..]),
        split_seed: seed,
    })
}

/// Deterministic epoch order for `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Splits `set` into batches of `batch_size` (the last may be short). With
/// `shuffle = Some((seed, epoch))` the order is a seeded permutation.
pub fn batches(set: &[Example], batch_size: usize, shuffle: Option<(u64, u64)>) -> Result<Vec<Batch>> {
    if set.is_empty() {
        return Err(HealthError::Empty);
    }
    let order = match shuffle {
        Some((seed, epoch)) => epoch_order(set.len(), seed, epoch),
        None => (0..set.len()).collect(),
    };
    let dims = set[0].features.len();
    Ok(order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let mut data = Vec::with_capacity(chunk.len() * dims);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend(set[i].features.iter().map(|&v| v as f32));
                labels.push(set[i].label);
            }
            Batch {
                inputs: Tensor::new(vec![chunk.len(), dims, 1], data).expect("consistent dims"),
                labels,
            }
        })
        .collect())
}

/// Output of the full preprocessing chain, ready for training.
#[derive(Clone, Debug)]
pub struct PreparedHealthData {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub scaler: ScalerParams,
}

/// categorize → split → SMOTE (train only) → scale with train statistics.
pub fn prepare(records: &[HealthRecord], seed: u64) -> Result<PreparedHealthData> {
    let examples = records
        .iter()
        .enumerate()
        .map(|(row, r)| Example::from_record(r, row))
        .collect::<Result<Vec<_>>>()?;
    let parts = split(&examples, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5307e);
    let balanced = smote_oversample(&parts.train, DEFAULT_SMOTE_K, &mut rng)?;
    let (train, mut rest, scaler) =
        fit_apply_scaler(&balanced, &[&parts.validation, &parts.test])?;
    let test = rest.pop().expect("two sets");
    let validation = rest.pop().expect("two sets");
    Ok(PreparedHealthData {
        train,
        validation,
        test,
        scaler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(age: f64, heart_rate: f64) -> HealthRecord {
        HealthRecord {
            age,
            blood_oxygen: 97.0,
            heart_rate,
            body_temp: 36.8,
            weight: 65.0,
            diabetic: 0,
            dementia_label: Some(0),
        }
    }

    #[test]
    fn class_boundaries() {
        assert_eq!(heart_rate_class(55.0), 1);
        assert_eq!(heart_rate_class(60.0), 2);
        assert_eq!(heart_rate_class(100.0), 2);
        assert_eq!(heart_rate_class(100.5), 3);
        assert_eq!(age_class(70.0).unwrap(), 2);
        assert_eq!(age_class(40.0).unwrap(), 1);
        assert_eq!(age_class(64.0).unwrap(), 1);
        assert_eq!(age_class(65.0).unwrap(), 2);
        assert_eq!(age_class(74.0).unwrap(), 2);
        assert_eq!(age_class(75.0).unwrap(), 3);
        assert_eq!(age_class(90.0).unwrap(), 3);
        assert_eq!(weight_class(50.0), 2);
        assert_eq!(weight_class(70.0), 2);
        assert_eq!(weight_class(49.9), 1);
        assert_eq!(body_temp_class(36.5), 2);
        assert_eq!(body_temp_class(37.5), 2);
        assert_eq!(body_temp_class(37.6), 3);
        assert_eq!(blood_oxygen_class(94.9), 1);
        assert_eq!(blood_oxygen_class(100.0), 2);
        assert_eq!(blood_oxygen_class(100.1), 3);
    }

    #[test]
    fn categorize_orders_features() {
        let r = HealthRecord {
            age: 80.0,
            blood_oxygen: 93.0,
            heart_rate: 110.0,
            body_temp: 36.0,
            weight: 72.0,
            diabetic: 1,
            dementia_label: None,
        };
        assert_eq!(categorize(&r).unwrap().0, [1, 1, 1, 3, 3, 3]);
    }

    #[test]
    fn age_out_of_range_is_rejected() {
        assert!(matches!(
            categorize(&record(30.0, 70.0)),
            Err(HealthError::AgeOutOfRange(_))
        ));
        assert!(categorize(&record(91.0, 70.0)).is_err());
        assert!(categorize(&record(f64::NAN, 70.0)).is_err());
    }

    #[test]
    fn split_sizes_follow_ceiling_rule() {
        assert_eq!(split_sizes(1000), (640, 160, 200));
        assert_eq!(split_sizes(10), (6, 2, 2));
        assert!(split(&[0u8; 9], 1).is_err());
    }

    #[test]
    fn batch_sizes() {
        let set: Vec<Example> = (0..100)
            .map(|i| Example {
                features: vec![i as f64; 6],
                label: (i % 2) as u8,
            })
            .collect();
        let b = batches(&set, 32, Some((3, 0))).unwrap();
        let sizes: Vec<usize> = b.iter().map(|x| x.labels.len()).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
        assert_eq!(b[0].inputs.shape(), &[32, 6, 1]);
        let mut seen: Vec<i64> = b
            .iter()
            .flat_map(|x| x.inputs.data().chunks(6).map(|c| c[0] as i64).collect::<Vec<_>>())
            .collect();
        seen.sort();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        assert_eq!(b, batches(&set, 32, Some((3, 0))).unwrap());
        assert_ne!(b, batches(&set, 32, Some((3, 1))).unwrap());
    }

    #[test]
    fn smote_balances_and_clamps_k() {
        let mut set = Vec::new();
        for i in 0..500 {
            set.push(Example {
                features: vec![i as f64, 0.0],
                label: 0,
            });
        }
        for i in 0..300 {
            set.push(Example {
                features: vec![(i % 17) as f64, 1.0 + (i % 3) as f64],
                label: 1,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = smote_oversample(&set, 5, &mut rng).unwrap();
        assert_eq!(out.iter().filter(|e| e.label == 0).count(), 500);
        assert_eq!(out.iter().filter(|e| e.label == 1).count(), 500);
        assert_eq!(&out[..800], &set[..]);

        let tiny = vec![
            Example { features: vec![0.0], label: 0 },
            Example { features: vec![1.0], label: 0 },
            Example { features: vec![2.0], label: 0 },
            Example { features: vec![5.0], label: 1 },
            Example { features: vec![7.0], label: 1 },
        ];
        let out = smote_oversample(&tiny, 50, &mut rng).unwrap();
        assert_eq!(out.len(), 6);
        assert!((5.0..=7.0).contains(&out[5].features[0]));
    }

    #[test]
    fn smote_errors() {
        let one_class = vec![Example { features: vec![0.0], label: 1 }; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            smote_oversample(&one_class, 5, &mut rng),
            Err(HealthError::SingleClass)
        ));
        let mut lonely = one_class.clone();
        lonely.push(Example { features: vec![1.0], label: 0 });
        assert!(matches!(
            smote_oversample(&lonely, 5, &mut rng),
            Err(HealthError::MinorityTooSmall(1))
        ));
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let rows = vec![vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 6.0]];
        let s = ScalerParams::fit(&rows).unwrap();
        assert_eq!(s.std[0], 1.0);
        for r in &rows {
            assert_eq!(s.transform(r)[0], 0.0);
        }
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![record(70.0, 55.0), record(45.5, 101.0)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("age,blood_oxygen,heart_rate,body_temp,weight,diabetic,dementia\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn csv_rejects_non_binary_flags() {
        let text = "age,blood_oxygen,heart_rate,body_temp,weight,diabetic,dementia\n70,97,80,36.8,60,2,0\n";
        assert!(read_csv(text.as_bytes()).is_err());
    }
}
