//! The two screening networks: builders, training loop, prediction,
//! weights persistence and feature-map extraction.

use std::fmt;
use std::io::Write;

use memscreen_nn::{adam_step, bce_loss, Activation, AdamState, LayerSpec, ModelGraph, NnError, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::health::{self, categorize, Example, HealthError, HealthRecord, ScalerParams};
use crate::image::{self as img, AugmentConfig, ImageError, ImageSample};
use crate::Batch;

/// Dropout after the second 1D convolution.
pub const MOD1D_DROPOUT: f64 = 0.2;
/// Dropout after each hidden dense layer of the 2D model.
pub const MOD2D_DROPOUT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Health(#[from] HealthError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("weights checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("weights file is for {found}, expected {expected}")]
    Architecture { expected: ModelId, found: ModelId },
    #[error("malformed weights manifest: {0}")]
    Manifest(String),
    #[error("layer {index} is {kind}, not a Conv2D layer")]
    NotConvLayer { index: usize, kind: &'static str },
    #[error("model input {actual:?} does not fit this operation (expected {expected})")]
    WrongModel { expected: &'static str, actual: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "MOD1D")]
    Mod1D,
    #[serde(rename = "MOD2D")]
    Mod2D,
}

impl ModelId {
    fn code(self) -> u8 {
        match self {
            ModelId::Mod1D => 1,
            ModelId::Mod2D => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ModelId::Mod1D),
            2 => Some(ModelId::Mod2D),
            _ => None,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelId::Mod1D => "MOD1D",
            ModelId::Mod2D => "MOD2D",
        })
    }
}

pub fn mod1d_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1D {
            kernel: 2,
            filters: 64,
            activation: Activation::Relu,
        },
        LayerSpec::Conv1D {
            kernel: 2,
            filters: 64,
            activation: Activation::Relu,
        },
        LayerSpec::Dropout { rate: MOD1D_DROPOUT },
        LayerSpec::MaxPool1D,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            units: 100,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            units: 2,
            activation: Activation::Sigmoid,
        },
    ]
}

pub fn build_mod1d(seed: u64) -> ModelGraph<f32> {
    ModelGraph::new(vec![health::FEATURE_COUNT, 1], mod1d_layers(), seed).expect("fixed architecture")
}

/// Dense widths for the 2D model at input side `side`, scaled linearly
/// from 512/256 at 224.
pub fn mod2d_dense_units(side: usize) -> (usize, usize) {
    if side == img::IMAGE_SIDE {
        return (512, 256);
    }
    let scale = |u: usize| ((u * side) as f64 / img::IMAGE_SIDE as f64).round().max(1.0) as usize;
    (scale(512), scale(256))
}

pub fn mod2d_layers(side: usize) -> Vec<LayerSpec> {
    let conv = |filters| LayerSpec::Conv2D {
        kernel: (3, 3),
        filters,
        activation: Activation::Relu,
    };
    let (d1, d2) = mod2d_dense_units(side);
    vec![
        conv(32),
        LayerSpec::MaxPool2D,
        conv(64),
        LayerSpec::MaxPool2D,
        conv(128),
        LayerSpec::MaxPool2D,
        conv(256),
        LayerSpec::MaxPool2D,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            units: d1,
            activation: Activation::Relu,
        },
        LayerSpec::Dropout { rate: MOD2D_DROPOUT },
        LayerSpec::Dense {
            units: d2,
            activation: Activation::Relu,
        },
        LayerSpec::Dropout { rate: MOD2D_DROPOUT },
        LayerSpec::Dense {
            units: 1,
            activation: Activation::Sigmoid,
        },
    ]
}

pub fn build_mod2d(seed: u64) -> ModelGraph<f32> {
    build_mod2d_scaled(img::IMAGE_SIDE, seed).expect("fixed architecture")
}

/// The 2D architecture on `side × side` inputs with proportionally
/// narrower dense layers. Sides below 46 leave no room for four
/// conv/pool stages.
pub fn build_mod2d_scaled(side: usize, seed: u64) -> Result<ModelGraph<f32>> {
    Ok(ModelGraph::new(vec![side, side, 3], mod2d_layers(side), seed)?)
}

/// Identifies which of the two architectures `model` is.
pub fn architecture_of<T: memscreen_nn::Real>(model: &ModelGraph<T>) -> Option<ModelId> {
    let input = model.input_shape();
    if input == [health::FEATURE_COUNT, 1] && model.layers() == mod1d_layers().as_slice() {
        return Some(ModelId::Mod1D);
    }
    if input.len() == 3 && input[0] == input[1] && input[2] == 3 && model.layers() == mod2d_layers(input[0]).as_slice() {
        return Some(ModelId::Mod2D);
    }
    None
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn mod1d(seed: u64) -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 200,
            batch_size: 32,
            seed,
        }
    }

    pub fn mod2d(seed: u64) -> Self {
        Self {
            learning_rate: 0.0001,
            epochs: 50,
            batch_size: 32,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size 0".into()));
        }
        Ok(())
    }
}

/// Produces the batches of one epoch in order.
pub trait BatchSource {
    fn sample_count(&self) -> usize;
    fn for_each_batch(&self, epoch: u64, f: &mut dyn FnMut(Batch) -> Result<()>) -> Result<()>;
}

pub struct HealthBatches<'a> {
    pub set: &'a [Example],
    pub batch_size: usize,
    /// Shuffle seed; `None` keeps the stored order.
    pub shuffle_seed: Option<u64>,
}

impl BatchSource for HealthBatches<'_> {
    fn sample_count(&self) -> usize {
        self.set.len()
    }

    fn for_each_batch(&self, epoch: u64, f: &mut dyn FnMut(Batch) -> Result<()>) -> Result<()> {
        let shuffle = self.shuffle_seed.map(|s| (s, epoch));
        for b in health::batches(self.set, self.batch_size, shuffle)? {
            f(b)?;
        }
        Ok(())
    }
}

pub struct ImageBatches<'a> {
    pub samples: &'a [ImageSample],
    pub batch_size: usize,
    pub shuffle_seed: Option<u64>,
    pub augment: Option<AugmentConfig>,
}

impl BatchSource for ImageBatches<'_> {
    fn sample_count(&self) -> usize {
        self.samples.len()
    }

    fn for_each_batch(&self, epoch: u64, f: &mut dyn FnMut(Batch) -> Result<()>) -> Result<()> {
        if self.samples.is_empty() {
            return Err(ImageError::Empty.into());
        }
        let order = match self.shuffle_seed {
            Some(seed) => health::epoch_order(self.samples.len(), seed, epoch),
            None => (0..self.samples.len()).collect(),
        };
        let mut rng = self.augment.as_ref().map(|c| img::augment_rng(c, epoch));
        // Built lazily so only one batch of images is resident at a time.
        for chunk in order.chunks(self.batch_size.max(1)) {
            let refs: Vec<&ImageSample> = chunk.iter().map(|&i| &self.samples[i]).collect();
            let batch = match (&mut rng, &self.augment) {
                (Some(r), Some(cfg)) => img::make_batch(&refs, Some(cfg), r),
                _ => img::make_batch(&refs, None, &mut ChaCha8Rng::seed_from_u64(0)),
            };
            f(batch)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// BCE targets for a batch: one-hot for a 2-unit head, the label itself
/// for a 1-unit head.
pub fn targets_for(labels: &[u8], units: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(labels.len() * units);
    for &l in labels {
        let y = f32::from(l);
        if units == 1 {
            data.push(y);
        } else {
            data.extend((0..units).map(|u| if u == 1 { y } else { 1.0 - y }));
        }
    }
    Tensor::new(vec![labels.len(), units], data).expect("target extents")
}

/// Demented probability for each row of a model output.
pub fn scores_from_output(output: &Tensor<f32>) -> Vec<f64> {
    let units = output.shape()[1];
    let idx = usize::from(units > 1);
    output.data().chunks(units).map(|row| f64::from(row[idx])).collect()
}

fn count_correct(scores: &[f64], labels: &[u8]) -> usize {
    scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| (**s > 0.5) == (l == 1))
        .count()
}

/// Mean BCE and accuracy of `model` over `source` in inference mode.
pub fn evaluate_loss(model: &ModelGraph<f32>, source: &dyn BatchSource) -> Result<(f64, f64)> {
    let units = model.output_shape()[0];
    let (mut loss_sum, mut correct, mut n) = (0.0, 0usize, 0usize);
    source.for_each_batch(0, &mut |b| {
        let out = model.infer(&b.inputs)?;
        let (loss, _) = bce_loss(&out, &targets_for(&b.labels, units))?;
        loss_sum += loss * b.labels.len() as f64;
        correct += count_correct(&scores_from_output(&out), &b.labels);
        n += b.labels.len();
        Ok(())
    })?;
    let n = n.max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Minimises BCE with Adam over `config.epochs` epochs. Reported training
/// loss and accuracy are averaged over the epoch's training-mode passes.
pub fn train(
    model: &mut ModelGraph<f32>,
    train_set: &dyn BatchSource,
    validation: Option<&dyn BatchSource>,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    let units = model.output_shape()[0];
    let mut state = AdamState::new(model.parameters(), config.learning_rate);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(0xd50);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (mut loss_sum, mut correct, mut n, mut batch_idx) = (0.0, 0usize, 0usize, 0usize);
        train_set.for_each_batch(epoch as u64, &mut |b| {
            let out = model.forward(&b.inputs, true, &mut dropout_rng)?;
            let (loss, grad) = bce_loss(&out, &targets_for(&b.labels, units))?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: batch_idx,
                });
            }
            let grads = model.backward(&grad)?;
            adam_step(model.parameters_mut(), &grads, &mut state)?;
            loss_sum += loss * b.labels.len() as f64;
            correct += count_correct(&scores_from_output(&out), &b.labels);
            n += b.labels.len();
            batch_idx += 1;
            Ok(())
        })?;
        let (val_loss, val_acc) = match validation {
            Some(v) => {
                let (l, a) = evaluate_loss(model, v)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let n = n.max(1) as f64;
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        progress(&m);
        log.push(m);
    }
    Ok(log)
}

pub fn write_epoch_log<W: Write>(writer: W, log: &[EpochMetrics]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in log {
        w.write_record(&[
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.train_acc.to_string(),
            opt(m.val_loss),
            opt(m.val_acc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionLabel {
    Demented,
    NonDemented,
}

impl PredictionLabel {
    /// Demented iff `score > 0.5`.
    pub fn from_score(score: f64) -> Self {
        if score > 0.5 {
            PredictionLabel::Demented
        } else {
            PredictionLabel::NonDemented
        }
    }

    pub fn as_binary(self) -> u8 {
        match self {
            PredictionLabel::Demented => 1,
            PredictionLabel::NonDemented => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub score: f64,
    pub label: PredictionLabel,
    pub model: ModelId,
}

impl PredictionResult {
    pub fn new(score: f64, model: ModelId) -> Self {
        Self {
            score,
            label: PredictionLabel::from_score(score),
            model,
        }
    }
}

/// Scaled model input for one record.
pub fn health_input(record: &HealthRecord, scaler: &ScalerParams) -> Result<Tensor<f32>> {
    let features = categorize(record)?.to_f64();
    let scaled = scaler.transform(&features);
    Ok(Tensor::from_f64(vec![1, health::FEATURE_COUNT, 1], &scaled)?)
}

pub fn predict_health(model: &ModelGraph<f32>, record: &HealthRecord, scaler: &ScalerParams) -> Result<PredictionResult> {
    if model.input_shape() != [health::FEATURE_COUNT, 1] {
        return Err(ModelError::WrongModel {
            expected: "a [6, 1] health model",
            actual: model.input_shape().to_vec(),
        });
    }
    let out = model.infer(&health_input(record, scaler)?)?;
    Ok(PredictionResult::new(scores_from_output(&out)[0], ModelId::Mod1D))
}

fn image_side(model: &ModelGraph<f32>) -> Result<usize> {
    match model.input_shape() {
        [h, w, 3] if h == w => Ok(*h),
        other => Err(ModelError::WrongModel {
            expected: "a square RGB image model",
            actual: other.to_vec(),
        }),
    }
}

pub fn predict_face(model: &ModelGraph<f32>, image_bytes: &[u8]) -> Result<PredictionResult> {
    let side = image_side(model)?;
    let pixels = img::decode_image(image_bytes, side)?;
    predict_face_tensor(model, &pixels)
}

pub fn predict_face_tensor(model: &ModelGraph<f32>, pixels: &Tensor<f32>) -> Result<PredictionResult> {
    let batch = Tensor::stack(std::slice::from_ref(pixels))?;
    let out = model.infer(&batch)?;
    Ok(PredictionResult::new(scores_from_output(&out)[0], ModelId::Mod2D))
}

const MAGIC: &[u8; 5] = b"MODW1";

fn layer_record(layer: &LayerSpec) -> (u8, [u32; 3], f64) {
    match *layer {
        LayerSpec::Conv1D { kernel, filters, .. } => (1, [kernel as u32, filters as u32, 0], 0.0),
        LayerSpec::Conv2D { kernel, filters, .. } => (2, [kernel.0 as u32, kernel.1 as u32, filters as u32], 0.0),
        LayerSpec::MaxPool1D => (3, [0; 3], 0.0),
        LayerSpec::MaxPool2D => (4, [0; 3], 0.0),
        LayerSpec::Flatten => (5, [0; 3], 0.0),
        LayerSpec::Dense { units, .. } => (6, [units as u32, 0, 0], 0.0),
        LayerSpec::Dropout { rate } => (7, [0; 3], rate),
    }
}

fn layer_from_record(kind: u8, act: u8, a: [u32; 3], rate: f64) -> Result<LayerSpec> {
    let activation = Activation::from_code(act).ok_or_else(|| ModelError::Manifest(format!("activation code {act}")))?;
    let u = |i: usize| a[i] as usize;
    Ok(match kind {
        1 => LayerSpec::Conv1D {
            kernel: u(0),
            filters: u(1),
            activation,
        },
        2 => LayerSpec::Conv2D {
            kernel: (u(0), u(1)),
            filters: u(2),
            activation,
        },
        3 => LayerSpec::MaxPool1D,
        4 => LayerSpec::MaxPool2D,
        5 => LayerSpec::Flatten,
        6 => LayerSpec::Dense { units: u(0), activation },
        7 => LayerSpec::Dropout { rate },
        other => return Err(ModelError::Manifest(format!("layer kind {other}"))),
    })
}

/// Serialises a model as a weights file:
///
/// ```text
/// "MODW1" | arch u8 | seed u64 | rank u32 | dims u32*rank
/// | layers u32 | (kind u8, activation u8, p u32*3, rate f64)*layers
/// | tensors u32 | (rank u32, dims u32*rank)*tensors
/// | values u64 | f32*values | crc32 u32
/// ```
///
/// All integers and floats are little-endian; the CRC covers every
/// preceding byte.
pub fn save_weights(model: &ModelGraph<f32>) -> Result<Vec<u8>> {
    let arch = architecture_of(model)
        .ok_or_else(|| ModelError::Manifest("model matches neither architecture".into()))?;
    let values: usize = model.parameters().iter().map(Tensor::len).sum();
    let mut out = Vec::with_capacity(values * 4 + 512);
    out.extend_from_slice(MAGIC);
    out.push(arch.code());
    out.extend_from_slice(&model.seed().to_le_bytes());
    put_dims(&mut out, model.input_shape());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        let (kind, p, rate) = layer_record(layer);
        out.push(kind);
        out.push(layer.activation().code());
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&rate.to_le_bytes());
    }
    out.extend_from_slice(&(model.parameters().len() as u32).to_le_bytes());
    for p in model.parameters() {
        put_dims(&mut out, p.shape());
    }
    out.extend_from_slice(&(values as u64).to_le_bytes());
    for p in model.parameters() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Manifest("unexpected end of header".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(ModelError::Manifest(format!("rank {rank}")));
        }
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }
}

/// Parses a weights file. The checksum is verified before anything else,
/// so truncation and bit flips surface as [`ModelError::Checksum`].
pub fn load_weights(bytes: &[u8]) -> Result<(ModelId, ModelGraph<f32>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(ModelError::Checksum { stored: 0, computed: 0 });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ModelError::Checksum { stored, computed });
    }

    let mut c = Cursor {
        bytes: body,
        pos: MAGIC.len(),
    };
    let code = c.u8()?;
    let arch = ModelId::from_code(code).ok_or_else(|| ModelError::Manifest(format!("architecture code {code}")))?;
    let seed = c.u64()?;
    let input_shape = c.dims()?;
    let n_layers = c.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let kind = c.u8()?;
        let act = c.u8()?;
        let p = [c.u32()?, c.u32()?, c.u32()?];
        let rate = c.f64()?;
        layers.push(layer_from_record(kind, act, p, rate)?);
    }
    let n_tensors = c.u32()? as usize;
    let shapes = (0..n_tensors).map(|_| c.dims()).collect::<Result<Vec<_>>>()?;
    let values = c.u64()? as usize;
    let declared: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if declared != values || body.len() - c.pos != values * 4 {
        return Err(ModelError::Manifest(format!(
            "payload holds {} bytes, manifest declares {values} values",
            body.len() - c.pos
        )));
    }
    let mut params = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        params.push(Tensor::new(shape, data)?);
    }
    let model = ModelGraph::from_parts(input_shape, layers, seed, params)?;
    match architecture_of(&model) {
        Some(found) if found == arch => Ok((arch, model)),
        _ => Err(ModelError::Manifest(format!("layer manifest does not describe {arch}"))),
    }
}

/// Like [`load_weights`] but insists on one architecture.
pub fn load_weights_as(bytes: &[u8], expected: ModelId) -> Result<ModelGraph<f32>> {
    let (found, model) = load_weights(bytes)?;
    if found != expected {
        return Err(ModelError::Architecture { expected, found });
    }
    Ok(model)
}

/// One filter's activation, min-max normalised to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Per-filter activations of Conv2D layer `layer_index` for one image
/// `[side, side, 3]`. A constant map normalises to all zeros.
pub fn extract_feature_maps(model: &ModelGraph<f32>, image: &Tensor<f32>, layer_index: usize) -> Result<Vec<FeatureMap>> {
    let layer = model.layers().get(layer_index).ok_or_else(|| {
        ModelError::Nn(NnError::Parameters(format!(
            "layer index {layer_index} out of range for {} layers",
            model.layers().len()
        )))
    })?;
    if !matches!(layer, LayerSpec::Conv2D { .. }) {
        return Err(ModelError::NotConvLayer {
            index: layer_index,
            kind: layer.kind_name(),
        });
    }
    let out = model.layer_output(&Tensor::stack(std::slice::from_ref(image))?, layer_index)?;
    let (h, w, c) = (out.shape()[1], out.shape()[2], out.shape()[3]);
    let data = out.data();
    Ok((0..c)
        .map(|f| {
            let values: Vec<f32> = (0..h * w).map(|p| data[p * c + f]).collect();
            let (lo, hi) = values
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            let data = if span > 0.0 {
                values.iter().map(|v| (v - lo) / span).collect()
            } else {
                vec![0.0; values.len()]
            };
            FeatureMap { height: h, width: w, data }
        })
        .collect())
}

/// Tiles maps into one grayscale image, `columns` per row, with a
/// one-pixel gap.
pub fn feature_map_grid(maps: &[FeatureMap], columns: usize) -> ::image::GrayImage {
    let columns = columns.max(1);
    let (h, w) = maps.first().map_or((0, 0), |m| (m.height, m.width));
    let rows = maps.len().div_ceil(columns);
    let gw = (columns * (w + 1)).saturating_sub(1) as u32;
    let gh = (rows * (h + 1)).saturating_sub(1) as u32;
    let mut grid = ::image::GrayImage::new(gw.max(1), gh.max(1));
    for (i, m) in maps.iter().enumerate() {
        let (oy, ox) = ((i / columns) * (h + 1), (i % columns) * (w + 1));
        for y in 0..h {
            for x in 0..w {
                let v = img::to_byte(m.data[y * w + x]);
                grid.put_pixel((ox + x) as u32, (oy + y) as u32, ::image::Luma([v]));
            }
        }
    }
    grid
}

/// Writes one map as a binary PGM.
pub fn write_pgm<W: Write>(mut writer: W, map: &FeatureMap) -> std::io::Result<()> {
    write!(writer, "P5\n{} {}\n255\n", map.width, map.height)?;
    let bytes: Vec<u8> = map.data.iter().map(|&v| img::to_byte(v)).collect();
    writer.write_all(&bytes)
}
