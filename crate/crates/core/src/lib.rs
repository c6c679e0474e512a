//! Screening pipelines built on `memscreen-nn`: health and image
//! preprocessing, the two CNN architectures with training, prediction and
//! persistence, decision fusion, evaluation metrics, the memory-game
//! engine, and synthetic corpora.

pub mod fixtures;
pub mod fusion;
pub mod game;
pub mod health;
pub mod image;
pub mod metrics;
pub mod models;
pub mod synth;

use memscreen_nn::Tensor;

/// Model inputs with one 0/1 label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor<f32>,
    pub labels: Vec<u8>,
}
