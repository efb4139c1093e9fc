#![forbid(unsafe_code)]
//! Self-contained adversarial-perturbation toolkit around the DeepFool
//! family of attacks - untargeted, basic targeted, enhanced targeted with a
//! tunable minimum-confidence threshold, and the recursive targeted variant
//! - against small trainable convolutional classifiers, plus the metrics
//! and campaign layer that aggregates results into summary tables.
//!
//! Everything numeric is generic over the [`Scalar`] working precision:
//! attacks and training default to `f32`, oracle-grade checks run at `f64`.
//! The aliases below pin the two concrete instantiations.

pub mod attack;
pub mod campaign;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod persist;
mod rng;
pub mod scalar;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Logits32 = tensor::Logits<f32>;
pub type Logits64 = tensor::Logits<f64>;
pub type Model32 = nn::Model<f32>;
pub type Model64 = nn::Model<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type AttackResult32 = attack::AttackResult<f32>;
pub type AttackResult64 = attack::AttackResult<f64>;
