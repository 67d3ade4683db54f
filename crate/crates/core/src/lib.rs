//! Egocentric hand-gesture recognition pipeline.
//!
//! The crate covers the whole desk-scale workflow: green-screen mask
//! extraction ([`chroma_key`]), compositing-based data augmentation
//! ([`augmentor`]), a procedural dataset generator ([`synth_gen`]), the
//! hourglass mask-encoder network ([`ehme_net`]), an LSTM sequence
//! classifier ([`sequence_net`]), the three-phase transfer-training
//! schedule ([`trainer`]) and the evaluation harness ([`evaluator`]).
//!
//! Everything is deterministic: augmentation, initialization and data
//! order are pure functions of the configured seed, so two runs with the
//! same config produce bit-identical artifacts.

pub mod augmentor;
pub mod chroma_key;
pub mod config;
pub mod data_model;
pub mod ehme_net;
pub mod error;
pub mod evaluator;
pub mod nn;
pub mod rng;
pub mod sequence_net;
pub mod synth_gen;
pub mod trainer;
pub mod weights;

pub use error::{Error, Result};
