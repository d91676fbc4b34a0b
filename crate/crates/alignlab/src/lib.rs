//! Desk-scale speech-text modality alignment lab.
//!
//! A single trainable linear layer bridges a frozen transformer speech
//! encoder and a frozen decoder-only language model. Everything runs on a
//! small self-contained tensor engine with reverse-mode autodiff, Adam,
//! and a Jacobi SVD; the corpus is a deterministic synthetic toy world.

pub mod alignment;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod infer;
pub mod lm;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
