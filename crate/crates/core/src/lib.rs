//! Desk-scale elements-to-video: dual-branch (spatial + semantic)
//! multi-reference conditioning of a small video diffusion transformer
//! trained with flow matching, plus a micro benchmark with synthetic-corpus
//! oracles. Everything runs end-to-end on CPU over a procedural sprite-video
//! corpus.

pub mod autoencoder;
pub mod backbone;
pub mod bench;
pub mod conditioning;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod imageio;
pub mod model;
pub mod nn;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod trainflow;

pub use error::{Error, Result};
