//! Core algorithms for privacy-preserving fingerprint aliases: minutiae
//! extraction and matching, fixed-length embeddings, secret rotations in
//! embedding space, and synthesis of new ridge patterns from embeddings.
//!
//! This crate is `no_std` (with `alloc`); file formats and the command line
//! live in the `proxyprints` crate.

#![no_std]

extern crate alloc;

pub mod aligner;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod geom;
pub mod imaging;
pub mod matcher;
pub mod minutiae;
pub mod moldgen;
pub mod pipeline;
pub mod synth;

pub use aligner::{AliasKey, Rotation, Timestamp};
pub use encoder::{Embedding, Encoder, EncoderConfig};
pub use error::{Error, Result};
pub use imaging::{GrayImage, OrientationField};
pub use matcher::{decide, match_templates, Decision, MatchScore};
pub use minutiae::{Minutia, MinutiaKind, RgbImage, Template};
pub use pipeline::{AliasStore, BreachAlert, EnrollmentRecord, PipelineConfig, Transformer};
pub use synth::{SynthesisParams, Synthesizer};
