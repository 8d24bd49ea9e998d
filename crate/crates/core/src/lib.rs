//! Zero-shot anomaly scoring over pre-extracted patch features.
//!
//! Images are scored against two memory banks: a full bank of every test
//! image's patches and a normal bank built from the images that best match
//! a "normal" text prompt. The normal-bank response is subtracted from the
//! full-bank response where it is low, which damps offsets caused by
//! lighting or pose rather than by defects.
//!
//! The crate is `no_std` with `alloc`; file formats and the command line
//! live in `pa-score`.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod aggregation;
pub mod cada;
pub mod coreset;
pub mod dataset;
pub mod decision;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use dataset::{Dataset, FeatureManifest, ImageFeatures, ImageRecord, Mask, TextEmbeddingPair};
pub use decision::{AnomalyMap, PixelMap, ScoringParams};
pub use error::{Error, Result};
pub use grid::{FeatureGrid, ScoreGrid};
pub use memory::{BankKind, MemoryBank};
pub use metrics::MetricSet;
pub use pipeline::{EngineConfig, RunResult};
