//! Heterogeneous-graph encoder and emotion- and speaker-aware decoder for
//! multimodal dialogue, on top of a small tape-based autodiff engine.
//!
//! The crate is `no_std` with `alloc`. Enable the `std` feature for
//! `std::error::Error` impls and anything else that needs the standard library.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod config;
pub mod corpus;
pub mod decoder;
pub mod emotion;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod training;

pub use config::{Activation, GnnMode, TrainConfig};
pub use corpus::{DialogueRecord, SpeakerRoster, SynthSpec, Vocab};
pub use emotion::{Emotion, EMOTION_COUNT};
pub use error::{Error, Result};
pub use graph::{HeteroGraph, MaskOrientation, NodeType, NodeTypeSet};
pub use model::{Decoding, Generation, Model};
pub use params::{AdamConfig, AdamState, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use training::{BatchExecutor, EpochLog, Sequential, StepJob, Trainer};
