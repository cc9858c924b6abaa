//! Numerical core for training a small convolutional classifier by deep
//! neuroevolution or by gradient descent, and for evaluating it under
//! simulated multi-institution domain shift.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, worker
//! threads, wall clocks and the command line live in the `evc` crate; this
//! crate exposes two small hooks for them:
//!
//! - [`exec::Executor`] maps an index range to results, serially or on a pool.
//!   Every parallel loop in this crate goes through it and reduces results in
//!   index order, so the worker count never changes an output bit.
//! - [`exec::Clock`] supplies elapsed seconds for training histories.
//!
//! Randomness is counter-derived from a single seed (see [`rng`]), never
//! drawn from a shared sequential stream.

#![no_std]

extern crate alloc;

pub mod data;
pub mod dne;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod saliency;
pub mod sgd;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ArchitectureConfig, ModelParams};
pub use tensor::Tensor;

/// Class labels. The positive class for metrics is [`Label::Metastasis`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal = 0,
    Metastasis = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Metastasis),
            _ => None,
        }
    }

    /// Token used in manifests and prediction files.
    pub fn token(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Metastasis => "metastasis",
        }
    }

    pub fn parse(token: &str) -> Option<Label> {
        match token.trim() {
            "normal" | "0" => Some(Label::Normal),
            "metastasis" | "1" => Some(Label::Metastasis),
            _ => None,
        }
    }
}
