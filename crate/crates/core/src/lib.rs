//! Logit-bias learning for few-shot classification on top of a frozen
//! zero-shot head, operating on precomputed embeddings.
//!
//! A zero-shot head `W0` produces logits `s0 = W0 f_clip`. A bias predictor
//! (a feature-initialized linear probe, or a single or dual cache model)
//! produces `s_bias` from auxiliary features, and the two are fused as
//! `s = s0 + (beta / kappa) * s_bias`, where `kappa` is a per-sample
//! confidence derived from `s0` alone.
//!
//! The crate is `no_std` (with `alloc`). File formats, configuration and the
//! command line live in the companion `amu` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

mod error;
mod math;

pub mod eval;
pub mod fusion;
pub mod metrics;
pub mod numerics;
pub mod predictors;
pub mod rng;
pub mod store;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use fusion::{FusionConfig, KappaMethod};
pub use predictors::{CacheModel, LinearProbe};
pub use store::{FeatureStore, FewShotTask, SplitTag, ZeroShotHead};
pub use training::{TrainConfig, TrainHistory, TrainMode};
