//! Membership inference against visual self-supervised encoders using
//! part-crop response energies.
//!
//! The crate covers the whole attack: random part crops of an image are
//! encoded alongside the image, every crop representation queries the image's
//! feature map, the softmaxed responses are summarized as KL energies against
//! uniform and gaussian benchmarks, and a small MLP learns to tell members
//! from non-members. Baseline features, evaluation protocols, sweeps and a
//! synthetic encoder for offline verification are included.

pub mod attacker;
pub mod config;
pub mod crop;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod image;
pub mod manifest;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{read_tensor, write_tensor, Tensor};
