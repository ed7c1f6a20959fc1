//! SURE: uncertainty-aware mixture-of-experts denoising, iterative
//! contextual reasoning, and gated transformer fusion for multimodal
//! emotion recognition in conversations, on a from-scratch reverse-mode
//! autodiff core.

pub mod error;
pub mod gradcheck;
pub mod real;
pub mod rng;
pub mod tensor;

pub mod data;
pub mod metrics;

pub mod classifier;
pub mod gate;
pub mod moe;
pub mod reasoning;

pub mod model;
pub mod train;

pub use error::{Result, SureError};
pub use real::Real;
