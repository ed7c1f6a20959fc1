//! Scalar abstraction over the two supported precisions.
//!
//! Training defaults to `f32`; gradient-check and determinism tests run the
//! same code instantiated at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

pub trait Real: Float + Debug + Display + Sum + Send + Sync + 'static {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
