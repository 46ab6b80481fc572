//! Dense reverse-mode differentiation: arrays, a recording tape, and AdamW.

mod array;
pub mod kernels;
mod optim;
mod params;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use array::Array;
pub use optim::{adamw_step, AdamState, AdamW};
pub use params::{ParamId, ParamStore, Tensor};
pub use tape::{Gradients, Tape, Var};

/// Element type of every array. Models run in `f32`; the same code
/// monomorphized at `f64` backs tight finite-difference checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).unwrap()
}
