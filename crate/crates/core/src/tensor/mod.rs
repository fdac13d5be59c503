//! Dense linear algebra, activations and reverse-mode gradients for the
//! fixed network graphs used throughout the crate.

mod matrix;
mod ops;
mod params;
mod tape;

pub use matrix::{linear, Matrix};
pub use ops::{dropout, gelu, gelu_derivative};
pub use params::{Layout, ParamVector, Slot, SlotKind};
pub use tape::{Gradients, ParamSet, Tape, Var};
pub(crate) use ops::check_dropout_rate;
