//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records primitive applications on [`Tensor`] values and
//! [`Tape::backward`] sweeps it in reverse to produce a [`GradientMap`].
//! Gradient flow can be cut per input edge; [`Tape::stop_gradient`] is
//! the common case (identity forward, zero adjoint backward).
//!
//! Trainable tensors live in a [`ParameterStore`] and are bound onto a
//! fresh tape per step through a [`Graph`].
//!
//! ```
//! use dml_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::row(&[3.0])).unwrap();
//! let frozen = tape.stop_gradient(x).unwrap();
//! let y = tape.hadamard(x, frozen).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[3.0]);
//! ```

mod check;
mod error;
mod params;
mod tape;
mod tensor;

pub use check::{
    finite_difference_check, finite_difference_check_with, relative_error, FdOptions, FdReport,
    FdWorst, ABS_FALLBACK,
};
pub use error::{AutodiffError, Result};
pub use params::{Graph, ParamGrads, ParameterStore};
pub use tape::{Bags, GradientMap, NodeId, Op, OpKind, Tape, TapeNode};
pub use tensor::{Shape, Tensor};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    tape::sigmoid(x)
}
