//! Dense tensors and a reverse-mode tape that can differentiate its own
//! backward pass.
//!
//! ```
//! use metaloc::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let dy = g.grad(y, &[x], true).unwrap().grads[0];
//! assert_eq!(g.value(dy).item(), Some(6.0));
//! let d2y = g.grad(dy, &[x], false).unwrap().grads[0];
//! assert_eq!(g.value(d2y).item(), Some(2.0));
//! ```

mod graph;
mod nn;
mod tensor;

pub use graph::{Gradients, Graph, Var, PAD};
pub use tensor::Tensor;
