//! Dense linear algebra with analytic gradients and a finite-difference
//! checker that certifies them.

pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_difference_grad, GradCheckReport};
pub use graph::{Activation, Gradients, Graph, VarId};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
