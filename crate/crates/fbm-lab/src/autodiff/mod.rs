//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! Big enough for MLPs, GRUs, dot-product critics, and the losses of the
//! model family; nothing more. 64-bit floats throughout, dynamic tape rebuilt
//! per minibatch.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod nn;
pub mod tensor;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use nn::{BoundParams, GruCell, Linear, Mlp, OutputActivation, ParamSet, Parameter};
pub use tensor::Tensor;
