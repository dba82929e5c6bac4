//! A minimal dense-tensor engine for evaluating tiny convolutional networks
//! at initialization.
//!
//! The engine is built around three pieces:
//!
//! - [`Tensor`]: a row-major n-dimensional array over a [`Scalar`].
//! - [`Graph`]: an immutable DAG of operations over named parameters, built
//!   with [`GraphBuilder`].
//! - [`Executor`]: runs a forward pass over a graph, caches activations, and
//!   produces a [`GradientTape`] on backward.
//!
//! Everything is generic over [`Scalar`], which is implemented for `f64` and
//! for the forward-mode [`Dual`] number. Running forward and backward with
//! dual-valued parameters yields exact Hessian-vector products, see [`hvp`].
//!
//! ```
//! use zcgauge_tensor::{GraphBuilder, Executor, Tensor};
//!
//! let mut b = GraphBuilder::new();
//! let x = b.input(&[Some(2)]);
//! let w = b.param("w", Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap());
//! let y = b.dense(x, w, None);
//! let graph = b.finish(y).unwrap();
//!
//! let mut exec = Executor::new(&graph);
//! let out = exec.forward(&Tensor::from_vec(vec![2.0, 3.0]), None).unwrap();
//! assert_eq!(out.data(), &[5.0, -1.0]);
//! ```

mod error;
mod exec;
mod graph;
mod kernels;
pub mod init;
mod scalar;
mod tensor;

pub use error::{Error, Result};
pub use exec::{hvp, Executor, GradientTape, Targets};
pub use graph::{Graph, GraphBuilder, NodeId, Op, Param, ParamId};
pub use scalar::{Dual, Scalar};
pub use tensor::Tensor;
