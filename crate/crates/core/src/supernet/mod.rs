//! The one-shot model: a reverse-mode autodiff engine and the cell-stacked
//! supernet whose edges mix all candidate operations.

pub mod checkpoint;
mod engine;
pub mod gradcheck;
pub mod kernels;
mod network;
mod ops;

pub use engine::{NodeId, ParamId, ParamInfo, ParamStore, Tape, Tensor};
pub use network::{Supernet, SupernetConfig};
pub use ops::{mix, mixed_edge_forward, OpInstance};
