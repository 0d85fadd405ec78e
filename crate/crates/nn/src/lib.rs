//! A small CPU tensor engine: NCHW `f32` tensors, a reverse-mode autodiff
//! tape, the convolutional building blocks used by lightweight segmentation
//! networks, Adam, and a named-tensor archive format.
//!
//! Networks are written once against [`Exec`] and can then be run for real
//! ([`Session`]) or traced for FLOP accounting ([`FlopCounter`]).

pub mod archive;
pub mod exec;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use archive::{read_archive, write_archive, Archive, ArchiveError};
pub use exec::{BnUpdate, Exec, FlopCounter, Forward, Mode, Session};
pub use graph::{Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{BatchNorm2d, Conv2d, ConvSpec, ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;
