//! MC-Net: a multiscale encoder–decoder segmentation network with a multiple
//! max-pooling integration module and cross multiscale deconvolution, built on
//! a small reverse-mode differentiation engine.
//!
//! Layout:
//! - [`tensor`], [`kernels`], [`tape`], [`params`], [`optim`], [`gradcheck`]: the numeric engine
//! - [`graph`]: the graph-building interface and shape tracer
//! - [`model`]: configuration, assembly, audit, training and checkpoints
//! - [`metrics`]: confusion-based and region-overlap evaluation
//! - [`data`]: PGM I/O, preprocessing, splitting, manifests and the synthetic generator

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Mode, Tape, Var};
pub use tensor::{Scalar, Shape, Tensor};
