//! Rigid 3D volume registration with Siamese encoder-decoder networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod geom;
pub mod nets;
pub mod synthgen;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use geom::{RigidTransform, TransformParams};
pub use nets::{ArchConfig, ArchKind, Model, Predictor};
pub use volume::Volume3;
