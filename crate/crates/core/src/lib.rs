//! Online multi-scale semantic feature maps with open-vocabulary retrieval
//! and object-goal navigation.
//!
//! Frames are split into square patches at several scales, each patch is
//! embedded with a vision-language encoder and anchored at the mean 3D point
//! of its pixels. Text queries are matched against the stored features by
//! cosine similarity; points above a threshold become navigation goals for an
//! A* planner running on a 2D obstacle grid built from the same depth.

pub mod embedding;
pub mod error;
pub mod feature_map;
pub mod geometry;
pub mod image;
pub mod mapper;
pub mod navigator;
pub mod obslog;
pub mod obstacle;
pub mod patching;
pub mod planner;
pub mod scalar;
pub mod sim;
pub mod vocab;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double precision geometry.
pub type Point3d = geometry::Point3<f64>;
pub type Posed = geometry::Pose<f64>;
pub type Intrinsicsd = geometry::Intrinsics<f64>;
/// Single precision geometry.
pub type Point3f = geometry::Point3<f32>;
pub type Posef = geometry::Pose<f32>;
pub type Intrinsicsf = geometry::Intrinsics<f32>;
