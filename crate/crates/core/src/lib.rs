//! Pseudo-labeling engine for semi-supervised 3D keypoint learning built on
//! piecewise planar hulls: category hull registry, orthographic keypoint
//! geometry, depth-ordered polygon rasterization, occlusion and depth-flip
//! reasoning, Monte-Carlo-dropout uncertainty fusion, IOU-driven 2D
//! pseudo-target generation, and a synthetic oracle that drives the full
//! recursion loop at desk scale.

pub mod error;
pub mod geometry;
pub mod hull;
pub mod losses;
pub mod metrics;
pub mod pseudo2d;
pub mod raster;
pub mod simkit;
pub mod stats;
pub mod uncertainty;
pub mod visibility;

pub use error::{Error, Result};
pub use geometry::{Coefficients, KeypointFile, KeypointSet2D, KeypointSet3D, Rotation, ShapeBasis};
pub use hull::{Category, HullSchema, Plane, Registry, SelectionMask, ValidationReport};
pub use raster::{Frame, MaskGrid, PlanarMap, PlanePolygon2D, Viewport, UNCERTAIN};
pub use uncertainty::{LogitsGrid, LogitsStack};
