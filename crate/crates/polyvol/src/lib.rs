//! Differentiable volumetric renderer and gradient-based scene optimizer
//! whose primitives are transparent, homogeneous-density polyhedra
//! (octahedra and tetrahedra) bounded by triangular faces.
//!
//! The pipeline projects primitives into an affine ray-space approximation,
//! rasterizes them tile by tile with per-pixel ray-triangle intersections,
//! composites chord-based opacities front to back, and backpropagates image
//! losses analytically onto every primitive feature. Population control
//! (clone/split/prune or MCMC-style relocation) adapts the primitive count
//! during training. A brute-force oracle renderer provides an independent
//! correctness reference.
//!
//! Everything is generic over the scalar type: `f32` is the performance
//! default, `f64` backs the gradient and oracle tolerances.

pub mod appearance;
pub mod backward;
pub mod error;
pub mod fixtures;
pub mod imagebuf;
pub mod math;
pub mod metrics;
pub mod oracle;
pub mod population;
pub mod primitives;
pub mod projection;
pub mod raster;
pub mod sceneio;
pub mod trainer;

pub use error::{Error, Result};
pub use imagebuf::{ImageBuf, ScalarMap};
pub use math::{Mat3, Quat, Real, Vec3};
pub use primitives::{PrimitiveKind, PrimitiveSet};
pub use projection::{CameraModel, ProjectionMode};
pub use raster::{render, RenderOptions};
