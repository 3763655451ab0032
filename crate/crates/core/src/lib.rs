//! Core library for the GenCAD pipeline: the parameterized CAD command
//! language, an SDF/CSG geometry kernel that executes command sequences into
//! solids, rendering and sketch synthesis, and the evaluation metric suite.
//!
//! The numeric routines that are meaningful at more than one precision
//! (quantization, point-cloud metrics, Fréchet distance) are generic over
//! [`scalar::Real`]; the geometry kernel itself works in `f64`.

pub mod geom;
pub mod img;
pub mod lang;
pub mod metrics;
pub mod scalar;

pub use lang::{CadCommand, CadSequence, CommandType, SeqMatrix};
pub use scalar::Real;

/// Point-cloud chamfer distance at the kernel's native precision.
pub type Chamfer64 = metrics::chamfer::KdTree3<f64>;
