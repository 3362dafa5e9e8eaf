//! Differentiable geometric warping: jittered control points, a thin-plate
//! spline fitted from destination to source coordinates, a dense sampling
//! grid, and bilinear resampling with an analytic backward pass.

pub mod error;
pub mod grid;
pub mod overlay;
pub mod points;
pub mod spec;
pub mod tps;
pub mod warp;

pub use error::{DgwError, Result};
pub use grid::SampleGrid;
pub use points::{sample_control_points, ControlPoints, Point, SamplingMode};
pub use spec::{WarpParams, WarpSpec};
pub use tps::{tps_fit, TpsCoeffs};
pub use warp::{warp, warp_backward, warp_batch, warp_batch_backward, warp_labels};
