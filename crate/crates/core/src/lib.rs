//! Per-group symmetric quantization with second-moment channel reordering.
//!
//! The crate is organised bottom-up:
//!
//! - [`matrix`] and [`perm`]: dense row-major matrices, channel permutations
//!   and contiguous groupings.
//! - [`quant`]: per-group symmetric quantize/dequantize and its error bound.
//! - [`stats`]: calibration statistics (second moments, extremal ratios,
//!   the proxy objective and the uniform-noise error model).
//! - [`reorder`]: moment sorting, the joint activation/weight criterion,
//!   alpha search and the calibration acceptance rule.
//! - [`transforms`]: blockwise Walsh-Hadamard transform and permutation
//!   folding into norms and preceding linears.
//! - [`pipeline`]: tensor files, manifests, reports and the calibration,
//!   evaluation and validation drivers behind the CLI.

pub mod error;
pub mod matrix;
pub mod perm;
pub mod pipeline;
pub mod quant;
pub mod reorder;
pub mod stats;
pub mod transforms;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use perm::{Grouping, Permutation};
pub use quant::QuantConfig;
