//! File formats and the drivers behind the command-line tool.

pub mod calibrate;
pub mod manifest;
pub mod report;
pub mod synth;
pub mod tensor_io;
pub mod validate;

pub use calibrate::{calibrate, evaluate, CalibrateOptions, EvalRow};
pub use manifest::{LayerEntry, Manifest};
pub use report::CalibrationReport;
pub use tensor_io::{load_tensor, save_tensor, DType};
pub use validate::{run_suite, Suite, SuiteResult};
