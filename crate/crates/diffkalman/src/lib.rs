//! Series IO, simulation, fit reports, likelihood profiles and derivative
//! checks on top of `diffkalman-core`, plus the `diffkalman` command-line
//! tool.

pub mod config;
pub mod error;
pub mod format;
pub mod gradcheck;
pub mod io;
pub mod profile;
pub mod report;
pub mod simulate;

pub use config::{ModelConfig, ModelKind};
pub use error::{Error, Result};
pub use io::{load_series, parse_series, SeriesFile};
