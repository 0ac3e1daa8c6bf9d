//! Pipeline driver behind the `bodymesh` binary.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod stage;

pub use config::{ModelKind, PipelineConfig, SCHEMA_VERSION};
pub use error::{CliError, CliResult};
pub use pipeline::Context;
