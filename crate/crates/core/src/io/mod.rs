//! File formats: CSV inputs, the JSON run configuration, draw files,
//! posterior summaries and run manifests.

pub mod config;
pub mod draws;
pub mod inputs;
pub mod manifest;
pub mod summary;

pub use config::RunConfig;
pub use draws::{read_draws, write_draws};
pub use inputs::{parse_inputs, read_forcings, write_inputs, InputPaths, ParsedInputs, ProxyScaling};
pub use manifest::RunManifest;
pub use summary::{summarize, SummaryRow};
