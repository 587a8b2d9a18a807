//! Bayesian hierarchical reconstruction of a gridded temperature field and
//! its hemispheric mean from multiproxy series.
//!
//! The crate is organised by layer of the model:
//!
//! - [`model`]: domain types, configuration validation and the exact joint density.
//! - [`ssm`]: the latent process cast as a linear-Gaussian state-space model
//!   (Kalman filter, RTS smoother, forward-filter backward-sample).
//! - [`gibbs`]: full-conditional updates, the chain driver and convergence diagnostics.
//! - [`pseudoproxy`]: synthetic truths and proxy networks.
//! - [`baseline`]: the direct ridge/OLS regression reconstruction.
//! - [`evaluation`]: scoring, coverage and simulation-based calibration.
//! - [`io`]: CSV ingestion, the JSON run configuration and draw persistence.

pub mod baseline;
pub mod dist;
pub mod error;
pub mod evaluation;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pseudoproxy;
pub mod ssm;

pub use error::{Error, Result};
pub use gibbs::{run_chain, run_chains, ChainState, Draw, DrawStore};
pub use model::{
    Dataset, ForcingSeries, GridSpec, InstrumentalSeries, LatentStates, ModelConfig, Params,
    ProxyPanel,
};
