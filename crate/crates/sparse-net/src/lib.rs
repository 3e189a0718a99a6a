//! Group lasso (GL) and two-stage group lasso + adaptive group lasso
//! (GL+AGL) feature selection for feed-forward networks with analytic
//! activations.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod estimators;
pub mod net;
pub mod optimizer;
pub mod par;
pub mod penalty;
pub mod report;
pub mod rng;
pub mod selfcheck;

pub use data::Dataset;
pub use error::{Error, Result};
pub use net::{Activation, NetworkArch, NetworkParams};
pub use optimizer::{fit, FitResult, OptConfig};
pub use penalty::{GroupWeight, PenaltySpec};
pub use estimators::{Method, SelectConfig};
