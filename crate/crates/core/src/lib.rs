//! Minimum phi-divergence estimation for latent class models with binary
//! items under a linear-logistic parametrization.
//!
//! The crate covers the model itself ([`model`]), the divergence objectives
//! ([`divergence`]), a multistart minimizer ([`optimizer`]), large-sample
//! covariances ([`asymptotics`]), Monte Carlo studies ([`simulation`]) and the
//! file formats and command line used by the `lcmdiv` binary ([`io`], [`cli`]).
//!
//! ```
//! use lcmdiv::divergence::Family;
//! use lcmdiv::fixtures::{coleman_counts, coleman_spec};
//! use lcmdiv::optimizer::{multistart_fit, MultistartConfig};
//!
//! let spec = coleman_spec();
//! let mut config = MultistartConfig::for_spec(&spec);
//! config.n_initial = 20;
//! let fit = multistart_fit(&spec, &coleman_counts(), &Family::power(0.0), &config).unwrap();
//! assert!(fit.objective_value < 0.01);
//! ```

pub mod asymptotics;
pub mod cli;
pub mod divergence;
pub mod error;
pub mod fixtures;
pub mod identify;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod simulation;

pub use divergence::{Family, PhiFunction, PowerDivergence};
pub use error::{Error, Result};
pub use model::{ModelSpec, ObservedCounts, ParameterVector};
pub use optimizer::{multistart_fit, FitResult, MultistartConfig};
