//! Variational autoencoders with isotropic or diagonal Gaussian posteriors,
//! a tape autodiff to train them, and the metrics and experiment runner
//! used to compare the two.

pub mod autodiff;
pub mod data;
pub mod distributions;
pub mod downstream;
pub mod kv;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod runner;
pub mod seeding;

pub use distributions::{GaussianPosterior, Geometry, Prior};
pub use kv::{KvError, KvMap};
pub use models::{ModelError, SeqVae, SeqVaeConfig, VectorVae, VectorVaeConfig};
pub use objectives::ObjectiveConfig;
pub use runner::{RunConfig, RunError};
