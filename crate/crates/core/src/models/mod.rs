//! Sequence and vector VAEs, their autoencoder baselines, and the auxiliary
//! LSTM language model and text classifier used by the metrics.

pub mod checkpoint;
mod layers;
mod lm;
mod seq_vae;
#[cfg(test)]
mod tests;
mod vector_vae;

use thiserror::Error;

pub use layers::{uniform_init, Linear, Lstm, LstmState};
pub use lm::{argmax, fit, LanguageModel, LmConfig, TextClassifier, TextClassifierConfig};
pub use seq_vae::{PriorConfig, SeqForward, SeqVae, SeqVaeConfig};
pub use vector_vae::{VectorVae, VectorVaeConfig};

use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::distributions::{DistributionError, Geometry};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("latent code has length {got}, model expects {expected}")]
    LatentDim { expected: usize, got: usize },
    #[error("expected a {expected} posterior model, got {got}")]
    Geometry { expected: Geometry, got: Geometry },
    #[error("input value {0} outside [0, 1]")]
    InputRange(f64),
    #[error("input has length {got}, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Scalar terms of one evaluated objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub rec: f64,
    pub kl: f64,
}

/// Batch-mean closed-form KL of `N(mu, exp(lv))` rows to the standard normal.
pub fn kl_standard_graph(tape: &mut Tape, mu: Var, lv: Var) -> Result<Var, AutodiffError> {
    let (b, d) = {
        let v = tape.value(mu);
        (v.rows(), v.cols())
    };
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(lv)?;
    let t = tape.add(mu2, var)?;
    let t = tape.sub(t, lv)?;
    let s = tape.sum(t)?;
    let s = tape.scale(s, 0.5 / b as f64)?;
    tape.add_scalar(s, -0.5 * d as f64)
}

/// `z = mu + exp(lv / 2) * eps` with constant `eps`.
pub fn reparam_graph(tape: &mut Tape, mu: Var, lv: Var, eps: &[f64]) -> Result<Var, AutodiffError> {
    let (b, d) = {
        let v = tape.value(mu);
        (v.rows(), v.cols())
    };
    let e = layers::constant(tape, b, d, eps.to_vec())?;
    let half = tape.scale(lv, 0.5)?;
    let sd = tape.exp(half)?;
    let noise = tape.mul(sd, e)?;
    tape.add(mu, noise)
}

/// Copies named arrays into a freshly built store, checking that names and
/// shapes match one to one.
pub(crate) fn load_into(store: &mut ParamStore, arrays: Vec<(String, Tensor)>) -> Result<(), ModelError> {
    if arrays.len() != store.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint holds {} arrays, model has {}",
            arrays.len(),
            store.len()
        )));
    }
    for (name, t) in arrays {
        let id = store
            .id_of(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unexpected array '{name}'")))?;
        let slot = store.get_mut(id);
        if slot.shape() != t.shape() {
            return Err(ModelError::Checkpoint(format!(
                "'{name}' has shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

/// Frozen encoder access for downstream evaluation.
pub trait LatentEncoder {
    type Input: Clone;

    fn latent_dim(&self) -> usize;

    fn means(&self, inputs: &[Self::Input]) -> Result<Vec<Vec<f64>>, ModelError>;

    /// One draw `z ~ q(z|x)` per input.
    fn samples(&self, inputs: &[Self::Input], seed: u64) -> Result<Vec<Vec<f64>>, ModelError>;
}

impl LatentEncoder for SeqVae {
    type Input = Vec<usize>;

    fn latent_dim(&self) -> usize {
        self.config().latent_dim
    }

    fn means(&self, inputs: &[Vec<usize>]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.posterior_means(inputs, 64)
    }

    fn samples(&self, inputs: &[Vec<usize>], seed: u64) -> Result<Vec<Vec<f64>>, ModelError> {
        self.posterior_samples(inputs, 64, seed)
    }
}

impl LatentEncoder for VectorVae {
    type Input = Vec<f64>;

    fn latent_dim(&self) -> usize {
        self.config().latent_dim
    }

    fn means(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.posterior_means(inputs)
    }

    fn samples(&self, inputs: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>, ModelError> {
        self.posterior_samples(inputs, seed)
    }
}
