//! Experiment runner: configs, the training loop, run directories and the
//! evaluation commands built on them.

mod commands;
mod config;
mod sweep;
mod train;

use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

pub use commands::{
    agreement_command, classify_command, eval_command, fewshot_command, generate_command, impute_command,
    perplexity_command, robustness_command, warm_start_command, ImputeRow,
};
pub use config::{DataSource, ModelKind, RunConfig, VectorSpec, RUN_KEYS};
pub use sweep::{sweep, SweepAxis, SweepCell, SweepOutcome};
pub use train::{train_in_memory, train_run, EpochRecord, RunRecord, TrainOutput, AU_THRESHOLD};

use crate::autodiff::Tensor;
use crate::data::{
    generate_synthetic_text, generate_synthetic_vectors, load_text_splits, Batch, DataError, Dataset, RawSplits,
    VectorData, Vocab,
};
use crate::downstream::DownstreamError;
use crate::kv::{KvError, KvMap};
use crate::metrics::MetricError;
use crate::models::{checkpoint, LatentEncoder, ModelError, SeqVae, StepStats, VectorVae};
use crate::objectives::ObjectiveConfig;

/// Environment variable naming the directory that holds run directories
/// when a config sets no `out_dir`.
pub const OUTPUT_ROOT_ENV: &str = "ISOVAE_OUTPUT_ROOT";

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const RECORD_FILE: &str = "record.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

const EVAL_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("config: {0}")]
    Kv(#[from] KvError),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: u64 },
    #[error("run directory {0} already exists; pass --force to overwrite it")]
    Exists(PathBuf),
    #[error("{0} does not hold a finished run")]
    NotARun(PathBuf),
    #[error("{command} needs {needs}")]
    Unsupported { command: &'static str, needs: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Downstream(#[from] DownstreamError),
    #[error("{failed} of {total} sweep runs failed")]
    SweepFailures { failed: usize, total: usize },
}

impl RunError {
    /// 2 for configuration problems, 1 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Kv(_) | RunError::Exists(_) => 2,
            RunError::Data(
                DataError::Spec(_) | DataError::Kv(_) | DataError::Noise(_) | DataError::VocabTooSmall(_),
            ) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Root under which run directories are created.
pub fn output_root(config: &RunConfig) -> PathBuf {
    config
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn run_dir(config: &RunConfig) -> PathBuf {
    output_root(config).join(&config.run_id)
}

/// Train/dev/test data of one run.
#[derive(Clone, Debug, PartialEq)]
pub enum RunData {
    Text(Dataset),
    Vectors {
        train: VectorData,
        dev: VectorData,
        test: VectorData,
    },
}

impl RunData {
    /// Loads the configured source. Text data reuses `vocab` when given.
    pub fn load(config: &RunConfig, vocab: Option<Vocab>) -> Result<Self, RunError> {
        let text = |raw: RawSplits| -> Result<RunData, RunError> {
            Ok(RunData::Text(match vocab {
                Some(v) => Dataset::with_vocab(&raw, v),
                None => Dataset::from_raw(&raw, config.min_freq, config.max_vocab)?,
            }))
        };
        match &config.data {
            DataSource::Synthetic(spec) => text(generate_synthetic_text(spec)?),
            DataSource::Files { path, labeled } => text(load_text_splits(path, *labeled, 0)?),
            DataSource::Vectors(v) => {
                let all = generate_synthetic_vectors(v.train + v.dev + v.test, v.dim, v.classes, v.noise, v.seed)?;
                Ok(RunData::Vectors {
                    train: all.slice(0..v.train),
                    dev: all.slice(v.train..v.train + v.dev),
                    test: all.slice(v.train + v.dev..all.len()),
                })
            }
        }
    }

    pub fn train_len(&self) -> usize {
        match self {
            RunData::Text(d) => d.train.len(),
            RunData::Vectors { train, .. } => train.len(),
        }
    }

    pub fn dev_len(&self) -> usize {
        match self {
            RunData::Text(d) => d.dev.len(),
            RunData::Vectors { dev, .. } => dev.len(),
        }
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        match self {
            RunData::Text(d) => Some(&d.vocab),
            RunData::Vectors { .. } => None,
        }
    }

    pub fn text(&self) -> Option<&Dataset> {
        match self {
            RunData::Text(d) => Some(d),
            RunData::Vectors { .. } => None,
        }
    }

    /// Keeps only the given training rows.
    pub fn with_train_subset(&self, indices: &[usize]) -> RunData {
        match self {
            RunData::Text(d) => RunData::Text(Dataset {
                train: d.train.subset(indices),
                ..d.clone()
            }),
            RunData::Vectors { train, dev, test } => RunData::Vectors {
                train: VectorData {
                    x: indices.iter().map(|&i| train.x[i].clone()).collect(),
                    labels: indices.iter().map(|&i| train.labels[i]).collect(),
                    prototypes: train.prototypes.clone(),
                },
                dev: dev.clone(),
                test: test.clone(),
            },
        }
    }

    /// Test-split labels, if the data has them.
    pub fn test_labels(&self) -> Option<&[usize]> {
        match self {
            RunData::Text(d) => d.test.labels.as_deref(),
            RunData::Vectors { test, .. } => Some(&test.labels),
        }
    }
}

/// A trained sequence or vector model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Seq(SeqVae),
    Vector(VectorVae),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Model {
    pub fn build(config: &RunConfig, data: &RunData, objective: ObjectiveConfig) -> Result<Self, RunError> {
        Ok(match data {
            RunData::Text(d) => Model::Seq(SeqVae::new(config.seq_config(d.vocab.len(), objective), config.seed)?),
            RunData::Vectors { train, .. } => Model::Vector(VectorVae::new(
                config.vector_config(train.dim(), objective),
                config.seed,
            )?),
        })
    }

    pub fn from_arrays(config: &RunConfig, data: &RunData, arrays: Vec<(String, Tensor)>) -> Result<Self, RunError> {
        let objective = config.resolved_objective(0);
        Ok(match data {
            RunData::Text(d) => Model::Seq(SeqVae::from_arrays(
                config.seq_config(d.vocab.len(), objective),
                arrays,
            )?),
            RunData::Vectors { train, .. } => Model::Vector(VectorVae::from_arrays(
                config.vector_config(train.dim(), objective),
                arrays,
            )?),
        })
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Model::Seq(m) => m.latent_dim(),
            Model::Vector(m) => m.latent_dim(),
        }
    }

    pub fn seq(&self) -> Option<&SeqVae> {
        match self {
            Model::Seq(m) => Some(m),
            Model::Vector(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&VectorVae> {
        match self {
            Model::Vector(m) => Some(m),
            Model::Seq(_) => None,
        }
    }

    pub fn params_mut(&mut self) -> &mut crate::autodiff::ParamStore {
        match self {
            Model::Seq(m) => m.params_mut(),
            Model::Vector(m) => m.params_mut(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let store = match self {
            Model::Seq(m) => m.params(),
            Model::Vector(m) => m.params(),
        };
        Ok(checkpoint::write_arrays(path, store.iter())?)
    }

    /// Loss and gradients on training rows `idx` with fresh noise from `rng`.
    pub(crate) fn step<R: Rng + ?Sized>(
        &self,
        data: &RunData,
        idx: &[usize],
        rng: &mut R,
        step: u64,
    ) -> Result<(StepStats, Vec<Tensor>), RunError> {
        Ok(match (self, data) {
            (Model::Seq(m), RunData::Text(d)) => {
                let batch = Batch::from_indices(&d.train.sentences, idx);
                let eps = m.noise(idx.len(), rng);
                m.loss_and_grads(&batch, Some(&eps), step)?
            }
            (Model::Vector(m), RunData::Vectors { train, .. }) => {
                let xs: Vec<Vec<f64>> = idx.iter().map(|&i| train.x[i].clone()).collect();
                let eps = m.step_noise(idx.len(), rng);
                m.loss_and_grads(&xs, &eps, step)?
            }
            _ => return Err(RunError::Config("model and data kinds differ".into())),
        })
    }

    pub fn evaluate(&self, data: &RunData, split: Split, seed: u64) -> Result<StepStats, RunError> {
        Ok(match (self, data) {
            (Model::Seq(m), RunData::Text(d)) => m.evaluate(&pick(d, split).sentences, EVAL_BATCH, seed)?,
            (Model::Vector(m), RunData::Vectors { .. }) => {
                m.evaluate(&pick_vectors(data, split).x, EVAL_BATCH, seed)?
            }
            _ => return Err(RunError::Config("model and data kinds differ".into())),
        })
    }

    pub fn means(&self, data: &RunData, split: Split) -> Result<Vec<Vec<f64>>, RunError> {
        Ok(match (self, data) {
            (Model::Seq(m), RunData::Text(d)) => m.means(&pick(d, split).sentences)?,
            (Model::Vector(m), RunData::Vectors { .. }) => m.means(&pick_vectors(data, split).x)?,
            _ => return Err(RunError::Config("model and data kinds differ".into())),
        })
    }

    pub fn samples(&self, data: &RunData, split: Split, seed: u64) -> Result<Vec<Vec<f64>>, RunError> {
        Ok(match (self, data) {
            (Model::Seq(m), RunData::Text(d)) => m.samples(&pick(d, split).sentences, seed)?,
            (Model::Vector(m), RunData::Vectors { .. }) => m.samples(&pick_vectors(data, split).x, seed)?,
            _ => return Err(RunError::Config("model and data kinds differ".into())),
        })
    }
}

fn pick(d: &Dataset, split: Split) -> &crate::data::LabeledCorpus {
    match split {
        Split::Train => &d.train,
        Split::Dev => &d.dev,
        Split::Test => &d.test,
    }
}

fn pick_vectors(data: &RunData, split: Split) -> &VectorData {
    match data {
        RunData::Vectors { train, dev, test } => match split {
            Split::Train => train,
            Split::Dev => dev,
            Split::Test => test,
        },
        RunData::Text(_) => unreachable!("checked by callers"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Best,
    Final,
}

impl CheckpointKind {
    pub fn file_name(self) -> &'static str {
        match self {
            CheckpointKind::Best => BEST_CHECKPOINT,
            CheckpointKind::Final => FINAL_CHECKPOINT,
        }
    }
}

impl std::str::FromStr for CheckpointKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "best" => Ok(CheckpointKind::Best),
            "final" => Ok(CheckpointKind::Final),
            other => Err(format!("unknown checkpoint '{other}' (best, final)")),
        }
    }
}

/// A finished run reloaded from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub data: RunData,
    pub model: Model,
}

/// Reads the config sidecar, vocabulary and checkpoint of a run directory.
pub fn load_run(dir: &Path, which: CheckpointKind) -> Result<LoadedRun, RunError> {
    let config_path = dir.join(CONFIG_FILE);
    if !config_path.exists() {
        return Err(RunError::NotARun(dir.to_path_buf()));
    }
    let kv = KvMap::parse(&read_file(&config_path)?)?;
    let config = RunConfig::from_kv(&kv)?;
    let vocab = if config.model.is_sequence() {
        let v = Vocab::from_text(&read_file(&dir.join(VOCAB_FILE))?)?;
        if let Some(expected) = kv.get::<usize>("vocab_size")? {
            if expected != v.len() {
                return Err(ModelError::Checkpoint(format!(
                    "vocabulary has {} entries, config records {expected}",
                    v.len()
                ))
                .into());
            }
        }
        Some(v)
    } else {
        None
    };
    let data = RunData::load(&config, vocab)?;
    let arrays = checkpoint::read_arrays(&dir.join(which.file_name()))?;
    let model = Model::from_arrays(&config, &data, arrays)?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        data,
        model,
    })
}
