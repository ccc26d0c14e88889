//! `key=value` run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::RunError;
use crate::data::{SyntheticSpec, SYNTHETIC_KEYS};
use crate::distributions::Geometry;
use crate::kv::KvMap;
use crate::models::{PriorConfig, SeqVaeConfig, VectorVaeConfig};
use crate::objectives::{ObjectiveConfig, Warmup};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    SeqVae,
    SeqAe,
    VectorVae,
    VectorAe,
}

impl ModelKind {
    pub fn is_sequence(self) -> bool {
        matches!(self, ModelKind::SeqVae | ModelKind::SeqAe)
    }

    pub fn is_autoencoder(self) -> bool {
        matches!(self, ModelKind::SeqAe | ModelKind::VectorAe)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::SeqVae => "seq_vae",
            ModelKind::SeqAe => "seq_ae",
            ModelKind::VectorVae => "vector_vae",
            ModelKind::VectorAe => "vector_ae",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "seq_vae" => Ok(ModelKind::SeqVae),
            "seq_ae" => Ok(ModelKind::SeqAe),
            "vector_vae" => Ok(ModelKind::VectorVae),
            "vector_ae" => Ok(ModelKind::VectorAe),
            other => Err(format!(
                "unknown model '{other}' (seq_vae, seq_ae, vector_vae, vector_ae)"
            )),
        }
    }
}

/// Binary-vector corpus drawn around class prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub dim: usize,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for VectorSpec {
    fn default() -> Self {
        VectorSpec {
            train: 2000,
            dev: 200,
            test: 200,
            dim: 64,
            classes: 4,
            noise: 0.1,
            seed: 0,
        }
    }
}

const VECTOR_KEYS: [&str; 7] = ["train", "dev", "test", "dim", "classes", "noise", "seed"];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Vectors(VectorSpec),
    /// A directory with `train.txt`/`dev.txt`/`test.txt`, or one file split 80/10/10.
    Files {
        path: PathBuf,
        labeled: bool,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub model: ModelKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub geometry: Geometry,
    pub max_decode_len: usize,
    pub prior: PriorConfig,
    /// Warm-up is resolved against the step count when training starts.
    pub objective: ObjectiveConfig,
    /// `None`: 20% of all steps for constrained sequence models; `Some(0)`: off.
    pub c_warmup_steps: Option<u64>,
    pub data: DataSource,
    pub min_freq: usize,
    pub max_vocab: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub record_time: bool,
    /// Isotropic run directory whose final weights are untied to start this run.
    pub warm_start_from: Option<PathBuf>,
}

pub const RUN_KEYS: [&str; 29] = [
    "run_id",
    "model",
    "embed_dim",
    "hidden_dim",
    "hidden_dims",
    "latent_dim",
    "geometry",
    "max_decode_len",
    "prior",
    "prior_components",
    "prior_geometry",
    "objective",
    "target_c",
    "beta",
    "iwae_k",
    "c_warmup_steps",
    "data",
    "labeled",
    "min_freq",
    "max_vocab",
    "epochs",
    "batch_size",
    "lr",
    "clip_norm",
    "seed",
    "out_dir",
    "record_time",
    "warm_start_from",
    "vocab_size",
];

fn config_err(e: impl fmt::Display) -> RunError {
    RunError::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self, RunError> {
        let mut plain = KvMap::default();
        let mut synthetic = KvMap::default();
        let mut vectors = KvMap::default();
        for key in kv.keys() {
            let value = kv.get_str(key).expect("listed key");
            if let Some(k) = key.strip_prefix("synthetic.") {
                synthetic.insert(k, value);
            } else if let Some(k) = key.strip_prefix("vectors.") {
                vectors.insert(k, value);
            } else {
                plain.insert(key, value);
            }
        }
        plain.reject_unknown(&RUN_KEYS)?;
        // recorded by snapshots for checkpoint checks, never read back
        let _ = plain.get::<usize>("vocab_size")?;

        let model: ModelKind = plain.get_or("model", ModelKind::SeqVae)?;
        let objective_name: String = plain.require("objective")?;
        let objective = match objective_name.as_str() {
            "plain" => ObjectiveConfig::Plain,
            "constrained" => ObjectiveConfig::Constrained {
                target: plain.require("target_c")?,
                beta: plain.get_or("beta", 1.0)?,
                warmup: None,
            },
            "beta" => ObjectiveConfig::Beta {
                beta: plain.require("beta")?,
            },
            "iwae" => ObjectiveConfig::Iwae {
                k: plain.require("iwae_k")?,
            },
            other => {
                return Err(config_err(format!(
                    "unknown objective '{other}' (plain, constrained, beta, iwae)"
                )))
            }
        };
        objective.validate().map_err(config_err)?;
        if model.is_sequence() && objective.iwae_samples().is_some() {
            return Err(config_err("the iwae objective needs a vector model"));
        }

        let data_value: String = plain.require("data")?;
        let data = match data_value.as_str() {
            "synthetic" => DataSource::Synthetic(SyntheticSpec::from_kv(&synthetic)?),
            "vectors" => {
                vectors.reject_unknown(&VECTOR_KEYS)?;
                let d = VectorSpec::default();
                DataSource::Vectors(VectorSpec {
                    train: vectors.get_or("train", d.train)?,
                    dev: vectors.get_or("dev", d.dev)?,
                    test: vectors.get_or("test", d.test)?,
                    dim: vectors.get_or("dim", d.dim)?,
                    classes: vectors.get_or("classes", d.classes)?,
                    noise: vectors.get_or("noise", d.noise)?,
                    seed: vectors.get_or("seed", d.seed)?,
                })
            }
            path => DataSource::Files {
                path: PathBuf::from(path),
                labeled: plain.get_or("labeled", false)?,
            },
        };
        if !matches!(data, DataSource::Synthetic(_)) && !synthetic.is_empty() {
            return Err(config_err("synthetic.* keys need data=synthetic"));
        }
        if !matches!(data, DataSource::Vectors(_)) && !vectors.is_empty() {
            return Err(config_err("vectors.* keys need data=vectors"));
        }
        if model.is_sequence() == matches!(data, DataSource::Vectors(_)) {
            return Err(config_err(format!(
                "model {model} does not match data source '{data_value}'"
            )));
        }

        let prior = match plain.get_or("prior", "standard".to_string())?.as_str() {
            "standard" => PriorConfig::StandardNormal,
            "mixture" => PriorConfig::Mixture {
                components: plain.get_or("prior_components", 4)?,
                geometry: plain.get_or("prior_geometry", Geometry::Diagonal)?,
            },
            other => return Err(config_err(format!("unknown prior '{other}' (standard, mixture)"))),
        };

        let cfg = RunConfig {
            run_id: plain.get_or("run_id", "run".to_string())?,
            model,
            embed_dim: plain.get_or("embed_dim", 32)?,
            hidden_dim: plain.get_or("hidden_dim", 64)?,
            hidden_dims: plain.get_list("hidden_dims")?.unwrap_or_else(|| vec![64, 64]),
            latent_dim: plain.get_or("latent_dim", 8)?,
            geometry: plain.get_or("geometry", Geometry::Diagonal)?,
            max_decode_len: plain.get_or("max_decode_len", 20)?,
            prior,
            objective,
            c_warmup_steps: plain.get("c_warmup_steps")?,
            data,
            min_freq: plain.get_or("min_freq", 1)?,
            max_vocab: plain.get_or("max_vocab", 20_000)?,
            epochs: plain.get_or("epochs", 20)?,
            batch_size: plain.get_or("batch_size", 32)?,
            lr: plain.get_or("lr", 0.0005)?,
            clip_norm: plain.get_or("clip_norm", 5.0)?,
            seed: plain.get_or("seed", 0)?,
            out_dir: plain.get::<String>("out_dir")?.map(PathBuf::from),
            record_time: plain.get_or("record_time", false)?,
            warm_start_from: plain.get::<String>("warm_start_from")?.map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(config_err("run_id must be a non-empty file name"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err("epochs and batch_size must be positive"));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() || self.clip_norm <= 0.0 || !self.clip_norm.is_finite() {
            return Err(config_err("lr and clip_norm must be positive"));
        }
        if self.warm_start_from.is_some() && (self.geometry != Geometry::Diagonal || !self.model.is_sequence()) {
            return Err(config_err("warm starts train a diagonal sequence model"));
        }
        Ok(())
    }

    /// Canonical snapshot; parsing it yields the same config.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("run_id", &self.run_id);
        kv.insert("model", self.model);
        kv.insert("embed_dim", self.embed_dim);
        kv.insert("hidden_dim", self.hidden_dim);
        let hd: Vec<String> = self.hidden_dims.iter().map(usize::to_string).collect();
        kv.insert("hidden_dims", hd.join(","));
        kv.insert("latent_dim", self.latent_dim);
        kv.insert("geometry", self.geometry);
        kv.insert("max_decode_len", self.max_decode_len);
        match &self.prior {
            PriorConfig::StandardNormal => kv.insert("prior", "standard"),
            PriorConfig::Mixture { components, geometry } => {
                kv.insert("prior", "mixture");
                kv.insert("prior_components", components);
                kv.insert("prior_geometry", geometry);
            }
        }
        kv.insert("objective", self.objective.name());
        match &self.objective {
            ObjectiveConfig::Plain => {}
            ObjectiveConfig::Constrained { target, beta, .. } => {
                kv.insert("target_c", target);
                kv.insert("beta", beta);
            }
            ObjectiveConfig::Beta { beta } => kv.insert("beta", beta),
            ObjectiveConfig::Iwae { k } => kv.insert("iwae_k", k),
        }
        if let Some(s) = self.c_warmup_steps {
            kv.insert("c_warmup_steps", s);
        }
        match &self.data {
            DataSource::Synthetic(spec) => {
                kv.insert("data", "synthetic");
                let skv = spec.to_kv();
                for k in SYNTHETIC_KEYS {
                    kv.insert(format!("synthetic.{k}"), skv.get_str(k).expect("written"));
                }
            }
            DataSource::Vectors(v) => {
                kv.insert("data", "vectors");
                kv.insert("vectors.train", v.train);
                kv.insert("vectors.dev", v.dev);
                kv.insert("vectors.test", v.test);
                kv.insert("vectors.dim", v.dim);
                kv.insert("vectors.classes", v.classes);
                kv.insert("vectors.noise", v.noise);
                kv.insert("vectors.seed", v.seed);
            }
            DataSource::Files { path, labeled } => {
                kv.insert("data", path.display());
                kv.insert("labeled", labeled);
            }
        }
        kv.insert("min_freq", self.min_freq);
        kv.insert("max_vocab", self.max_vocab);
        kv.insert("epochs", self.epochs);
        kv.insert("batch_size", self.batch_size);
        kv.insert("lr", self.lr);
        kv.insert("clip_norm", self.clip_norm);
        kv.insert("seed", self.seed);
        if let Some(o) = &self.out_dir {
            kv.insert("out_dir", o.display());
        }
        kv.insert("record_time", self.record_time);
        if let Some(w) = &self.warm_start_from {
            kv.insert("warm_start_from", w.display());
        }
        kv
    }

    /// The objective with its warm-up schedule resolved for `total_steps`.
    pub fn resolved_objective(&self, total_steps: u64) -> ObjectiveConfig {
        match self.objective {
            ObjectiveConfig::Constrained { target, beta, .. } => {
                let steps = match self.c_warmup_steps {
                    Some(s) => s,
                    None if self.model.is_sequence() && self.warm_start_from.is_none() => total_steps / 5,
                    None => 0,
                };
                ObjectiveConfig::Constrained {
                    target,
                    beta,
                    warmup: (steps > 0).then_some(Warmup {
                        start: 0.0,
                        end: target,
                        steps,
                    }),
                }
            }
            ref other => other.clone(),
        }
    }

    pub fn seq_config(&self, vocab_size: usize, objective: ObjectiveConfig) -> SeqVaeConfig {
        SeqVaeConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            geometry: self.geometry,
            objective,
            max_decode_len: self.max_decode_len,
            autoencoder: self.model.is_autoencoder(),
            prior: self.prior.clone(),
        }
    }

    pub fn vector_config(&self, input_dim: usize, objective: ObjectiveConfig) -> VectorVaeConfig {
        VectorVaeConfig {
            input_dim,
            hidden: self.hidden_dims.clone(),
            latent_dim: self.latent_dim,
            geometry: self.geometry,
            objective,
            autoencoder: self.model.is_autoencoder(),
        }
    }
}
