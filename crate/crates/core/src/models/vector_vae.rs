//! MLP VAE over binary vectors with a Bernoulli likelihood.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{constant, Linear};
use super::{kl_standard_graph, reparam_graph, ModelError, StepStats};
use crate::autodiff::{AutodiffError, Bound, ParamStore, Tape, Tensor, Var};
use crate::distributions::{log_sum_exp, GaussianPosterior, Geometry};
use crate::kv::KvMap;
use crate::objectives::ObjectiveConfig;
use crate::seeding::{indexed_rng, stream_rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct VectorVaeConfig {
    pub input_dim: usize,
    /// Encoder widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub geometry: Geometry,
    pub objective: ObjectiveConfig,
    pub autoencoder: bool,
}

impl VectorVaeConfig {
    pub fn toy(input_dim: usize) -> Self {
        VectorVaeConfig {
            input_dim,
            hidden: vec![64, 64],
            latent_dim: 8,
            geometry: Geometry::Diagonal,
            objective: ObjectiveConfig::Plain,
            autoencoder: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(ModelError::Config("all model dimensions must be positive".into()));
        }
        self.objective.validate().map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn write_kv(&self, kv: &mut KvMap) {
        kv.insert("model", if self.autoencoder { "vector_ae" } else { "vector_vae" });
        kv.insert("input_dim", self.input_dim);
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        kv.insert("hidden_dims", hidden.join(","));
        kv.insert("latent_dim", self.latent_dim);
        kv.insert("geometry", self.geometry);
    }
}

#[derive(Clone, Debug, PartialEq)]
struct VecIds {
    enc: Vec<Linear>,
    mu: Linear,
    logvar: Linear,
    dec: Vec<Linear>,
    out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorVae {
    config: VectorVaeConfig,
    params: ParamStore,
    ids: VecIds,
}

impl VectorVae {
    pub fn new(config: VectorVaeConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let mut s = ParamStore::new();
        let mut enc = Vec::new();
        let mut width = config.input_dim;
        for (i, &h) in config.hidden.iter().enumerate() {
            enc.push(Linear::new(&mut s, &format!("enc.l{i}"), width, h, &mut rng));
            width = h;
        }
        let d = config.latent_dim;
        let mu = Linear::new(&mut s, "head.mu", width, d, &mut rng);
        let lv_out = if config.geometry == Geometry::Diagonal { d } else { 1 };
        let logvar = Linear::new(&mut s, "head.logvar", width, lv_out, &mut rng);
        let mut dec = Vec::new();
        width = d;
        for (i, &h) in config.hidden.iter().rev().enumerate() {
            dec.push(Linear::new(&mut s, &format!("dec.l{i}"), width, h, &mut rng));
            width = h;
        }
        let out = Linear::new(&mut s, "dec.out", width, config.input_dim, &mut rng);
        Ok(VectorVae {
            config,
            params: s,
            ids: VecIds {
                enc,
                mu,
                logvar,
                dec,
                out,
            },
        })
    }

    pub fn from_arrays(config: VectorVaeConfig, arrays: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut m = VectorVae::new(config, 0)?;
        super::load_into(&mut m.params, arrays)?;
        Ok(m)
    }

    pub fn config(&self) -> &VectorVaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_inputs(&self, xs: &[Vec<f64>]) -> Result<(), ModelError> {
        if xs.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        for x in xs {
            if x.len() != self.config.input_dim {
                return Err(ModelError::InputDim {
                    expected: self.config.input_dim,
                    got: x.len(),
                });
            }
            if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(ModelError::InputRange(bad));
            }
        }
        Ok(())
    }

    pub fn noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<f64> {
        (0..rows * self.config.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect()
    }

    fn posterior_graph(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<(Var, Var), AutodiffError> {
        let mut h = x;
        for l in &self.ids.enc {
            let a = l.forward(tape, p, h)?;
            h = tape.tanh(a)?;
        }
        let mu = self.ids.mu.forward(tape, p, h)?;
        let lv = self.ids.logvar.forward(tape, p, h)?;
        let lv = match self.config.geometry {
            Geometry::Diagonal => lv,
            Geometry::Isotropic => tape.repeat_cols(lv, self.config.latent_dim)?,
        };
        Ok((mu, lv))
    }

    fn logits_graph(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var, AutodiffError> {
        let mut h = z;
        for l in &self.ids.dec {
            let a = l.forward(tape, p, h)?;
            h = tape.tanh(a)?;
        }
        self.ids.out.forward(tape, p, h)
    }

    /// Per-row `log p(x|z) + log p(z) - log q(z|x)` as `[B, 1]`; the
    /// `ln 2pi` terms cancel and are omitted.
    fn log_weight_graph(
        &self,
        tape: &mut Tape,
        p: &Bound,
        xs: &[f64],
        mu: Var,
        lv: Var,
        eps: &[f64],
    ) -> Result<Var, AutodiffError> {
        let (b, d) = (eps.len() / self.config.latent_dim, self.config.latent_dim);
        let dim = self.config.input_dim;
        let z = reparam_graph(tape, mu, lv, eps)?;
        let logits = self.logits_graph(tape, p, z)?;
        // softplus(l) - x l, with softplus(l) = relu(l) + ln(1 + exp(-|l|))
        let x = constant(tape, b, dim, xs.to_vec())?;
        let pos = tape.relu(logits)?;
        let a = tape.abs(logits)?;
        let na = tape.neg(a)?;
        let e = tape.exp(na)?;
        let e1 = tape.add_scalar(e, 1.0)?;
        let lg = tape.log(e1)?;
        let sp = tape.add(pos, lg)?;
        let xl = tape.mul(x, logits)?;
        let nll = tape.sub(sp, xl)?;
        let nll = tape.sum_rows(nll)?;
        let z2 = tape.mul(z, z)?;
        let z2 = tape.sum_rows(z2)?;
        let lvs = tape.sum_rows(lv)?;
        let e2: Vec<f64> = eps
            .chunks_exact(d)
            .map(|r| 0.5 * r.iter().map(|v| v * v).sum::<f64>())
            .collect();
        let e2 = constant(tape, b, 1, e2)?;
        // -nll - z2/2 + lvs/2 + eps2/2
        let t = tape.sub(lvs, z2)?;
        let t = tape.scale(t, 0.5)?;
        let t = tape.sub(t, nll)?;
        tape.add(t, e2)
    }

    /// Training graph. `eps` holds one `[B, d]` noise block per importance
    /// sample; non-IWAE objectives use the first block only.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        xs: &[Vec<f64>],
        eps: &[Vec<f64>],
        step: u64,
    ) -> Result<super::SeqForward, AutodiffError> {
        let b = xs.len();
        let flat = xs.concat();
        let x = constant(tape, b, self.config.input_dim, flat.clone())?;
        let (mu, lv) = self.posterior_graph(tape, p, x)?;
        let kl = kl_standard_graph(tape, mu, lv)?;
        let z = match eps.first() {
            Some(e) if !self.config.autoencoder => reparam_graph(tape, mu, lv, e)?,
            _ => mu,
        };
        let logits = self.logits_graph(tape, p, z)?;
        let rec = tape.bce_with_logits(logits, &flat)?;
        let rec = tape.scale(rec, 1.0 / b as f64)?;
        let loss = match self.config.objective.iwae_samples() {
            _ if self.config.autoencoder => rec,
            Some(k) => {
                let ws = eps
                    .iter()
                    .take(k)
                    .map(|e| self.log_weight_graph(tape, p, &flat, mu, lv, e))
                    .collect::<Result<Vec<_>, _>>()?;
                let all = tape.concat(&ws)?;
                let lse = tape.logsumexp_rows(all)?;
                let m = tape.mean(lse)?;
                let nb = tape.neg(m)?;
                tape.add_scalar(nb, (ws.len() as f64).ln())?
            }
            None => self.config.objective.assemble(tape, rec, kl, step)?,
        };
        Ok(super::SeqForward { loss, rec, kl })
    }

    /// Draws the noise blocks one training step needs.
    pub fn step_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let k = self.config.objective.iwae_samples().unwrap_or(1);
        (0..k).map(|_| self.noise(rows, rng)).collect()
    }

    pub fn loss_and_grads(
        &self,
        xs: &[Vec<f64>],
        eps: &[Vec<f64>],
        step: u64,
    ) -> Result<(StepStats, Vec<Tensor>), ModelError> {
        self.check_inputs(xs)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let f = self.forward(&mut tape, &p, xs, eps, step)?;
        tape.backward(f.loss)?;
        let stats = StepStats {
            loss: tape.scalar(f.loss),
            rec: tape.scalar(f.rec),
            kl: tape.scalar(f.kl),
        };
        Ok((stats, p.grads(&tape)))
    }

    pub fn evaluate_batch(&self, xs: &[Vec<f64>], eps: &[Vec<f64>], step: u64) -> Result<StepStats, ModelError> {
        self.check_inputs(xs)?;
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let f = self.forward(&mut tape, &p, xs, eps, step)?;
        Ok(StepStats {
            loss: tape.scalar(f.loss),
            rec: tape.scalar(f.rec),
            kl: tape.scalar(f.kl),
        })
    }

    pub fn evaluate(&self, xs: &[Vec<f64>], batch_size: usize, seed: u64) -> Result<StepStats, ModelError> {
        self.check_inputs(xs)?;
        let mut rng = stream_rng(seed, Stream::Eval);
        let mut acc = StepStats::default();
        for chunk in xs.chunks(batch_size.max(1)) {
            let eps = self.step_noise(chunk.len(), &mut rng);
            let s = self.evaluate_batch(chunk, &eps, u64::MAX)?;
            let w = chunk.len() as f64;
            acc.loss += s.loss * w;
            acc.rec += s.rec * w;
            acc.kl += s.kl * w;
        }
        let n = xs.len() as f64;
        Ok(StepStats {
            loss: acc.loss / n,
            rec: acc.rec / n,
            kl: acc.kl / n,
        })
    }

    pub fn encode(&self, xs: &[Vec<f64>]) -> Result<Vec<GaussianPosterior>, ModelError> {
        self.check_inputs(xs)?;
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = constant(&mut tape, xs.len(), self.config.input_dim, xs.concat())?;
        let (mu, lv) = self.posterior_graph(&mut tape, &p, x)?;
        let (mu, lv) = (tape.value(mu), tape.value(lv));
        (0..xs.len())
            .map(|r| {
                let m = mu.row(r).to_vec();
                Ok(match self.config.geometry {
                    Geometry::Diagonal => GaussianPosterior::diagonal(m, lv.row(r).to_vec())?,
                    Geometry::Isotropic => GaussianPosterior::isotropic(m, lv.get(r, 0))?,
                })
            })
            .collect()
    }

    pub fn posterior_means(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.encode(xs)?.into_iter().map(|q| q.mean().to_vec()).collect())
    }

    pub fn posterior_samples(&self, xs: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut rng = stream_rng(seed, Stream::Eval);
        Ok(self.encode(xs)?.into_iter().map(|q| q.sample(&mut rng).z).collect())
    }

    /// Posterior and summed Bernoulli NLL of `x` decoded from
    /// `z = mu + sigma * eps`; zero noise decodes the mean.
    pub fn vector_forward(&self, x: &[f64], eps: &[f64]) -> Result<(GaussianPosterior, f64), ModelError> {
        self.check_inputs(&[x.to_vec()])?;
        if eps.len() != self.config.latent_dim {
            return Err(ModelError::LatentDim {
                expected: self.config.latent_dim,
                got: eps.len(),
            });
        }
        let q = self.encode(&[x.to_vec()])?.remove(0);
        let z = q.sample_reparameterized(eps)?.z;
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let zv = constant(&mut tape, 1, z.len(), z)?;
        let logits = self.logits_graph(&mut tape, &p, zv)?;
        let rec = tape.bce_with_logits(logits, x)?;
        Ok((q, tape.scalar(rec)))
    }

    /// Log importance weights of `x` under each `d`-sized noise block of `eps`.
    pub fn log_weights(&self, x: &[f64], eps: &[f64]) -> Result<Vec<f64>, ModelError> {
        let d = self.config.latent_dim;
        if eps.is_empty() || !eps.len().is_multiple_of(d) {
            return Err(ModelError::LatentDim {
                expected: d,
                got: eps.len(),
            });
        }
        let k = eps.len() / d;
        let xs = vec![x.to_vec(); k];
        self.check_inputs(&xs)?;
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let flat = xs.concat();
        let xv = constant(&mut tape, k, self.config.input_dim, flat.clone())?;
        let (mu, lv) = self.posterior_graph(&mut tape, &p, xv)?;
        let w = self.log_weight_graph(&mut tape, &p, &flat, mu, lv, eps)?;
        Ok(tape.value(w).data().to_vec())
    }

    /// Single-sample ELBO estimate with noise `eps`.
    pub fn elbo_estimate(&self, x: &[f64], eps: &[f64]) -> Result<f64, ModelError> {
        Ok(self.log_weights(x, eps)?[0])
    }

    /// `log (1/k) sum_i w_i` over the `k = eps.len() / d` noise blocks.
    pub fn iwae_bound_with_noise(&self, x: &[f64], eps: &[f64]) -> Result<f64, ModelError> {
        let w = self.log_weights(x, eps)?;
        Ok(log_sum_exp(&w) - (w.len() as f64).ln())
    }

    pub fn iwae_bound(&self, x: &[f64], k: usize, seed: u64) -> Result<f64, ModelError> {
        if k == 0 {
            return Err(ModelError::Config("IWAE sample count must be at least 1".into()));
        }
        let eps = self.noise(k, &mut indexed_rng(seed, Stream::Reparam, 0));
        self.iwae_bound_with_noise(x, &eps)
    }
}
