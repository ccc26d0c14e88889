//! LSTM sequence VAE with the latent code fed to the decoder at every step.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{constant, Linear, Lstm};
use super::{ModelError, StepStats};
use crate::autodiff::{AutodiffError, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{Batch, EOS, PAD, SOS};
use crate::distributions::{GaussianPosterior, Geometry, Prior};
use crate::kv::KvMap;
use crate::objectives::ObjectiveConfig;
use crate::seeding::{indexed_rng, stream_rng, Stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub enum PriorConfig {
    StandardNormal,
    /// Uniformly weighted Gaussians with trainable means and log-variances.
    Mixture {
        components: usize,
        geometry: Geometry,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqVaeConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub geometry: Geometry,
    pub objective: ObjectiveConfig,
    pub max_decode_len: usize,
    /// Deterministic autoencoder: `z = mu`, no KL term in the loss.
    pub autoencoder: bool,
    pub prior: PriorConfig,
}

impl SeqVaeConfig {
    /// Small dimensions suited to the synthetic corpora.
    pub fn toy(vocab_size: usize) -> Self {
        SeqVaeConfig {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            latent_dim: 8,
            geometry: Geometry::Diagonal,
            objective: ObjectiveConfig::constrained(5.0),
            max_decode_len: 20,
            autoencoder: false,
            prior: PriorConfig::StandardNormal,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if [self.vocab_size, self.embed_dim, self.hidden_dim, self.latent_dim].contains(&0) {
            return Err(ModelError::Config("all model dimensions must be positive".into()));
        }
        if let PriorConfig::Mixture { components: 0, .. } = self.prior {
            return Err(ModelError::Config("mixture prior needs at least one component".into()));
        }
        if self.objective.iwae_samples().is_some() {
            return Err(ModelError::Config(
                "the iwae objective is only available for vector models".into(),
            ));
        }
        self.objective.validate().map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn write_kv(&self, kv: &mut KvMap) {
        kv.insert("model", if self.autoencoder { "seq_ae" } else { "seq_vae" });
        kv.insert("vocab_size", self.vocab_size);
        kv.insert("embed_dim", self.embed_dim);
        kv.insert("hidden_dim", self.hidden_dim);
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
    }
}

#[derive(Clone, Debug, PartialEq)]
struct SeqIds {
    enc_emb: ParamId,
    dec_emb: ParamId,
    enc: Lstm,
    dec: Lstm,
    mu: Linear,
    logvar: Linear,
    out: Linear,
    /// `(mean [d], log-variance [d,1] or [1,1])` per mixture component.
    prior: Vec<(ParamId, ParamId)>,
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SeqForward {
    pub loss: Var,
    /// Summed token NLL per sentence, batch mean.
    pub rec: Var,
    /// Batch-mean KL to the prior.
    pub kl: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqVae {
    config: SeqVaeConfig,
    params: ParamStore,
    ids: SeqIds,
}

impl SeqVae {
    pub fn new(config: SeqVaeConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let (v, e, h, d) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.latent_dim,
        );
        let mut s = ParamStore::new();
        let enc_emb = s.add("enc.emb", super::layers::uniform_init(&[v, e], e, &mut rng));
        let dec_emb = s.add("dec.emb", super::layers::uniform_init(&[v, e], e, &mut rng));
        let enc = Lstm::new(&mut s, "enc.lstm", e, h, &mut rng);
        let mu = Linear::new(&mut s, "head.mu", h, d, &mut rng);
        let lv_out = match config.geometry {
            Geometry::Diagonal => d,
            Geometry::Isotropic => 1,
        };
        let logvar = Linear::new(&mut s, "head.logvar", h, lv_out, &mut rng);
        let dec = Lstm::new(&mut s, "dec.lstm", e + d, h, &mut rng);
        let out = Linear::new(&mut s, "dec.out", h, v, &mut rng);
        let mut prior = Vec::new();
        if let PriorConfig::Mixture { components, geometry } = config.prior {
            for k in 0..components {
                let mean: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let m = s.add(format!("prior.{k}.mean"), Tensor::vector(mean));
                let rows = if geometry == Geometry::Diagonal { d } else { 1 };
                let lv = s.add(format!("prior.{k}.logvar"), Tensor::zeros(&[rows, 1]));
                prior.push((m, lv));
            }
        }
        Ok(SeqVae {
            config,
            params: s,
            ids: SeqIds {
                enc_emb,
                dec_emb,
                enc,
                dec,
                mu,
                logvar,
                out,
                prior,
            },
        })
    }

    /// Rebuilds a model from named arrays; names and shapes must match exactly.
    pub fn from_arrays(config: SeqVaeConfig, arrays: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut m = SeqVae::new(config, 0)?;
        super::load_into(&mut m.params, arrays)?;
        Ok(m)
    }

    pub fn config(&self) -> &SeqVaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Swaps the training objective, keeping all weights.
    pub fn set_objective(&mut self, objective: ObjectiveConfig) -> Result<(), ModelError> {
        let mut c = self.config.clone();
        c.objective = objective;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_sentences(&self, sentences: &[Vec<usize>]) -> Result<(), ModelError> {
        if sentences.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        for s in sentences {
            if s.is_empty() {
                return Err(ModelError::EmptyInput);
            }
            if let Some(&id) = s.iter().find(|&&i| i >= self.config.vocab_size) {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64]) -> Result<(), ModelError> {
        if z.len() != self.config.latent_dim {
            return Err(ModelError::LatentDim {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    fn prior_diagonal(&self) -> bool {
        matches!(
            self.config.prior,
            PriorConfig::Mixture {
                geometry: Geometry::Diagonal,
                ..
            }
        )
    }

    fn start_id(&self) -> usize {
        // degenerate vocabularies without a start id reuse id 0
        if self.config.vocab_size > SOS {
            SOS
        } else {
            0
        }
    }

    /// `(mu, log-variance expanded to [B, d])` for a padded batch.
    pub fn posterior_graph(&self, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<(Var, Var), AutodiffError> {
        let s = self
            .ids
            .enc
            .encode_padded(tape, p, self.ids.enc_emb, &batch.ids, &batch.lengths, batch.width)?;
        let mu = self.ids.mu.forward(tape, p, s.h)?;
        let lv = self.ids.logvar.forward(tape, p, s.h)?;
        let lv = match self.config.geometry {
            Geometry::Diagonal => lv,
            Geometry::Isotropic => tape.repeat_cols(lv, self.config.latent_dim)?,
        };
        Ok((mu, lv))
    }

    /// Monte-Carlo KL `log q(z|x) - log p(z)` under the mixture prior, batch mean.
    fn mixture_kl_graph(&self, tape: &mut Tape, p: &Bound, z: Var, lv: Var, eps: &[f64]) -> Result<Var, AutodiffError> {
        let d = self.config.latent_dim;
        let b = eps.len() / d;
        let k = self.ids.prior.len();
        let lv_sum = tape.sum_rows(lv)?;
        let consts: Vec<f64> = eps
            .chunks_exact(d)
            .map(|e| -0.5 * (d as f64 * LN_2PI + e.iter().map(|x| x * x).sum::<f64>()))
            .collect();
        let c = constant(tape, b, 1, consts)?;
        let log_q = tape.scale(lv_sum, -0.5)?;
        let log_q = tape.add(log_q, c)?;
        let mut comps = Vec::with_capacity(k);
        for &(m, plv) in &self.ids.prior {
            let neg_m = tape.neg(p[m])?;
            let diff = tape.add_bias(z, neg_m)?;
            let sq = tape.mul(diff, diff)?;
            let neg_lv = tape.neg(p[plv])?;
            let inv = tape.exp(neg_lv)?;
            let (maha, logdet) = if self.prior_diagonal() {
                let maha = tape.matmul(sq, inv)?;
                let ones = constant(tape, b, d, vec![1.0; b * d])?;
                (maha, tape.matmul(ones, p[plv])?)
            } else {
                let rows = tape.sum_rows(sq)?;
                let maha = tape.matmul(rows, inv)?;
                let ones = constant(tape, b, 1, vec![d as f64; b])?;
                (maha, tape.matmul(ones, p[plv])?)
            };
            let t = tape.add(maha, logdet)?;
            let t = tape.scale(t, -0.5)?;
            comps.push(tape.add_scalar(t, -0.5 * d as f64 * LN_2PI - (k as f64).ln())?);
        }
        let all = tape.concat(&comps)?;
        let log_p = tape.logsumexp_rows(all)?;
        let kl = tape.sub(log_q, log_p)?;
        tape.mean(kl)
    }

    /// Summed cross-entropy of `targets` (each already ending in its stop
    /// token) under teacher forcing from `z` `[B, d]`.
    pub fn decode_graph(
        &self,
        tape: &mut Tape,
        p: &Bound,
        z: Var,
        targets: &[Vec<usize>],
    ) -> Result<Var, AutodiffError> {
        let b = targets.len();
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut s = self.ids.dec.zero_state(tape, b);
        let mut total: Option<Var> = None;
        for t in 0..steps {
            let prev: Vec<usize> = targets
                .iter()
                .map(|y| match t {
                    0 => self.start_id(),
                    _ if t <= y.len() => y[t - 1],
                    _ => PAD,
                })
                .collect();
            let tgt: Vec<Option<usize>> = targets.iter().map(|y| y.get(t).copied()).collect();
            let x = tape.embedding(p[self.ids.dec_emb], &prev)?;
            let x = tape.concat(&[x, z])?;
            s = self.ids.dec.step(tape, p, x, s)?;
            let logits = self.ids.out.forward(tape, p, s.h)?;
            let ce = tape.softmax_cross_entropy(logits, &tgt)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
        }
        total.ok_or(AutodiffError::InvalidShape { shape: vec![b, 0] })
    }

    /// Full training graph. `eps` is `[B, d]` standard normal noise; `None`
    /// decodes from the mean.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &Batch,
        eps: Option<&[f64]>,
        step: u64,
    ) -> Result<SeqForward, AutodiffError> {
        let b = batch.size();
        let (mu, lv) = self.posterior_graph(tape, p, batch)?;
        let z = match eps {
            Some(e) if !self.config.autoencoder => super::reparam_graph(tape, mu, lv, e)?,
            _ => mu,
        };
        let kl = match (&self.config.prior, eps) {
            (PriorConfig::Mixture { .. }, Some(e)) if !self.config.autoencoder => {
                self.mixture_kl_graph(tape, p, z, lv, e)?
            }
            (PriorConfig::Mixture { .. }, _) => {
                let zeros = vec![0.0; b * self.config.latent_dim];
                self.mixture_kl_graph(tape, p, mu, lv, &zeros)?
            }
            _ => super::kl_standard_graph(tape, mu, lv)?,
        };
        let targets: Vec<Vec<usize>> = (0..b)
            .map(|r| {
                let mut y = batch.sentence(r).to_vec();
                y.push(EOS);
                y
            })
            .collect();
        let rec_sum = self.decode_graph(tape, p, z, &targets)?;
        let rec = tape.scale(rec_sum, 1.0 / b as f64)?;
        let loss = if self.config.autoencoder {
            rec
        } else {
            self.config.objective.assemble(tape, rec, kl, step)?
        };
        Ok(SeqForward { loss, rec, kl })
    }

    pub fn noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<f64> {
        (0..rows * self.config.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect()
    }

    /// Loss value and parameter gradients on one batch.
    pub fn loss_and_grads(
        &self,
        batch: &Batch,
        eps: Option<&[f64]>,
        step: u64,
    ) -> Result<(StepStats, Vec<Tensor>), ModelError> {
        self.check_sentences(
            &(0..batch.size())
                .map(|r| batch.sentence(r).to_vec())
                .collect::<Vec<_>>(),
        )?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let f = self.forward(&mut tape, &p, batch, eps, step)?;
        tape.backward(f.loss)?;
        let stats = StepStats {
            loss: tape.scalar(f.loss),
            rec: tape.scalar(f.rec),
            kl: tape.scalar(f.kl),
        };
        Ok((stats, p.grads(&tape)))
    }

    /// Loss terms without gradients.
    pub fn evaluate_batch(&self, batch: &Batch, eps: Option<&[f64]>, step: u64) -> Result<StepStats, ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let f = self.forward(&mut tape, &p, batch, eps, step)?;
        Ok(StepStats {
            loss: tape.scalar(f.loss),
            rec: tape.scalar(f.rec),
            kl: tape.scalar(f.kl),
        })
    }

    /// Corpus means of rec, KL and objective (at the final warm-up target),
    /// with single-sample reconstructions drawn from the evaluation stream.
    pub fn evaluate(&self, corpus: &[Vec<usize>], batch_size: usize, seed: u64) -> Result<StepStats, ModelError> {
        self.check_sentences(corpus)?;
        let mut rng = stream_rng(seed, Stream::Eval);
        let (mut rec, mut kl) = (0.0, 0.0);
        for idx in (0..corpus.len()).collect::<Vec<_>>().chunks(batch_size.max(1)) {
            let batch = Batch::from_indices(corpus, idx);
            let eps = self.noise(idx.len(), &mut rng);
            let s = self.evaluate_batch(&batch, Some(&eps), u64::MAX)?;
            rec += s.rec * idx.len() as f64;
            kl += s.kl * idx.len() as f64;
        }
        let n = corpus.len() as f64;
        let (rec, kl) = (rec / n, kl / n);
        let loss = if self.config.autoencoder {
            rec
        } else {
            self.config.objective.value(rec, kl, u64::MAX)
        };
        Ok(StepStats { loss, rec, kl })
    }

    pub fn encode(&self, sentences: &[Vec<usize>]) -> Result<Vec<GaussianPosterior>, ModelError> {
        self.check_sentences(sentences)?;
        let batch = Batch::from_sentences(sentences);
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let s = self
            .ids
            .enc
            .encode_padded(&mut tape, &p, self.ids.enc_emb, &batch.ids, &batch.lengths, batch.width)?;
        let mu = self.ids.mu.forward(&mut tape, &p, s.h)?;
        let lv = self.ids.logvar.forward(&mut tape, &p, s.h)?;
        let (mu, lv) = (tape.value(mu), tape.value(lv));
        (0..sentences.len())
            .map(|r| {
                let m = mu.row(r).to_vec();
                Ok(match self.config.geometry {
                    Geometry::Diagonal => GaussianPosterior::diagonal(m, lv.row(r).to_vec())?,
                    Geometry::Isotropic => GaussianPosterior::isotropic(m, lv.get(r, 0))?,
                })
            })
            .collect()
    }

    /// Posterior means in chunks of `batch_size`.
    pub fn posterior_means(&self, corpus: &[Vec<usize>], batch_size: usize) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out = Vec::with_capacity(corpus.len());
        for chunk in corpus.chunks(batch_size.max(1)) {
            out.extend(self.encode(chunk)?.into_iter().map(|q| q.mean().to_vec()));
        }
        Ok(out)
    }

    /// One draw `z ~ q(z|x)` per sentence.
    pub fn posterior_samples(
        &self,
        corpus: &[Vec<usize>],
        batch_size: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut rng = stream_rng(seed, Stream::Eval);
        let mut out = Vec::with_capacity(corpus.len());
        for chunk in corpus.chunks(batch_size.max(1)) {
            for q in self.encode(chunk)? {
                out.push(q.sample(&mut rng).z);
            }
        }
        Ok(out)
    }

    /// Summed NLL of `target` given `z`; the start token is prepended to the
    /// inputs and `target` is scored as given.
    pub fn decode_teacher_forced(&self, z: &[f64], target: &[usize]) -> Result<f64, ModelError> {
        self.check_latent(z)?;
        self.check_sentences(&[target.to_vec()])?;
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let zv = constant(&mut tape, 1, z.len(), z.to_vec())?;
        let loss = self.decode_graph(&mut tape, &p, zv, &[target.to_vec()])?;
        Ok(tape.scalar(loss))
    }

    pub fn greedy_decode(&self, z: &[f64], max_len: usize) -> Result<Vec<usize>, ModelError> {
        Ok(self.greedy_decode_batch(&[z.to_vec()], max_len)?.remove(0))
    }

    /// Argmax decoding until the stop token or `max_len`; padding and start
    /// ids are never emitted when the vocabulary has real tokens.
    pub fn greedy_decode_batch(&self, zs: &[Vec<f64>], max_len: usize) -> Result<Vec<Vec<usize>>, ModelError> {
        for z in zs {
            self.check_latent(z)?;
        }
        let b = zs.len();
        let mut out = vec![Vec::new(); b];
        if b == 0 || max_len == 0 {
            return Ok(out);
        }
        let d = self.config.latent_dim;
        let v = self.config.vocab_size;
        let banned: &[usize] = if v > EOS { &[PAD, SOS] } else { &[] };
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let z = constant(&mut tape, b, d, zs.concat())?;
        let mut s = self.ids.dec.zero_state(&mut tape, b);
        let mut prev = vec![self.start_id(); b];
        let mut done = vec![false; b];
        for _ in 0..max_len {
            let x = tape.embedding(p[self.ids.dec_emb], &prev)?;
            let x = tape.concat(&[x, z])?;
            s = self.ids.dec.step(&mut tape, &p, x, s)?;
            let logits = self.ids.out.forward(&mut tape, &p, s.h)?;
            let l = tape.value(logits);
            for r in 0..b {
                let best = argmax_excluding(l.row(r), banned);
                prev[r] = best;
                if done[r] {
                    continue;
                }
                if best == EOS && v > EOS {
                    done[r] = true;
                } else {
                    out[r].push(best);
                }
            }
            if done.iter().all(|&x| x) {
                break;
            }
        }
        Ok(out)
    }

    /// Mean per-sentence reconstruction loss decoding from `z = mu`.
    pub fn ae_forward(&self, sentences: &[Vec<usize>]) -> Result<f64, ModelError> {
        self.check_sentences(sentences)?;
        let batch = Batch::from_sentences(sentences);
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let (mu, _) = self.posterior_graph(&mut tape, &p, &batch)?;
        let targets: Vec<Vec<usize>> = sentences
            .iter()
            .map(|s| s.iter().copied().chain([EOS]).collect())
            .collect();
        let rec = self.decode_graph(&mut tape, &p, mu, &targets)?;
        Ok(tape.scalar(rec) / sentences.len() as f64)
    }

    /// Greedy reconstructions decoded from posterior means.
    pub fn reconstruct(&self, sentences: &[Vec<usize>], batch_size: usize) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(batch_size.max(1)) {
            let means: Vec<Vec<f64>> = self.encode(chunk)?.into_iter().map(|q| q.mean().to_vec()).collect();
            out.extend(self.greedy_decode_batch(&means, self.config.max_decode_len)?);
        }
        Ok(out)
    }

    /// The prior as a distribution object, reading mixture parameters.
    pub fn prior(&self) -> Result<Prior, ModelError> {
        let d = self.config.latent_dim;
        if self.ids.prior.is_empty() {
            return Ok(Prior::StandardNormal { dim: d });
        }
        let comps = self
            .ids
            .prior
            .iter()
            .map(|&(m, lv)| {
                let mean = self.params.get(m).data().to_vec();
                let lv = self.params.get(lv).data();
                if self.prior_diagonal() {
                    GaussianPosterior::diagonal(mean, lv.to_vec())
                } else {
                    GaussianPosterior::isotropic(mean, lv[0])
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Prior::mixture(comps)?)
    }

    /// Samples `n` codes from the prior and decodes them greedily.
    pub fn generate(&self, n: usize, seed: u64, batch_size: usize) -> Result<Vec<Vec<usize>>, ModelError> {
        let prior = self.prior()?;
        let mut rng = indexed_rng(seed, Stream::Eval, 1);
        let zs: Vec<Vec<f64>> = (0..n).map(|_| prior.sample(&mut rng)).collect();
        let mut out = Vec::with_capacity(n);
        for chunk in zs.chunks(batch_size.max(1)) {
            out.extend(self.greedy_decode_batch(chunk, self.config.max_decode_len)?);
        }
        Ok(out)
    }

    /// Diagonal model whose log-variance head repeats the isotropic head's
    /// single output in every dimension; every other weight is copied.
    pub fn untie_warm_start(&self) -> Result<SeqVae, ModelError> {
        if self.config.geometry != Geometry::Isotropic {
            return Err(ModelError::Geometry {
                expected: Geometry::Isotropic,
                got: self.config.geometry,
            });
        }
        let mut cfg = self.config.clone();
        cfg.geometry = Geometry::Diagonal;
        let d = cfg.latent_dim;
        let arrays = self
            .params
            .iter()
            .map(|(name, t)| {
                let t = match name {
                    "head.logvar.w" => {
                        let data = t.data().iter().flat_map(|&w| std::iter::repeat_n(w, d)).collect();
                        Tensor::matrix(t.rows(), d, data)?
                    }
                    "head.logvar.b" => Tensor::vector(vec![t.item(); d]),
                    _ => t.clone(),
                };
                Ok((name.to_string(), t))
            })
            .collect::<Result<Vec<_>, AutodiffError>>()?;
        SeqVae::from_arrays(cfg, arrays)
    }
}

fn argmax_excluding(row: &[f64], banned: &[usize]) -> usize {
    let mut best = None;
    for (i, &v) in row.iter().enumerate() {
        if banned.contains(&i) {
            continue;
        }
        match best {
            Some((_, bv)) if bv >= v => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}
