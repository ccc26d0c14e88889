//! LSTM language model (for perplexity) and LSTM text classifier (for the
//! agreement metric).

use super::layers::{uniform_init, Linear, Lstm};
use super::ModelError;
use crate::autodiff::{clip_global_norm, Adam, AutodiffError, Bound, ParamId, ParamStore, Tape, Var};
use crate::data::{epoch_order, Batch, EOS, SOS};
use crate::seeding::{stream_rng, Stream};

/// Minibatch Adam with global-norm clipping at 5. `loss` builds the batch
/// loss for the given row indices.
pub fn fit<F>(
    store: &mut ParamStore,
    n: usize,
    batch_size: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
    mut loss: F,
) -> Result<Vec<f64>, ModelError>
where
    F: FnMut(&mut Tape, &Bound, &[usize]) -> Result<Var, AutodiffError>,
{
    if n == 0 {
        return Err(ModelError::EmptyInput);
    }
    let mut adam = Adam::new(lr);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut total = 0.0;
        let order =
            epoch_order(n, batch_size, true, seed, epoch as u64).map_err(|e| ModelError::Config(e.to_string()))?;
        for idx in &order {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let l = loss(&mut tape, &p, idx)?;
            let value = tape.scalar(l);
            if !value.is_finite() {
                return Err(AutodiffError::NonFinite { op: "loss" }.into());
            }
            total += value * idx.len() as f64;
            tape.backward(l)?;
            let mut grads = p.grads(&tape);
            clip_global_norm(&mut grads, 5.0);
            adam.step(store.values_mut(), &grads)?;
        }
        history.push(total / n as f64);
    }
    Ok(history)
}

fn check_tokens(sentences: &[Vec<usize>], vocab: usize) -> Result<(), ModelError> {
    if sentences.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    match sentences.iter().flatten().find(|&&i| i >= vocab) {
        Some(&id) => Err(ModelError::TokenOutOfRange { id, vocab }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl LmConfig {
    pub fn toy(vocab_size: usize) -> Self {
        LmConfig {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            epochs: 10,
            batch_size: 32,
            lr: 0.003,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    config: LmConfig,
    params: ParamStore,
    emb: ParamId,
    lstm: Lstm,
    out: Linear,
}

impl LanguageModel {
    pub fn new(config: LmConfig, seed: u64) -> Result<Self, ModelError> {
        if [config.vocab_size, config.embed_dim, config.hidden_dim].contains(&0) {
            return Err(ModelError::Config("all LM dimensions must be positive".into()));
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let mut s = ParamStore::new();
        let emb = s.add(
            "lm.emb",
            uniform_init(&[config.vocab_size, config.embed_dim], config.embed_dim, &mut rng),
        );
        let lstm = Lstm::new(&mut s, "lm.lstm", config.embed_dim, config.hidden_dim, &mut rng);
        let out = Linear::new(&mut s, "lm.out", config.hidden_dim, config.vocab_size, &mut rng);
        Ok(LanguageModel {
            config,
            params: s,
            emb,
            lstm,
            out,
        })
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn start_id(&self) -> usize {
        if self.config.vocab_size > SOS {
            SOS
        } else {
            0
        }
    }

    fn stop_id(&self) -> usize {
        EOS.min(self.config.vocab_size - 1)
    }

    /// Summed NLL of each sentence followed by the stop token.
    fn nll_graph(&self, tape: &mut Tape, p: &Bound, sentences: &[&Vec<usize>]) -> Result<Var, AutodiffError> {
        let b = sentences.len();
        let steps = sentences.iter().map(|s| s.len() + 1).max().unwrap_or(1);
        let mut st = self.lstm.zero_state(tape, b);
        let mut total: Option<Var> = None;
        for t in 0..steps {
            let prev: Vec<usize> = sentences
                .iter()
                .map(|s| match t {
                    0 => self.start_id(),
                    _ => s.get(t - 1).copied().unwrap_or(0),
                })
                .collect();
            let tgt: Vec<Option<usize>> = sentences
                .iter()
                .map(|s| match t.cmp(&s.len()) {
                    std::cmp::Ordering::Less => Some(s[t]),
                    std::cmp::Ordering::Equal => Some(self.stop_id()),
                    std::cmp::Ordering::Greater => None,
                })
                .collect();
            let x = tape.embedding(p[self.emb], &prev)?;
            st = self.lstm.step(tape, p, x, st)?;
            let logits = self.out.forward(tape, p, st.h)?;
            let ce = tape.softmax_cross_entropy(logits, &tgt)?;
            total = Some(match total {
                Some(a) => tape.add(a, ce)?,
                None => ce,
            });
        }
        Ok(total.expect("at least one step"))
    }

    /// Trains on `corpus` for the configured epochs; returns per-epoch mean
    /// per-sentence NLL.
    pub fn train(&mut self, corpus: &[Vec<usize>], seed: u64) -> Result<Vec<f64>, ModelError> {
        check_tokens(corpus, self.config.vocab_size)?;
        let cfg = self.config.clone();
        let this = self.clone();
        let mut params = std::mem::take(&mut self.params);
        let out = fit(
            &mut params,
            corpus.len(),
            cfg.batch_size,
            cfg.epochs,
            cfg.lr,
            seed,
            |tape, p, idx| {
                let rows: Vec<&Vec<usize>> = idx.iter().map(|&i| &corpus[i]).collect();
                let nll = this.nll_graph(tape, p, &rows)?;
                tape.scale(nll, 1.0 / idx.len() as f64)
            },
        );
        self.params = params;
        out
    }

    /// `exp` of the mean per-token NLL, stop tokens included.
    pub fn perplexity(&self, corpus: &[Vec<usize>]) -> Result<f64, ModelError> {
        check_tokens(corpus, self.config.vocab_size)?;
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for chunk in corpus.chunks(self.config.batch_size.max(1)) {
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape);
            let rows: Vec<&Vec<usize>> = chunk.iter().collect();
            let l = self.nll_graph(&mut tape, &p, &rows)?;
            nll += tape.scalar(l);
            tokens += chunk.iter().map(|s| s.len() + 1).sum::<usize>();
        }
        Ok((nll / tokens as f64).exp())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextClassifierConfig {
    pub vocab_size: usize,
    pub classes: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub mlp_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl TextClassifierConfig {
    pub fn toy(vocab_size: usize, classes: usize) -> Self {
        TextClassifierConfig {
            vocab_size,
            classes,
            embed_dim: 32,
            hidden_dim: 64,
            mlp_dims: vec![128, 128],
            epochs: 10,
            batch_size: 32,
            lr: 0.001,
        }
    }
}

/// LSTM encoder followed by a ReLU MLP over the final hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct TextClassifier {
    config: TextClassifierConfig,
    params: ParamStore,
    emb: ParamId,
    lstm: Lstm,
    mlp: Vec<Linear>,
    out: Linear,
}

impl TextClassifier {
    pub fn new(config: TextClassifierConfig, seed: u64) -> Result<Self, ModelError> {
        if config.classes < 2 {
            return Err(ModelError::Config("a classifier needs at least 2 classes".into()));
        }
        let mut rng = stream_rng(seed, Stream::Classifier);
        let mut s = ParamStore::new();
        let emb = s.add(
            "cls.emb",
            uniform_init(&[config.vocab_size, config.embed_dim], config.embed_dim, &mut rng),
        );
        let lstm = Lstm::new(&mut s, "cls.lstm", config.embed_dim, config.hidden_dim, &mut rng);
        let mut mlp = Vec::new();
        let mut width = config.hidden_dim;
        for (i, &h) in config.mlp_dims.iter().enumerate() {
            mlp.push(Linear::new(&mut s, &format!("cls.mlp{i}"), width, h, &mut rng));
            width = h;
        }
        let out = Linear::new(&mut s, "cls.out", width, config.classes, &mut rng);
        Ok(TextClassifier {
            config,
            params: s,
            emb,
            lstm,
            mlp,
            out,
        })
    }

    fn logits_graph(&self, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<Var, AutodiffError> {
        let s = self
            .lstm
            .encode_padded(tape, p, self.emb, &batch.ids, &batch.lengths, batch.width)?;
        let mut h = s.h;
        for l in &self.mlp {
            let a = l.forward(tape, p, h)?;
            h = tape.relu(a)?;
        }
        self.out.forward(tape, p, h)
    }

    pub fn train(&mut self, corpus: &[Vec<usize>], labels: &[usize], seed: u64) -> Result<Vec<f64>, ModelError> {
        check_tokens(corpus, self.config.vocab_size)?;
        if labels.len() != corpus.len() {
            return Err(ModelError::Config("label count differs from sentence count".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.config.classes) {
            return Err(ModelError::Config(format!(
                "label {bad} outside {} classes",
                self.config.classes
            )));
        }
        let cfg = self.config.clone();
        let this = self.clone();
        let mut params = std::mem::take(&mut self.params);
        let out = fit(
            &mut params,
            corpus.len(),
            cfg.batch_size,
            cfg.epochs,
            cfg.lr,
            seed,
            |tape, p, idx| {
                let batch = Batch::from_indices(corpus, idx);
                let logits = this.logits_graph(tape, p, &batch)?;
                let tgt: Vec<Option<usize>> = idx.iter().map(|&i| Some(labels[i])).collect();
                let ce = tape.softmax_cross_entropy(logits, &tgt)?;
                tape.scale(ce, 1.0 / idx.len() as f64)
            },
        );
        self.params = params;
        out
    }

    pub fn predict(&self, corpus: &[Vec<usize>]) -> Result<Vec<usize>, ModelError> {
        check_tokens(corpus, self.config.vocab_size)?;
        let mut out = Vec::with_capacity(corpus.len());
        for chunk in corpus.chunks(self.config.batch_size.max(1)) {
            let batch = Batch::from_sentences(chunk);
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape);
            let logits = self.logits_graph(&mut tape, &p, &batch)?;
            let l = tape.value(logits);
            out.extend((0..chunk.len()).map(|r| argmax(l.row(r))));
        }
        Ok(out)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}
