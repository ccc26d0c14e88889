//! Frozen-encoder evaluation: MLP classification on posterior means,
//! few-shot subsampling and robustness to word dropout.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{clip_global_norm, Adam, Bound, ParamStore, Tape, Tensor};
use crate::data::epoch_order;
use crate::metrics::{self, word_dropout, LatentSummary, MetricError};
use crate::models::{LatentEncoder, Linear, ModelError, SeqVae};
use crate::seeding::{indexed_rng, Stream};

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("classification needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {0} has no example in the training split")]
    MissingClass(usize),
    #[error("fraction {fraction} gives {size} examples, fewer than one per class")]
    SubsetTooSmall { fraction: f64, size: usize },
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("feature and label counts differ ({0} vs {1})")]
    Unpaired(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub repetitions: usize,
    /// Share of the pool held out for testing.
    pub test_fraction: f64,
    /// Share of the remaining training part held out for model selection.
    pub val_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![128, 128],
            lr: 0.001,
            epochs: 20,
            batch_size: 32,
            repetitions: 10,
            test_fraction: 0.2,
            val_fraction: 0.2,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), DownstreamError> {
        let bad = |m: &str| Err(DownstreamError::Config(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.contains(&0) {
            return bad("epochs, batch size and widths must be positive");
        }
        if !(0.0..1.0).contains(&self.test_fraction) || !(0.0..1.0).contains(&self.val_fraction) {
            return bad("fractions must lie in [0, 1)");
        }
        if self.test_fraction + self.val_fraction * (1.0 - self.test_fraction) > 1.0 {
            return bad("fractions sum above 1");
        }
        Ok(())
    }
}

/// Posterior means and samples of a frozen encoder.
pub fn extract_means<E: LatentEncoder>(
    encoder: &E,
    inputs: &[E::Input],
    seed: u64,
) -> Result<LatentSummary, DownstreamError> {
    if inputs.is_empty() {
        return Err(ModelError::EmptyInput.into());
    }
    let means = encoder.means(inputs)?;
    let samples = encoder.samples(inputs, seed)?;
    Ok(LatentSummary::new(means, samples)?)
}

/// ReLU MLP over fixed feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    params: ParamStore,
    layers: Vec<Linear>,
    out: Linear,
}

impl MlpClassifier {
    fn new(input: usize, hidden: &[usize], classes: usize, seed: u64, rep: u64) -> Self {
        let mut rng = indexed_rng(seed, Stream::Classifier, rep + 1);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(&mut params, &format!("mlp{i}"), width, h, &mut rng));
            width = h;
        }
        let out = Linear::new(&mut params, "out", width, classes, &mut rng);
        MlpClassifier { params, layers, out }
    }

    fn logits(&self, tape: &mut Tape, p: &Bound, x: &[Vec<f64>]) -> Result<crate::autodiff::Var, ModelError> {
        let t = Tensor::from_rows(x)?;
        let mut h = tape.constant(t);
        for l in &self.layers {
            let a = l.forward(tape, p, h)?;
            h = tape.relu(a)?;
        }
        Ok(self.out.forward(tape, p, h)?)
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<usize>, ModelError> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let l = self.logits(&mut tape, &p, features)?;
        let v = tape.value(l);
        Ok((0..features.len()).map(|r| crate::models::argmax(v.row(r))).collect())
    }

    /// Trains with Adam and keeps the epoch with the best validation accuracy
    /// (the last epoch when there is no validation data).
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        features: &[Vec<f64>],
        labels: &[usize],
        val_x: &[Vec<f64>],
        val_y: &[usize],
        classes: usize,
        config: &ClassifierConfig,
        seed: u64,
        rep: u64,
    ) -> Result<Self, DownstreamError> {
        let dim = features.first().map_or(0, Vec::len);
        let mut model = MlpClassifier::new(dim, &config.hidden, classes, seed, rep);
        let mut adam = Adam::new(config.lr);
        let mut best: Option<(f64, ParamStore)> = None;
        for epoch in 0..config.epochs {
            let order = epoch_order(
                features.len(),
                config.batch_size,
                true,
                seed ^ rep.wrapping_mul(0x9E37),
                epoch as u64,
            )
            .map_err(|e| DownstreamError::Config(e.to_string()))?;
            for idx in order {
                let x: Vec<Vec<f64>> = idx.iter().map(|&i| features[i].clone()).collect();
                let y: Vec<Option<usize>> = idx.iter().map(|&i| Some(labels[i])).collect();
                let mut tape = Tape::new();
                let p = model.params.bind(&mut tape);
                let logits = model.logits(&mut tape, &p, &x)?;
                let ce = tape.softmax_cross_entropy(logits, &y).map_err(ModelError::from)?;
                let loss = tape.scale(ce, 1.0 / idx.len() as f64).map_err(ModelError::from)?;
                tape.backward(loss).map_err(ModelError::from)?;
                let mut g = p.grads(&tape);
                clip_global_norm(&mut g, 5.0);
                adam.step(model.params.values_mut(), &g).map_err(ModelError::from)?;
            }
            if !val_x.is_empty() {
                let acc = metrics::accuracy(&model.predict(val_x)?, val_y)?;
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, model.params.clone()));
                }
            }
        }
        if let Some((_, params)) = best {
            model.params = params;
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifyResult {
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
}

impl ClassifyResult {
    fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = if accuracies.len() > 1 {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        ClassifyResult { mean, std, accuracies }
    }
}

/// Index split of a pool: `(train, val, test)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_pool(n: usize, config: &ClassifierConfig, seed: u64) -> PoolSplit {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut indexed_rng(seed, Stream::Classifier, 0));
    let n_test = (n as f64 * config.test_fraction).round() as usize;
    let test = idx.split_off(n - n_test);
    let n_val = (idx.len() as f64 * config.val_fraction).round() as usize;
    let val = idx.split_off(idx.len() - n_val);
    PoolSplit { train: idx, val, test }
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn check_classes(labels: &[usize], train: &[usize]) -> Result<usize, DownstreamError> {
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(DownstreamError::TooFewClasses(present.len()));
    }
    let in_train: BTreeSet<usize> = train.iter().map(|&i| labels[i]).collect();
    if let Some(&c) = present.iter().find(|c| !in_train.contains(c)) {
        return Err(DownstreamError::MissingClass(c));
    }
    Ok(class_count(labels))
}

/// Trains `repetitions` classifiers on one split of the pool and reports
/// test accuracy mean and sample standard deviation.
pub fn classify(
    features: &[Vec<f64>],
    labels: &[usize],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<ClassifyResult, DownstreamError> {
    Ok(classify_detailed(features, labels, config, seed)?.0)
}

/// As [`classify`], also returning the split and the first trained classifier.
pub fn classify_detailed(
    features: &[Vec<f64>],
    labels: &[usize],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(ClassifyResult, PoolSplit, MlpClassifier), DownstreamError> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(DownstreamError::Unpaired(features.len(), labels.len()));
    }
    let split = split_pool(features.len(), config, seed);
    let classes = check_classes(labels, &split.train)?;
    let pick = |ids: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            ids.iter().map(|&i| features[i].clone()).collect(),
            ids.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (tx, ty) = pick(&split.train);
    let (vx, vy) = pick(&split.val);
    let (sx, sy) = pick(&split.test);
    let mut accs = Vec::with_capacity(config.repetitions);
    let mut first = None;
    for rep in 0..config.repetitions {
        let m = MlpClassifier::train(&tx, &ty, &vx, &vy, classes, config, seed, rep as u64)?;
        accs.push(metrics::accuracy(&m.predict(&sx)?, &sy)?);
        first.get_or_insert(m);
    }
    Ok((
        ClassifyResult::from_accuracies(accs),
        split,
        first.expect("repetitions >= 1"),
    ))
}

/// Nested random subsets: each fraction's indices extend the smaller ones.
pub fn nested_subsets(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>, DownstreamError> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut indexed_rng(seed, Stream::Data, 7));
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(DownstreamError::Config(format!("fraction {f} outside (0, 1]")));
            }
            let k = ((n as f64 * f).ceil() as usize).min(n);
            Ok(order[..k].to_vec())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FewShotPoint {
    pub fraction: f64,
    pub size: usize,
    pub result: ClassifyResult,
}

/// Runs `pipeline` on nested subsets of the training indices. The pipeline
/// trains an encoder on the subset and classifies the full test set.
pub fn few_shot<F>(
    train_labels: &[usize],
    fractions: &[f64],
    seed: u64,
    mut pipeline: F,
) -> Result<Vec<FewShotPoint>, DownstreamError>
where
    F: FnMut(&[usize]) -> Result<ClassifyResult, DownstreamError>,
{
    let classes: BTreeSet<usize> = train_labels.iter().copied().collect();
    let subsets = nested_subsets(train_labels.len(), fractions, seed)?;
    let mut out = Vec::with_capacity(fractions.len());
    for (&fraction, subset) in fractions.iter().zip(&subsets) {
        if subset.len() < classes.len() {
            return Err(DownstreamError::SubsetTooSmall {
                fraction,
                size: subset.len(),
            });
        }
        out.push(FewShotPoint {
            fraction,
            size: subset.len(),
            result: pipeline(subset)?,
        });
    }
    Ok(out)
}

/// Accuracy of a clean-trained classifier on re-encoded sentences after
/// word dropout at `rate`.
pub fn robustness_eval(
    encoder: &SeqVae,
    classifier: &MlpClassifier,
    sentences: &[Vec<usize>],
    labels: &[usize],
    rate: f64,
    seed: u64,
) -> Result<f64, DownstreamError> {
    let mut rng = indexed_rng(seed, Stream::Dropout, 0);
    let corrupted = sentences
        .iter()
        .map(|s| word_dropout(s, rate, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let features = encoder.means(&corrupted)?;
    Ok(metrics::accuracy(&classifier.predict(&features)?, labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Geometry;
    use crate::models::SeqVaeConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quick() -> ClassifierConfig {
        ClassifierConfig {
            repetitions: 3,
            epochs: 15,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn separable_features_classify_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..300 {
            let c = i % 2;
            let off = if c == 0 { -2.0 } else { 2.0 };
            x.push(vec![off + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            y.push(c);
        }
        let r = classify(&x, &y, &quick(), 1).unwrap();
        assert!(r.mean > 0.99, "{r:?}");
        assert_eq!(r.accuracies.len(), 3);
        assert!(r.std >= 0.0);
    }

    #[test]
    fn shuffled_labels_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y: Vec<usize> = (0..400).map(|_| rng.random_range(0..4)).collect();
        let r = classify(&x, &y, &quick(), 2).unwrap();
        // 80 test examples: binomial std of a 1/4 rate is about 0.048
        assert!((r.mean - 0.25).abs() < 3.0 * 0.048 + 0.05, "{r:?}");
    }

    #[test]
    fn classify_errors() {
        let x = vec![vec![0.0]; 10];
        assert!(matches!(
            classify(&x, &[0; 10], &quick(), 0),
            Err(DownstreamError::TooFewClasses(1))
        ));
        let bad = ClassifierConfig {
            repetitions: 0,
            ..quick()
        };
        assert!(classify(&x, &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], &bad, 0).is_err());
        // class 2 appears only once and lands outside the training split for some seed
        let mut labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 2];
        let mut found = false;
        for seed in 0..50 {
            let s = split_pool(10, &quick(), seed);
            if !s.train.contains(&9) {
                assert!(matches!(
                    classify(&x, &labels, &quick(), seed),
                    Err(DownstreamError::MissingClass(2))
                ));
                found = true;
                break;
            }
        }
        assert!(found);
        labels.pop();
        assert!(matches!(
            classify(&x, &labels, &quick(), 0),
            Err(DownstreamError::Unpaired(10, 9))
        ));
    }

    #[test]
    fn subsets_are_nested() {
        let subs = nested_subsets(1000, &[0.001, 0.01, 0.1, 1.0], 3).unwrap();
        assert_eq!(subs.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 10, 100, 1000]);
        for w in subs.windows(2) {
            let big: BTreeSet<usize> = w[1].iter().copied().collect();
            assert!(w[0].iter().all(|i| big.contains(i)));
        }
        let labels: Vec<usize> = (0..1000).map(|i| i % 4).collect();
        let err = few_shot(&labels, &[0.001], 0, |_| unreachable!()).unwrap_err();
        assert!(matches!(err, DownstreamError::SubsetTooSmall { size: 1, .. }));
    }

    #[test]
    fn downstream_leaves_encoder_untouched() {
        let mut cfg = SeqVaeConfig::toy(12);
        cfg.geometry = Geometry::Isotropic;
        let enc = SeqVae::new(cfg, 0).unwrap();
        let before = enc.params().fingerprint();
        let sents: Vec<Vec<usize>> = (0..40).map(|i| vec![4 + i % 8, 4 + (i / 8) % 8, 5]).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let a = extract_means(&enc, &sents, 1).unwrap();
        assert_eq!(a, extract_means(&enc, &sents, 1).unwrap());
        assert_eq!(a.dim(), 8);
        let (res, split, clf) = classify_detailed(&a.means, &labels, &quick(), 0).unwrap();
        assert!((0.0..=1.0).contains(&res.mean));
        let test_s: Vec<Vec<usize>> = split.test.iter().map(|&i| sents[i].clone()).collect();
        let test_y: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
        let clean = metrics::accuracy(&clf.predict(&enc.means(&test_s).unwrap()).unwrap(), &test_y).unwrap();
        assert_eq!(robustness_eval(&enc, &clf, &test_s, &test_y, 0.0, 5).unwrap(), clean);
        assert_eq!(
            robustness_eval(&enc, &clf, &test_s, &test_y, 0.5, 5).unwrap(),
            robustness_eval(&enc, &clf, &test_s, &test_y, 0.5, 5).unwrap()
        );
        assert_eq!(enc.params().fingerprint(), before);
    }
}
