//! Evaluation battery: active units, BLEU, ROUGE, perplexities, macro-F1,
//! agreement, corruption helpers and posterior-shape statistics.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{LanguageModel, LmConfig, ModelError, TextClassifier};

pub const DEFAULT_AU_THRESHOLD: f64 = 0.01;
pub const BLEU_SMOOTHING: f64 = 1e-9;
pub const COV_JITTER: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("hypothesis and reference counts differ ({0} vs {1})")]
    Unpaired(usize, usize),
    #[error("n-gram order must be positive")]
    ZeroOrder,
    #[error("every reference is shorter than {0} tokens")]
    NothingToScore(usize),
    #[error("rows have inconsistent widths")]
    Ragged,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("sample covariance is singular")]
    Singular,
    #[error("macro-F1 of the original test set is zero")]
    ZeroDenominator,
    #[error("fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("dropout rate {0} outside [0, 1]")]
    Rate(f64),
    #[error("metric '{name}' = {value} violates its range")]
    Range { name: String, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn check_matrix(rows: &[Vec<f64>]) -> Result<usize, MetricError> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(MetricError::Ragged);
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(d)
}

/// Posterior means and one posterior sample per example.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSummary {
    pub means: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
}

impl LatentSummary {
    pub fn new(means: Vec<Vec<f64>>, samples: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        if means.len() != samples.len() {
            return Err(MetricError::Unpaired(means.len(), samples.len()));
        }
        if check_matrix(&means)? != check_matrix(&samples)? {
            return Err(MetricError::Ragged);
        }
        Ok(LatentSummary { means, samples })
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }
}

/// Per-dimension unbiased variance across rows.
pub fn column_variances(rows: &[Vec<f64>]) -> Result<Vec<f64>, MetricError> {
    let d = check_matrix(rows)?;
    let n = rows.len();
    if n < 2 {
        return Err(MetricError::TooFewExamples { needed: 2, got: n });
    }
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        out.push(var);
    }
    Ok(out)
}

/// Dimensions whose posterior mean varies across examples by more than
/// `threshold`.
pub fn active_units(means: &[Vec<f64>], threshold: f64) -> Result<usize, MetricError> {
    Ok(column_variances(means)?.into_iter().filter(|&v| v > threshold).count())
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_pairs<T>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> Result<(), MetricError> {
    if hyps.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if hyps.len() != refs.len() {
        return Err(MetricError::Unpaired(hyps.len(), refs.len()));
    }
    if n == 0 {
        return Err(MetricError::ZeroOrder);
    }
    Ok(())
}

/// Corpus totals of clipped `n`-gram matches and hypothesis `n`-grams.
pub fn modified_precision<T: Eq + Hash>(
    hyps: &[Vec<T>],
    refs: &[Vec<T>],
    n: usize,
) -> Result<(usize, usize), MetricError> {
    check_pairs(hyps, refs, n)?;
    let (mut matched, mut total) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let hc = ngram_counts(h, n);
        let rc = ngram_counts(r, n);
        for (g, c) in hc {
            total += c;
            matched += c.min(rc.get(g).copied().unwrap_or(0));
        }
    }
    Ok((matched, total))
}

/// Corpus BLEU with uniform weights over orders `1..=n`, clipping and the
/// brevity penalty. Zero match counts are replaced by `1e-9`.
pub fn bleu_n<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> Result<f64, MetricError> {
    check_pairs(hyps, refs, n)?;
    let mut log_p = 0.0;
    for m in 1..=n {
        let (matched, total) = modified_precision(hyps, refs, m)?;
        let p = if matched == 0 {
            BLEU_SMOOTHING / total.max(1) as f64
        } else {
            matched as f64 / total as f64
        };
        log_p += p.ln() / n as f64;
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * log_p.exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RougeScore {
    pub score: f64,
    pub scored: usize,
    /// References with fewer than `n` tokens.
    pub skipped: usize,
}

/// Mean over pairs of clipped reference `n`-gram recall.
pub fn rouge_n<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> Result<RougeScore, MetricError> {
    check_pairs(hyps, refs, n)?;
    let (mut sum, mut scored, mut skipped) = (0.0, 0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        if r.len() < n {
            skipped += 1;
            continue;
        }
        let hc = ngram_counts(h, n);
        let rc = ngram_counts(r, n);
        let total: usize = rc.values().sum();
        let hit: usize = rc.iter().map(|(g, &c)| c.min(hc.get(g).copied().unwrap_or(0))).sum();
        sum += hit as f64 / total as f64;
        scored += 1;
    }
    if scored == 0 {
        return Err(MetricError::NothingToScore(n));
    }
    Ok(RougeScore {
        score: sum / scored as f64,
        scored,
        skipped,
    })
}

/// Forward perplexity scores `generated` under an LM trained on real text;
/// reverse perplexity scores `real_test` under an LM trained on `generated`.
pub fn forward_reverse_perplexity(
    real_train: &[Vec<usize>],
    real_test: &[Vec<usize>],
    generated: &[Vec<usize>],
    config: &LmConfig,
    seed: u64,
) -> Result<(f64, f64), MetricError> {
    if real_train.is_empty() || real_test.is_empty() || generated.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut real_lm = LanguageModel::new(config.clone(), seed)?;
    real_lm.train(real_train, seed)?;
    let fwd = real_lm.perplexity(generated)?;
    let mut gen_lm = LanguageModel::new(config.clone(), seed)?;
    gen_lm.train(generated, seed)?;
    let rev = gen_lm.perplexity(real_test)?;
    Ok((fwd, rev))
}

/// Unweighted mean of per-class F1 over classes present in either labels or
/// predictions.
pub fn macro_f1(predicted: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    if predicted.len() != gold.len() {
        return Err(MetricError::Unpaired(predicted.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut per: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for (&p, &g) in predicted.iter().zip(gold) {
        if p == g {
            per.entry(g).or_default().0 += 1;
        } else {
            per.entry(p).or_default().1 += 1;
            per.entry(g).or_default().2 += 1;
        }
    }
    let f1s: Vec<f64> = per
        .values()
        .map(|&(tp, fp, fne)| 2.0 * tp as f64 / (2 * tp + fp + fne) as f64)
        .collect();
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    if predicted.len() != gold.len() {
        return Err(MetricError::Unpaired(predicted.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(predicted.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64)
}

/// Macro-F1 on reconstructions divided by macro-F1 on the originals.
pub fn agreement(
    classifier: &TextClassifier,
    reconstructed: &[Vec<usize>],
    original: &[Vec<usize>],
    labels: &[usize],
) -> Result<f64, MetricError> {
    let base = macro_f1(&classifier.predict(original)?, labels)?;
    if base == 0.0 {
        return Err(MetricError::ZeroDenominator);
    }
    Ok(macro_f1(&classifier.predict(reconstructed)?, labels)? / base)
}

/// Deletes each token with probability `rate`; if every token would go, one
/// uniformly chosen token survives.
pub fn word_dropout<T: Clone, R: Rng + ?Sized>(sentence: &[T], rate: f64, rng: &mut R) -> Result<Vec<T>, MetricError> {
    if sentence.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(MetricError::Rate(rate));
    }
    let kept: Vec<T> = sentence.iter().filter(|_| !rng.random_bool(rate)).cloned().collect();
    if kept.is_empty() {
        return Ok(vec![sentence[rng.random_range(0..sentence.len())].clone()]);
    }
    Ok(kept)
}

/// Keeps the first `ceil(keep * L)` tokens.
pub fn impute<T: Clone>(sentence: &[T], keep: f64) -> Result<Vec<T>, MetricError> {
    if sentence.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(MetricError::Fraction(keep));
    }
    let n = ((keep * sentence.len() as f64).ceil() as usize).min(sentence.len());
    Ok(sentence[..n].to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PosteriorShape {
    pub mu_norm_sq: f64,
    pub logdetcov: f64,
}

/// Squared norm of the sample mean and log-determinant of the unbiased
/// sample covariance (plus `1e-8 I`).
pub fn posterior_shape(samples: &[Vec<f64>]) -> Result<PosteriorShape, MetricError> {
    let d = check_matrix(samples)?;
    let n = samples.len();
    if n <= d || d == 0 {
        return Err(MetricError::TooFewExamples { needed: d + 1, got: n });
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| samples.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in samples {
        for i in 0..d {
            let a = r[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += a * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[(i, j)] /= (n - 1) as f64;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    // singularity is judged before the jitter so degenerate input is surfaced
    if cov.clone().cholesky().is_none() {
        return Err(MetricError::Singular);
    }
    for i in 0..d {
        cov[(i, i)] += COV_JITTER;
    }
    let chol = cov.cholesky().ok_or(MetricError::Singular)?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(PosteriorShape {
        mu_norm_sq: mean.iter().map(|m| m * m).sum(),
        logdetcov: logdet,
    })
}

/// Named scalars of one evaluation, serialized as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub seed: u64,
    /// Unix seconds; left empty where files must be reproducible bit for bit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub scalars: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        MetricReport {
            run_id: run_id.into(),
            seed,
            timestamp: None,
            scalars: BTreeMap::new(),
        }
    }

    pub fn with_timestamp(mut self) -> Self {
        self.timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
        self
    }

    pub fn set(&mut self, name: &str, value: f64) -> &mut Self {
        self.scalars.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied()
    }

    /// Checks the documented ranges of known scalars.
    pub fn validate(&self, latent_dim: usize) -> Result<(), MetricError> {
        for (name, &value) in &self.scalars {
            let ok = match name.as_str() {
                "au" => (0.0..=latent_dim as f64).contains(&value),
                "bleu2" | "bleu4" | "rouge2" | "rouge4" => (0.0..=1.0).contains(&value),
                "fwd_ppl" | "rev_ppl" => value >= 1.0,
                _ => !value.is_nan(),
            };
            if !ok {
                return Err(MetricError::Range {
                    name: name.clone(),
                    value,
                });
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String, MetricError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn append_jsonl(&self, path: &Path) -> Result<(), MetricError> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", self.to_json_line()?)?;
        Ok(())
    }

    /// Appends `run_id,seed,metric,value` rows, writing a header for a new file.
    pub fn append_csv(&self, path: &Path) -> Result<(), MetricError> {
        let fresh = !path.exists();
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = csv::Writer::from_writer(f);
        if fresh {
            w.write_record(["run_id", "seed", "metric", "value"])?;
        }
        for (name, value) in &self.scalars {
            w.write_record([self.run_id.as_str(), &self.seed.to_string(), name, &value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricReport>, MetricError> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(MetricError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn normal_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn active_units_oracles() {
        assert_eq!(active_units(&vec![vec![0.3; 5]; 10], 0.01).unwrap(), 0);
        assert_eq!(active_units(&normal_rows(1000, 32, 1), 0.01).unwrap(), 32);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mixed: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                (0..32)
                    .map(|j| {
                        let s: f64 = StandardNormal.sample(&mut rng);
                        if j < 4 {
                            s
                        } else {
                            s * 1e-3
                        }
                    })
                    .collect()
            })
            .collect();
        assert_eq!(active_units(&mixed, 0.01).unwrap(), 4);
        assert!(matches!(
            active_units(&[vec![1.0]], 0.01),
            Err(MetricError::TooFewExamples { .. })
        ));
    }

    #[test]
    fn bleu_oracles() {
        let refs = vec![toks("the cat sat on the mat"), toks("a dog ran")];
        assert_eq!(bleu_n(&refs, &refs, 2).unwrap(), 1.0);
        assert_eq!(bleu_n(&refs, &refs, 4).unwrap(), 1.0);
        let disjoint = vec![toks("x y z w v u"), toks("p q r")];
        assert!(bleu_n(&disjoint, &refs, 2).unwrap() < 1e-3);
        let hyp = vec![toks("the the the")];
        let r = vec![toks("the cat sat")];
        assert_eq!(modified_precision(&hyp, &r, 1).unwrap(), (1, 3));
        // p1 = 1/3, p2 = 1e-9/2, equal lengths so no brevity penalty
        let want = (0.5 * ((1.0f64 / 3.0).ln() + (1e-9f64 / 2.0).ln())).exp();
        assert!((bleu_n(&hyp, &r, 2).unwrap() - want).abs() < 1e-12);
        // brevity penalty: hyp of 3 against ref of 6
        let short = vec![toks("the cat sat")];
        let long = vec![toks("the cat sat on the mat")];
        assert!((bleu_n(&short, &long, 2).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert!(matches!(bleu_n::<String>(&[], &[], 2), Err(MetricError::EmptyCorpus)));
    }

    #[test]
    fn rouge_oracles() {
        let r = vec![toks("a b c d")];
        assert_eq!(rouge_n(&r, &r, 2).unwrap().score, 1.0);
        let h = vec![toks("a b x d")];
        assert!((rouge_n(&h, &r, 2).unwrap().score - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge_n(&[toks("e f g h")], &r, 2).unwrap().score, 0.0);
        let refs = vec![toks("a b c d e"), toks("a b")];
        let hyps = vec![toks("a b c d e"), toks("a b")];
        let s = rouge_n(&hyps, &refs, 4).unwrap();
        assert_eq!((s.scored, s.skipped, s.score), (1, 1, 1.0));
        assert!(matches!(
            rouge_n(&[toks("a")], &[toks("a")], 2),
            Err(MetricError::NothingToScore(2))
        ));
    }

    #[test]
    fn f1_and_accuracy() {
        assert_eq!(macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        // class 0: tp1 fp0 fn1 -> 2/3; class 1: tp2 fp1 fn0 -> 4/5
        let f = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert!((f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn dropout_and_impute() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s: Vec<usize> = (0..10).collect();
        assert_eq!(word_dropout(&s, 0.0, &mut rng).unwrap(), s);
        assert_eq!(word_dropout(&s, 1.0, &mut rng).unwrap().len(), 1);
        let total: usize = (0..10_000)
            .map(|_| word_dropout(&s, 0.3, &mut rng).unwrap().len())
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 7.0).abs() < 0.05, "{mean}");
        let eight: Vec<usize> = (0..8).collect();
        assert_eq!(impute(&eight, 0.25).unwrap(), vec![0, 1]);
        assert_eq!(impute(&eight, 1.0).unwrap(), eight);
        let st = toks("st. marys catholic high school is a private school");
        assert_eq!(impute(&st, 0.25).unwrap(), toks("st. marys catholic"));
        assert!(impute::<usize>(&[], 0.5).is_err());
    }

    #[test]
    fn posterior_shape_oracles() {
        let s = posterior_shape(&normal_rows(100_000, 2, 3)).unwrap();
        assert!(s.mu_norm_sq.abs() < 0.05 && s.logdetcov.abs() < 0.05, "{s:?}");
        assert!(matches!(
            posterior_shape(&vec![vec![1.0, 2.0]; 10]),
            Err(MetricError::Singular)
        ));
        assert!(matches!(
            posterior_shape(&normal_rows(2, 2, 0)),
            Err(MetricError::TooFewExamples { .. })
        ));
        // spread ~10 keeps the jitter's effect on the scaling law below 1e-9
        let base: Vec<Vec<f64>> = normal_rows(500, 3, 4)
            .into_iter()
            .map(|r| r.iter().map(|v| 10.0 * v).collect())
            .collect();
        let doubled: Vec<Vec<f64>> = base.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        let gap = posterior_shape(&doubled).unwrap().logdetcov - posterior_shape(&base).unwrap().logdetcov;
        assert!((gap - 3.0 * 4f64.ln()).abs() < 1e-9, "{gap}");
        let shrunk: Vec<Vec<f64>> = base.iter().map(|r| r.iter().map(|v| 0.5 * v).collect()).collect();
        assert!(posterior_shape(&shrunk).unwrap().logdetcov < posterior_shape(&base).unwrap().logdetcov);
    }

    #[test]
    fn report_serialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = MetricReport::new("run-a", 3);
        r.set("au", 4.0).set("bleu2", 0.5);
        r.validate(8).unwrap();
        let jl = dir.path().join("m.jsonl");
        r.append_jsonl(&jl).unwrap();
        r.append_jsonl(&jl).unwrap();
        assert_eq!(read_jsonl(&jl).unwrap(), vec![r.clone(), r.clone()]);
        let csv_path = dir.path().join("m.csv");
        r.append_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 3);
        r.set("au", 9.0);
        assert!(r.validate(8).is_err());
    }

    proptest! {
        #[test]
        fn au_monotone_in_threshold(t1 in 0.0f64..2.0, t2 in 0.0f64..2.0, seed in 0u64..50) {
            let rows = normal_rows(30, 6, seed);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(active_units(&rows, hi).unwrap() <= active_units(&rows, lo).unwrap());
        }

        #[test]
        fn corpus_metrics_permutation_invariant(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |rng: &mut ChaCha8Rng| -> Vec<usize> { (0..rng.random_range(1..8)).map(|_| rng.random_range(0..5)).collect() };
            let hyps: Vec<Vec<usize>> = (0..6).map(|_| mk(&mut rng)).collect();
            let refs: Vec<Vec<usize>> = (0..6).map(|_| mk(&mut rng)).collect();
            let rev_h: Vec<Vec<usize>> = hyps.iter().rev().cloned().collect();
            let rev_r: Vec<Vec<usize>> = refs.iter().rev().cloned().collect();
            let b = bleu_n(&hyps, &refs, 2).unwrap();
            prop_assert!((b - bleu_n(&rev_h, &rev_r, 2).unwrap()).abs() < 1e-12);
            if let Ok(r) = rouge_n(&hyps, &refs, 2) {
                prop_assert!((r.score - rouge_n(&rev_h, &rev_r, 2).unwrap().score).abs() < 1e-12);
            }
        }
    }
}
