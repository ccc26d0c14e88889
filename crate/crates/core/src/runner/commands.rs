use std::path::{Path, PathBuf};

use serde::Serialize;

use super::train::{report, train_in_memory, train_run, TrainOutput, AU_THRESHOLD};
use super::{
    load_run, write_file, CheckpointKind, LoadedRun, Model, RunConfig, RunData, RunError, Split, METRICS_CSV,
    METRICS_JSONL,
};
use crate::data::Dataset;
use crate::distributions::Geometry;
use crate::downstream::{
    classify, classify_detailed, few_shot, robustness_eval, ClassifierConfig, ClassifyResult, FewShotPoint,
};
use crate::metrics::{
    active_units, bleu_n, forward_reverse_perplexity, impute, posterior_shape, rouge_n, MetricReport,
};
use crate::models::{LmConfig, SeqVae, TextClassifier, TextClassifierConfig};
use crate::objectives::ObjectiveConfig;

const DECODE_BATCH: usize = 64;

fn append(run: &LoadedRun, r: &MetricReport) -> Result<(), RunError> {
    r.validate(run.model.latent_dim())?;
    r.append_jsonl(&run.dir.join(METRICS_JSONL))?;
    r.append_csv(&run.dir.join(METRICS_CSV))?;
    Ok(())
}

fn seq_parts<'a>(run: &'a LoadedRun, command: &'static str) -> Result<(&'a SeqVae, &'a Dataset), RunError> {
    match (&run.model, &run.data) {
        (Model::Seq(m), RunData::Text(d)) => Ok((m, d)),
        _ => Err(RunError::Unsupported {
            command,
            needs: "a sequence model",
        }),
    }
}

fn test_labels<'a>(run: &'a LoadedRun, command: &'static str) -> Result<&'a [usize], RunError> {
    run.data.test_labels().ok_or(RunError::Unsupported {
        command,
        needs: "labeled data",
    })
}

/// Test-split loss terms, active units and aggregate posterior shape; for
/// sequence models also BLEU and ROUGE of greedy reconstructions.
pub fn eval_command(dir: &Path, which: CheckpointKind) -> Result<MetricReport, RunError> {
    let run = load_run(dir, which)?;
    let seed = run.config.seed;
    let stats = run.model.evaluate(&run.data, Split::Test, seed)?;
    let means = run.model.means(&run.data, Split::Test)?;
    let samples = run.model.samples(&run.data, Split::Test, seed)?;
    let shape = posterior_shape(&samples)?;
    let mut r = report(&run.config, format!("{}/eval-{}", run.config.run_id, tag(which)));
    r.set("test_rec_loss", stats.rec)
        .set("test_kl", stats.kl)
        .set("test_loss", stats.loss)
        .set("au", active_units(&means, AU_THRESHOLD)? as f64)
        .set("mu_norm_sq", shape.mu_norm_sq)
        .set("logdetcov", shape.logdetcov);
    if let Ok((m, d)) = seq_parts(&run, "eval") {
        let recon = m.reconstruct(&d.test.sentences, DECODE_BATCH)?;
        r.set("bleu2", bleu_n(&recon, &d.test.sentences, 2)?)
            .set("bleu4", bleu_n(&recon, &d.test.sentences, 4)?)
            .set("rouge2", rouge_n(&recon, &d.test.sentences, 2)?.score)
            .set("rouge4", rouge_n(&recon, &d.test.sentences, 4)?.score);
    }
    append(&run, &r)?;
    Ok(r)
}

fn tag(which: CheckpointKind) -> &'static str {
    match which {
        CheckpointKind::Best => "best",
        CheckpointKind::Final => "final",
    }
}

/// Writes `n` prior samples, one decoded sentence per line.
pub fn generate_command(
    dir: &Path,
    which: CheckpointKind,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    let run = load_run(dir, which)?;
    let (m, d) = seq_parts(&run, "generate")?;
    let lines: Vec<String> = m
        .generate(n, seed, DECODE_BATCH)?
        .iter()
        .map(|s| d.vocab.decode(s))
        .collect();
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    write_file(out, &text)?;
    Ok(lines)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImputeRow {
    pub original: String,
    pub prefix: String,
    pub completion: String,
}

/// Encodes the first `keep` share of each test sentence and greedily decodes
/// a full sentence from the posterior mean. Rows go to `out` as TSV; the
/// returned score is corpus BLEU-2 of completions against originals.
pub fn impute_command(
    dir: &Path,
    which: CheckpointKind,
    keep: f64,
    out: &Path,
) -> Result<(Vec<ImputeRow>, f64), RunError> {
    let run = load_run(dir, which)?;
    let (m, d) = seq_parts(&run, "impute")?;
    let prefixes = d
        .test
        .sentences
        .iter()
        .map(|s| impute(s, keep))
        .collect::<Result<Vec<_>, _>>()?;
    let completions = m.reconstruct(&prefixes, DECODE_BATCH)?;
    let bleu2 = bleu_n(&completions, &d.test.sentences, 2)?;
    let rows: Vec<ImputeRow> = d
        .test
        .sentences
        .iter()
        .zip(&prefixes)
        .zip(&completions)
        .map(|((o, p), c)| ImputeRow {
            original: d.vocab.decode(o),
            prefix: d.vocab.decode(p),
            completion: d.vocab.decode(c),
        })
        .collect();
    let mut text = String::from("original\tprefix\tcompletion\n");
    for r in &rows {
        text.push_str(&format!("{}\t{}\t{}\n", r.original, r.prefix, r.completion));
    }
    write_file(out, &text)?;
    let mut r = report(&run.config, format!("{}/impute-{}", run.config.run_id, tag(which)));
    r.set("keep", keep).set("impute_bleu2", bleu2);
    append(&run, &r)?;
    Ok((rows, bleu2))
}

/// MLP classification of frozen posterior means over the labeled test split.
pub fn classify_command(
    dir: &Path,
    which: CheckpointKind,
    config: &ClassifierConfig,
) -> Result<ClassifyResult, RunError> {
    let run = load_run(dir, which)?;
    let labels = test_labels(&run, "classify")?;
    let features = run.model.means(&run.data, Split::Test)?;
    let res = classify(&features, labels, config, run.config.seed)?;
    let mut r = report(&run.config, format!("{}/classify-{}", run.config.run_id, tag(which)));
    r.set("cls_acc_mean", res.mean).set("cls_acc_std", res.std);
    append(&run, &r)?;
    Ok(res)
}

/// Retrains the configured model on nested fractions of the training split
/// and classifies test-split means after each.
pub fn fewshot_command(
    config: &RunConfig,
    fractions: &[f64],
    classifier: &ClassifierConfig,
) -> Result<Vec<FewShotPoint>, RunError> {
    let data = RunData::load(config, None)?;
    let train_labels: Vec<usize> = match &data {
        RunData::Text(d) => d.train.labels.clone().ok_or(RunError::Unsupported {
            command: "fewshot",
            needs: "labeled data",
        })?,
        RunData::Vectors { train, .. } => train.labels.clone(),
    };
    let test_labels = data.test_labels().map(<[usize]>::to_vec).unwrap_or_default();
    let mut failure = None;
    let points = few_shot(&train_labels, fractions, config.seed, |subset| {
        let out = train_in_memory(config, data.with_train_subset(subset)).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            crate::downstream::DownstreamError::Config(msg)
        })?;
        let features = out
            .model
            .means(&out.data, Split::Test)
            .map_err(|e| crate::downstream::DownstreamError::Config(e.to_string()))?;
        classify(&features, &test_labels, classifier, config.seed)
    });
    match (points, failure) {
        (Ok(p), _) => Ok(p),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
    }
}

/// Clean-trained classifier accuracy on clean test means and on means of
/// test sentences after word dropout at `rate`.
pub fn robustness_command(
    dir: &Path,
    which: CheckpointKind,
    rate: f64,
    config: &ClassifierConfig,
) -> Result<(ClassifyResult, f64), RunError> {
    let run = load_run(dir, which)?;
    let (m, d) = seq_parts(&run, "robustness")?;
    let labels = test_labels(&run, "robustness")?;
    let features = run.model.means(&run.data, Split::Test)?;
    let (clean, split, classifier) = classify_detailed(&features, labels, config, run.config.seed)?;
    let sentences: Vec<Vec<usize>> = split.test.iter().map(|&i| d.test.sentences[i].clone()).collect();
    let gold: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    let noisy = robustness_eval(m, &classifier, &sentences, &gold, rate, run.config.seed)?;
    let mut r = report(&run.config, format!("{}/robustness-{}", run.config.run_id, tag(which)));
    r.set("dropout_rate", rate)
        .set("clean_acc", clean.accuracies[0])
        .set("robustness_acc", noisy);
    append(&run, &r)?;
    Ok((clean, noisy))
}

/// Macro-F1 of an LSTM classifier on test reconstructions relative to the
/// originals.
pub fn agreement_command(dir: &Path, which: CheckpointKind) -> Result<f64, RunError> {
    let run = load_run(dir, which)?;
    let (m, d) = seq_parts(&run, "agreement")?;
    let (train_labels, labels) = match (&d.train.labels, &d.test.labels) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(RunError::Unsupported {
                command: "agreement",
                needs: "labeled data",
            })
        }
    };
    let seed = run.config.seed;
    let mut classifier = TextClassifier::new(TextClassifierConfig::toy(d.vocab.len(), d.class_names.len()), seed)?;
    classifier.train(&d.train.sentences, train_labels, seed)?;
    let recon = m.reconstruct(&d.test.sentences, DECODE_BATCH)?;
    let score = crate::metrics::agreement(&classifier, &recon, &d.test.sentences, labels)?;
    let mut r = report(&run.config, format!("{}/agreement-{}", run.config.run_id, tag(which)));
    r.set("agreement", score);
    append(&run, &r)?;
    Ok(score)
}

/// Forward and reverse perplexity of `n` generated sentences.
pub fn perplexity_command(dir: &Path, which: CheckpointKind, n: usize, seed: u64) -> Result<(f64, f64), RunError> {
    let run = load_run(dir, which)?;
    let (m, d) = seq_parts(&run, "perplexity")?;
    let generated = m.generate(n, seed, DECODE_BATCH)?;
    let (fwd, rev) = forward_reverse_perplexity(
        &d.train.sentences,
        &d.test.sentences,
        &generated,
        &LmConfig::toy(d.vocab.len()),
        seed,
    )?;
    let mut r = report(&run.config, format!("{}/perplexity-{}", run.config.run_id, tag(which)));
    r.set("fwd_ppl", fwd).set("rev_ppl", rev);
    append(&run, &r)?;
    Ok((fwd, rev))
}

/// Unties the final weights of an isotropic run and trains the diagonal
/// model under the constrained objective at `target_c`, with no warm-up.
/// The new run sits next to the base as `<base id>-untied`.
pub fn warm_start_command(base: &Path, target_c: f64, force: bool) -> Result<TrainOutput, RunError> {
    let run = load_run(base, CheckpointKind::Final)?;
    if run.config.geometry != Geometry::Isotropic || !run.config.model.is_sequence() {
        return Err(RunError::Config("warm starts untie an isotropic sequence run".into()));
    }
    let mut cfg = run.config.clone();
    let beta = match run.config.objective {
        ObjectiveConfig::Constrained { beta, .. } => beta,
        _ => 1.0,
    };
    cfg.objective = ObjectiveConfig::Constrained {
        target: target_c,
        beta,
        warmup: None,
    };
    cfg.geometry = Geometry::Diagonal;
    cfg.c_warmup_steps = None;
    cfg.run_id = format!("{}-untied", run.config.run_id);
    cfg.out_dir = Some(base.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
    cfg.warm_start_from = Some(base.to_path_buf());
    train_run(&cfg, force)
}
