use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::{
    io_err, load_run, read_file, run_dir, write_file, CheckpointKind, Model, RunConfig, RunData, RunError, Split,
    BEST_CHECKPOINT, CONFIG_FILE, FINAL_CHECKPOINT, METRICS_CSV, METRICS_JSONL, RECORD_FILE, VOCAB_FILE,
};
use crate::autodiff::{clip_global_norm, Adam, AutodiffError};
use crate::data::{epoch_order, Vocab};
use crate::metrics::{active_units, MetricReport};
use crate::models::{ModelError, StepStats};
use crate::objectives::capacity_diagnostics;
use crate::seeding::{indexed_rng, Stream};

/// Activity threshold on the variance of posterior means.
pub const AU_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rec_loss: f64,
    pub kl: f64,
    pub loss: f64,
    pub dev_rec_loss: f64,
    pub dev_kl: f64,
    pub dev_loss: f64,
    pub dev_au: usize,
}

/// Summary of one training run, written as `record.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
    pub warm_started_from: Option<PathBuf>,
    pub early_stopped: bool,
    pub wall_clock_secs: f64,
    pub test_au: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub record: RunRecord,
    pub model: Model,
    pub best: Model,
    pub data: RunData,
}

/// Trains into `<output root>/<run_id>`, refusing to replace an existing
/// run unless `force` is set.
pub fn train_run(config: &RunConfig, force: bool) -> Result<TrainOutput, RunError> {
    config.validate()?;
    let dir = run_dir(config);
    if dir.exists() {
        let occupied = std::fs::read_dir(&dir).map_err(io_err(&dir))?.next().is_some();
        if occupied && !force {
            return Err(RunError::Exists(dir));
        }
        std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let vocab = match &config.warm_start_from {
        Some(base) => Some(Vocab::from_text(&read_file(&base.join(VOCAB_FILE))?)?),
        None => None,
    };
    let data = RunData::load(config, vocab)?;
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    train_inner(config, data, Some(&dir))
}

/// Trains without touching the file system (warm starts still read their base).
pub fn train_in_memory(config: &RunConfig, data: RunData) -> Result<TrainOutput, RunError> {
    config.validate()?;
    train_inner(config, data, None)
}

fn train_inner(config: &RunConfig, data: RunData, dir: Option<&Path>) -> Result<TrainOutput, RunError> {
    let started = Instant::now();
    let n = data.train_len();
    if n == 0 {
        return Err(crate::data::DataError::EmptyCorpus.into());
    }
    let total_steps = (config.epochs * n.div_ceil(config.batch_size)) as u64;
    let objective = config.resolved_objective(total_steps);

    let mut model = match &config.warm_start_from {
        Some(base) => {
            let base_run = load_run(base, CheckpointKind::Final)?;
            let Model::Seq(iso) = base_run.model else {
                return Err(RunError::Config("warm starts need a sequence base run".into()));
            };
            if base_run.data.vocab().map(Vocab::len) != data.vocab().map(Vocab::len) {
                return Err(RunError::Config("base run vocabulary differs from this run's".into()));
            }
            let mut untied = iso.untie_warm_start()?;
            untied.set_objective(objective.clone())?;
            Model::Seq(untied)
        }
        None => Model::build(config, &data, objective)?,
    };

    let mut snapshot = config.to_kv();
    if let Some(v) = data.vocab() {
        snapshot.insert("vocab_size", v.len());
    }
    // the run directory already says where it lives
    snapshot.remove("out_dir");
    let paths = dir.map(RunPaths::new);
    if let Some(d) = dir {
        write_file(&d.join(CONFIG_FILE), &snapshot.to_text())?;
        if let Some(v) = data.vocab() {
            write_file(&d.join(VOCAB_FILE), &v.to_text())?;
        }
    }

    let mut adam = Adam::new(config.lr);
    let mut step = 0u64;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 0..config.epochs {
        let order = epoch_order(n, config.batch_size, true, config.seed, epoch as u64)?;
        let mut rng = indexed_rng(config.seed, Stream::Reparam, epoch as u64);
        let mut acc = StepStats::default();
        for idx in &order {
            let (stats, mut grads) = match model.step(&data, idx, &mut rng, step) {
                Err(RunError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))) => {
                    return Err(RunError::NonFinite { epoch, step })
                }
                r => r?,
            };
            if !stats.loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(RunError::NonFinite { epoch, step });
            }
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(model.params_mut().values_mut(), &grads)
                .map_err(|e| RunError::Model(e.into()))?;
            step += 1;
            let w = idx.len() as f64;
            acc.loss += stats.loss * w;
            acc.rec += stats.rec * w;
            acc.kl += stats.kl * w;
        }
        let train = StepStats {
            loss: acc.loss / n as f64,
            rec: acc.rec / n as f64,
            kl: acc.kl / n as f64,
        };
        let (dev, dev_au) = if data.dev_len() > 0 {
            let dev = model.evaluate(&data, Split::Dev, config.seed)?;
            (dev, active_units(&model.means(&data, Split::Dev)?, AU_THRESHOLD)?)
        } else {
            (train, 0)
        };
        let rec = EpochRecord {
            epoch,
            rec_loss: train.rec,
            kl: train.kl,
            loss: train.loss,
            dev_rec_loss: dev.rec,
            dev_kl: dev.kl,
            dev_loss: dev.loss,
            dev_au,
        };
        if let Some(p) = &paths {
            let mut report = report(config, config.run_id.clone());
            let diag = capacity_diagnostics(train.rec, train.kl);
            report
                .set("epoch", epoch as f64)
                .set("rec_loss", train.rec)
                .set("kl", train.kl)
                .set("loss", train.loss)
                .set("dev_rec_loss", dev.rec)
                .set("dev_kl", dev.kl)
                .set("dev_loss", dev.loss)
                .set("dev_au", dev_au as f64)
                .set("rate", diag.rate)
                .set("distortion", diag.distortion)
                .set("rate_bound_gap", diag.rate_bound_gap);
            p.append(&report)?;
        }
        if best.as_ref().is_none_or(|(l, _, _)| dev.loss < *l) {
            if let Some(p) = &paths {
                model.save(&p.best)?;
            }
            best = Some((dev.loss, epoch, model.clone()));
        }
        epochs.push(rec);
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");

    if let Some(p) = &paths {
        model.save(&p.last)?;
    }
    let mut test_au = 0;
    if has_test(&data) {
        for (tag, m) in [("best", &best_model), ("final", &model)] {
            let stats = m.evaluate(&data, Split::Test, config.seed)?;
            test_au = active_units(&m.means(&data, Split::Test)?, AU_THRESHOLD)?;
            if let Some(p) = &paths {
                let mut r = report(config, format!("{}/{tag}", config.run_id));
                r.set("test_rec_loss", stats.rec)
                    .set("test_kl", stats.kl)
                    .set("test_loss", stats.loss)
                    .set("au", test_au as f64);
                r.validate(m.latent_dim())?;
                p.append(&r)?;
            }
        }
    }

    let record = RunRecord {
        run_id: config.run_id.clone(),
        config: snapshot.to_text(),
        epochs,
        best_epoch,
        best_checkpoint: paths.as_ref().map(|p| p.best.clone()),
        final_checkpoint: paths.as_ref().map(|p| p.last.clone()),
        warm_started_from: config.warm_start_from.clone(),
        early_stopped: false,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        test_au,
    };
    if let Some(d) = dir {
        let json = serde_json::to_string_pretty(&record).map_err(|e| RunError::Metric(e.into()))?;
        write_file(&d.join(RECORD_FILE), &json)?;
    }
    Ok(TrainOutput {
        record,
        model,
        best: best_model,
        data,
    })
}

fn has_test(data: &RunData) -> bool {
    match data {
        RunData::Text(d) => !d.test.is_empty(),
        RunData::Vectors { test, .. } => !test.is_empty(),
    }
}

pub(crate) fn report(config: &RunConfig, run_id: String) -> MetricReport {
    let r = MetricReport::new(run_id, config.seed);
    if config.record_time {
        r.with_timestamp()
    } else {
        r
    }
}

struct RunPaths {
    jsonl: PathBuf,
    csv: PathBuf,
    best: PathBuf,
    last: PathBuf,
}

impl RunPaths {
    fn new(dir: &Path) -> Self {
        RunPaths {
            jsonl: dir.join(METRICS_JSONL),
            csv: dir.join(METRICS_CSV),
            best: dir.join(BEST_CHECKPOINT),
            last: dir.join(FINAL_CHECKPOINT),
        }
    }

    fn append(&self, report: &MetricReport) -> Result<(), RunError> {
        report.append_jsonl(&self.jsonl)?;
        report.append_csv(&self.csv)?;
        Ok(())
    }
}
