use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::train::train_run;
use super::{io_err, output_root, write_file, RunConfig, RunError, METRICS_JSONL};
use crate::kv::KvMap;
use crate::metrics::read_jsonl;

/// One swept key and the values it takes.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    /// `key=v1,v2,...`
    fn from_str(s: &str) -> Result<Self, String> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| format!("axis '{s}' is not key=v1,v2"))?;
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if key.trim().is_empty() || values.is_empty() {
            return Err(format!("axis '{s}' is not key=v1,v2"));
        }
        Ok(SweepAxis {
            key: key.trim().to_string(),
            values,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Runs sharing every swept value except the seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub settings: BTreeMap<String, String>,
    pub runs: Vec<String>,
    pub metrics: BTreeMap<String, MetricStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    /// `(run_id, error)` of children that failed.
    pub failures: Vec<(String, String)>,
    pub csv: PathBuf,
    pub json: PathBuf,
}

struct Child {
    config: RunConfig,
    settings: BTreeMap<String, String>,
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// Trains the Cartesian product of `axes` over `base`, at most `jobs` runs at
/// a time, then aggregates each cell's final metrics into
/// `<root>/<run_id>-sweep/sweep.{csv,json}`. Child failures are recorded
/// and do not stop the others.
pub fn sweep(base: &KvMap, axes: &[SweepAxis], jobs: usize, force: bool) -> Result<SweepOutcome, RunError> {
    let base_cfg = RunConfig::from_kv(base)?;
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let children = combos
        .into_iter()
        .map(|combo| {
            let mut kv = base.clone();
            let mut id = base_cfg.run_id.clone();
            for (k, v) in &combo {
                kv.insert(k.clone(), v);
                id.push_str(&format!("-{}{}", slug(k), slug(v)));
            }
            kv.insert("run_id", &id);
            let config = RunConfig::from_kv(&kv)?;
            let settings = combo.into_iter().filter(|(k, _)| k != "seed").collect();
            Ok(Child { config, settings })
        })
        .collect::<Result<Vec<_>, RunError>>()?;

    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(children.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(child) = children.get(i) else { break };
                if let Err(e) = train_run(&child.config, force) {
                    failures
                        .lock()
                        .expect("no panics while held")
                        .push((child.config.run_id.clone(), e.to_string()));
                }
            });
        }
    });
    let mut failures = failures.into_inner().expect("threads joined");
    failures.sort();

    let mut cells: Vec<SweepCell> = Vec::new();
    for child in &children {
        let id = &child.config.run_id;
        if failures.iter().any(|(f, _)| f == id) {
            continue;
        }
        let idx = match cells.iter().position(|c| c.settings == child.settings) {
            Some(i) => i,
            None => {
                cells.push(SweepCell {
                    settings: child.settings.clone(),
                    runs: Vec::new(),
                    metrics: BTreeMap::new(),
                });
                cells.len() - 1
            }
        };
        cells[idx].runs.push(id.clone());
    }
    for cell in &mut cells {
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for id in &cell.runs {
            let child = children.iter().find(|c| &c.config.run_id == id).expect("listed");
            for (name, v) in final_metrics(&super::run_dir(&child.config), id)? {
                values.entry(name).or_default().push(v);
            }
        }
        cell.metrics = values.into_iter().map(|(k, v)| (k, stat(&v))).collect();
    }

    let dir = output_root(&base_cfg).join(format!("{}-sweep", base_cfg.run_id));
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let csv = dir.join("sweep.csv");
    let json = dir.join("sweep.json");
    let outcome = SweepOutcome {
        cells,
        failures,
        csv,
        json,
    };
    write_csv(&outcome, axes)?;
    let text = serde_json::to_string_pretty(&outcome).map_err(|e| RunError::Metric(e.into()))?;
    write_file(&outcome.json, &text)?;
    Ok(outcome)
}

/// Last per-epoch scalars plus the test scalars of the final checkpoint.
pub fn final_metrics(dir: &Path, run_id: &str) -> Result<BTreeMap<String, f64>, RunError> {
    let reports = read_jsonl(&dir.join(METRICS_JSONL))?;
    let mut out = BTreeMap::new();
    if let Some(last) = reports.iter().rev().find(|r| r.run_id == run_id) {
        out.extend(
            last.scalars
                .iter()
                .filter(|(k, _)| k.as_str() != "epoch")
                .map(|(k, v)| (k.clone(), *v)),
        );
    }
    let tagged = format!("{run_id}/final");
    if let Some(fin) = reports.iter().find(|r| r.run_id == tagged) {
        out.extend(fin.scalars.iter().map(|(k, v)| (k.clone(), *v)));
    }
    Ok(out)
}

fn stat(v: &[f64]) -> MetricStat {
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricStat { mean, std, n }
}

fn write_csv(outcome: &SweepOutcome, axes: &[SweepAxis]) -> Result<(), RunError> {
    let keys: Vec<&str> = axes.iter().map(|a| a.key.as_str()).filter(|k| *k != "seed").collect();
    let mut w = csv::Writer::from_path(&outcome.csv).map_err(|e| RunError::Metric(e.into()))?;
    let mut header: Vec<&str> = keys.clone();
    header.extend(["metric", "mean", "std", "n"]);
    let csv_err = |e: csv::Error| RunError::Metric(e.into());
    w.write_record(&header).map_err(csv_err)?;
    for cell in &outcome.cells {
        for (name, s) in &cell.metrics {
            let mut row: Vec<String> = keys.iter().map(|k| cell.settings[*k].clone()).collect();
            row.extend([name.clone(), s.mean.to_string(), s.std.to_string(), s.n.to_string()]);
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(&outcome.csv))?;
    Ok(())
}
