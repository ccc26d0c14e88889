use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use isovae::distributions::{verify_tied_variance, MONOTONE_GRID_POINTS};
use isovae::downstream::ClassifierConfig;
use isovae::kv::KvMap;
use isovae::runner::{self, CheckpointKind, RunConfig, RunError, SweepAxis};

#[derive(Parser)]
#[command(
    name = "isovae",
    version,
    about = "Train and evaluate isotropic and diagonal posterior VAEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "best", value_parser = parse_checkpoint)]
    checkpoint: CheckpointKind,
}

#[derive(clap::Args)]
struct ClassifierArgs {
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
}

impl ClassifierArgs {
    fn config(&self) -> ClassifierConfig {
        ClassifierConfig {
            repetitions: self.reps,
            epochs: self.epochs,
            ..ClassifierConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a key=value config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set seed=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Replace an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// Test-split losses, active units, posterior shape and reconstruction scores.
    Eval(RunArgs),
    /// Decode prior samples to a text file.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete test sentences from their first tokens.
    Impute {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0.25)]
        keep: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify frozen posterior means of the test split.
    Classify {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        classifier: ClassifierArgs,
    },
    /// Retrain on nested training subsets and classify each encoder.
    Fewshot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
        fractions: Vec<f64>,
        #[command(flatten)]
        classifier: ClassifierArgs,
    },
    /// Classifier accuracy before and after word dropout.
    Robustness {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0.3)]
        rate: f64,
        #[command(flatten)]
        classifier: ClassifierArgs,
    },
    /// Macro-F1 of reconstructions relative to originals.
    Agreement(RunArgs),
    /// Forward and reverse perplexity of generated text.
    Perplexity {
        #[command(flatten)]
        run: RunArgs,
        #[arg(short, long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every combination of the given axes and aggregate over seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...`; repeat for more axes.
        #[arg(long = "axis", required = true)]
        axes: Vec<SweepAxis>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        force: bool,
    },
    /// Untie an isotropic run and continue training it as a diagonal model.
    Warmstart {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        target_c: f64,
        #[arg(long)]
        force: bool,
    },
    /// Check that tying variances never lowers the KL or the box mass.
    VerifyTheorem1 {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,8,32")]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,1.0")]
        widths: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        sigma_min: f64,
        #[arg(long, default_value_t = 5.0)]
        sigma_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_checkpoint(s: &str) -> Result<CheckpointKind, String> {
    s.parse()
}

fn load_config(path: &Path, overrides: &[String]) -> Result<KvMap> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut kv = KvMap::parse(&text).map_err(RunError::from)?;
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(RunError::Config(format!("override '{o}' is not KEY=VALUE")).into());
        };
        kv.insert(k.trim(), v.trim());
    }
    Ok(kv)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Exit status on success: 0, or 1 when a verification reports violations.
fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train {
            config,
            overrides,
            force,
        } => {
            let cfg = RunConfig::from_kv(&load_config(&config, &overrides)?)?;
            let out = runner::train_run(&cfg, force)?;
            for e in &out.record.epochs {
                println!(
                    "epoch {:>3}  rec {:.4}  kl {:.4}  loss {:.4}  dev_loss {:.4}  dev_au {}",
                    e.epoch, e.rec_loss, e.kl, e.loss, e.dev_loss, e.dev_au
                );
            }
            println!(
                "run {} done in {:.1}s; best epoch {}; test au {}",
                out.record.run_id, out.record.wall_clock_secs, out.record.best_epoch, out.record.test_au
            );
        }
        Command::Eval(r) => print_json(&runner::eval_command(&r.run, r.checkpoint)?.scalars)?,
        Command::Generate { run, n, seed, out } => {
            let lines = runner::generate_command(&run.run, run.checkpoint, n, seed, &out)?;
            println!("wrote {} sentences to {}", lines.len(), out.display());
        }
        Command::Impute { run, keep, out } => {
            let (rows, bleu2) = runner::impute_command(&run.run, run.checkpoint, keep, &out)?;
            println!("{} rows written to {}; bleu2 {bleu2:.4}", rows.len(), out.display());
        }
        Command::Classify { run, classifier } => print_json(&runner::classify_command(
            &run.run,
            run.checkpoint,
            &classifier.config(),
        )?)?,
        Command::Fewshot {
            config,
            fractions,
            classifier,
        } => {
            let cfg = RunConfig::from_kv(&load_config(&config, &[])?)?;
            print_json(&runner::fewshot_command(&cfg, &fractions, &classifier.config())?)?
        }
        Command::Robustness { run, rate, classifier } => {
            let (clean, noisy) = runner::robustness_command(&run.run, run.checkpoint, rate, &classifier.config())?;
            println!("clean {:.4}  dropout {rate}: {noisy:.4}", clean.accuracies[0]);
        }
        Command::Agreement(r) => {
            println!("agreement {:.4}", runner::agreement_command(&r.run, r.checkpoint)?);
        }
        Command::Perplexity { run, n, seed } => {
            let (fwd, rev) = runner::perplexity_command(&run.run, run.checkpoint, n, seed)?;
            println!("forward {fwd:.3}  reverse {rev:.3}");
        }
        Command::Sweep {
            config,
            axes,
            jobs,
            force,
        } => {
            let out = runner::sweep(&load_config(&config, &[])?, &axes, jobs, force)?;
            println!("{} cells; summary in {}", out.cells.len(), out.csv.display());
            if !out.failures.is_empty() {
                for (id, err) in &out.failures {
                    eprintln!("run {id} failed: {err}");
                }
                let total = out.cells.iter().map(|c| c.runs.len()).sum::<usize>() + out.failures.len();
                return Err(RunError::SweepFailures {
                    failed: out.failures.len(),
                    total,
                }
                .into());
            }
        }
        Command::Warmstart { base, target_c, force } => {
            let out = runner::warm_start_command(&base, target_c, force)?;
            let last = out.record.epochs.last().expect("at least one epoch");
            println!("run {}: rec {:.4} kl {:.4}", out.record.run_id, last.rec_loss, last.kl);
        }
        Command::VerifyTheorem1 {
            trials,
            dims,
            widths,
            sigma_min,
            sigma_max,
            seed,
        } => {
            if !(0.0 < sigma_min && sigma_min <= sigma_max) {
                return Err(RunError::Config("need 0 < sigma-min <= sigma-max".into()).into());
            }
            if trials == 0 || widths.iter().any(|&w| w <= 0.0) {
                return Err(RunError::Config("trials and widths must be positive".into()).into());
            }
            let mut ok = true;
            for d in dims {
                let r = verify_tied_variance(trials, d, &widths, (sigma_min, sigma_max), seed);
                ok &= r.passed();
                println!("{} grid_points={MONOTONE_GRID_POINTS}", r.summary_line());
            }
            if !ok {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<clap::Error>() {
        return 2;
    }
    e.downcast_ref::<RunError>().map_or(1, |r| r.exit_code() as u8)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
