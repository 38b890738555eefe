use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use mdopt::checkpoint::Checkpoint;
use mdopt::config::{DataSource, ExperimentConfig, SweepGrid};
use mdopt::core::data::Split;
use mdopt::core::eval::evaluate;
use mdopt::core::model::init_params;
use mdopt::core::objective::NeuralObjective;
use mdopt::core::strategy::Strategy;
use mdopt::core::synth::SyntheticSpec;
use mdopt::dataset::{save_dataset, save_metadata, stats_table};
use mdopt::experiment::{self, ensure_dir};
use mdopt::report::{self, DiagnoseSummary, MetricSummary};

#[derive(Parser, Debug)]
#[command(name = "mdopt", version, about = "Multi-domain recommendation training experiments")]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (replaces run.seeds); for `gen`, the generator seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; MDOPT_THREADS takes precedence
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct TrainOverrides {
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Dataset CSV instead of the configured source
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its metadata sidecar
    Gen {
        #[arg(long)]
        domains: Option<usize>,
        /// Use the generic preset instead of the configured one
        #[arg(long)]
        default_preset: bool,
    },
    /// Train every configured seed and write checkpoints and metrics
    Train(TrainOverrides),
    /// Score a checkpoint on one split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Cartesian hyperparameter sweep
    Sweep {
        /// e.g. "alpha=1e-1,1e-3;beta=0.1"
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Gradient-conflict and expansion diagnostics
    Diagnose {
        /// Run the quadratic oracles only
        #[arg(long)]
        self_test: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Parameter-server simulation with synchronous rounds
    Pssim {
        #[arg(short = 'm', long, default_value_t = 1)]
        workers: usize,
        /// Defaults to train.epochs
        #[arg(long)]
        rounds: Option<usize>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
}

fn apply(cfg: &mut ExperimentConfig, o: &TrainOverrides) {
    let t = &mut cfg.train;
    if let Some(v) = o.strategy {
        t.strategy = v;
    }
    if let Some(v) = o.epochs {
        t.epochs = v;
    }
    if let Some(v) = o.alpha {
        t.alpha = v;
    }
    if let Some(v) = o.beta {
        t.beta = v;
    }
    if let Some(v) = o.gamma {
        t.gamma = v;
    }
    if let Some(v) = o.k {
        t.k = v;
    }
    if let Some(p) = &o.data {
        cfg.data = DataSource::File(p.clone());
    }
}

fn threads(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    match std::env::var("MDOPT_THREADS") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("MDOPT_THREADS={v:?}"))?)),
        Err(_) => Ok(flag),
    }
}

/// Echoes the config file verbatim and the resolved keys.
fn echo_config(out: &Path, raw: Option<&str>, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    if let Some(text) = raw {
        fs::write(out.join("config.conf"), text)?;
    }
    fs::write(out.join("resolved.conf"), cfg.to_text())?;
    Ok(())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let raw = match &cli.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let mut cfg = match &raw {
        Some(text) => ExperimentConfig::parse(text)?,
        None => ExperimentConfig::default(),
    };
    if let (Some(seed), false) = (cli.seed, matches!(cli.command, Command::Gen { .. })) {
        cfg.seeds = vec![seed];
        cfg.train.seed = seed;
    }
    let out = ensure_dir(&cli.out)?;

    match &cli.command {
        Command::Gen { domains, default_preset } => {
            let mut spec = match (&cfg.data, default_preset) {
                (DataSource::Synthetic(s), false) => s.clone(),
                _ => SyntheticSpec::default(),
            };
            if let Some(n) = domains {
                spec.n_domains = *n;
            }
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            cfg.data = DataSource::Synthetic(spec);
            cfg.validate()?;
            echo_config(&out, raw.as_deref(), &cfg)?;
            let data = experiment::load_data(&cfg)?;
            save_dataset(&data, &out.join("dataset.csv"))?;
            save_metadata(&data, &out.join("metadata.csv"))?;
            print!("{}", stats_table(&data));
        }
        Command::Train(o) => {
            apply(&mut cfg, o);
            cfg.validate()?;
            echo_config(&out, raw.as_deref(), &cfg)?;
            let data = experiment::load_data(&cfg)?;
            let runs = experiment::train_seeds(&cfg, &data)?;
            let single = runs.len() == 1;
            for r in &runs {
                let dir = if single { out.clone() } else { ensure_dir(&out.join(format!("seed-{}", r.seed)))? };
                Checkpoint {
                    spec: r.spec.clone(),
                    strategy: cfg.train.strategy,
                    state: r.state.clone(),
                }
                .save(&dir.join("checkpoint.bin"))?;
                report::write_epochs(&r.epochs, &dir.join("epochs.csv"))?;
                report::write_metrics(&r.test, &dir.join("test_metrics.csv"))?;
                report::write_json(&MetricSummary::from(&r.test), &dir.join("summary.json"))?;
                println!("seed {}: test macro-AUC {:.4}", r.seed, r.test.macro_auc);
            }
            if !single {
                let m = mean(runs.iter().map(|r| r.test.macro_auc));
                report::write_json(
                    &serde_json::json!({
                        "strategy": cfg.train.strategy.as_str(),
                        "seeds": cfg.seeds,
                        "macro_auc": runs.iter().map(|r| r.test.macro_auc).collect::<Vec<_>>(),
                        "mean_macro_auc": m,
                    }),
                    &out.join("summary.json"),
                )?;
                println!("mean test macro-AUC {m:.4}");
            }
        }
        Command::Eval { checkpoint, split, data } => {
            if let Some(p) = data {
                cfg.data = DataSource::File(p.clone());
            }
            echo_config(&out, raw.as_deref(), &cfg)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let data = experiment::load_data(&cfg)?;
            NeuralObjective::new(&ckpt.spec, &data).context("checkpoint does not fit the dataset")?;
            let rep = evaluate(&ckpt.spec, &ckpt.state, &data, *split)?;
            report::write_metrics(&rep, &out.join(format!("{}_metrics.csv", split.as_str())))?;
            report::write_json(&MetricSummary::from(&rep), &out.join("summary.json"))?;
            println!("{} macro-AUC {:.4}", split.as_str(), rep.macro_auc);
        }
        Command::Sweep { grid, overrides } => {
            apply(&mut cfg, overrides);
            if let Some(g) = grid {
                cfg.sweep = SweepGrid::parse(g)?;
            }
            if cfg.sweep.is_empty() {
                bail!("sweep grid is empty: pass --grid or set sweep.* keys");
            }
            cfg.validate()?;
            echo_config(&out, raw.as_deref(), &cfg)?;
            let data = experiment::load_data(&cfg)?;
            let rows = experiment::run_sweep(&cfg, &data, Some(&out))?;
            report::write_sweep(&rows, &out.join("sweep.csv"))?;
            for r in &rows {
                println!(
                    "alpha={} beta={} gamma={} k={} seed={}: {:.4}",
                    r.alpha, r.beta, r.gamma, r.k, r.seed, r.macro_auc
                );
            }
        }
        Command::Diagnose {
            self_test,
            checkpoint,
            overrides,
        } => {
            apply(&mut cfg, overrides);
            cfg.validate()?;
            echo_config(&out, raw.as_deref(), &cfg)?;
            if *self_test {
                let checks = experiment::quadratic_self_test(cfg.train.seed)?;
                report::write_json(&checks, &out.join("selftest.json"))?;
                for c in &checks {
                    println!("{} {} {:.3e}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value);
                }
                if checks.iter().any(|c| !c.pass) {
                    bail!("quadratic self-test failed");
                }
                return Ok(());
            }
            let ckpt = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let data = experiment::load_data(&cfg)?;
            let seed = cfg.train.seed;
            let spec = match &ckpt {
                Some(c) => c.spec.clone(),
                None => experiment::model_for(&cfg, &data, seed),
            };
            init_params(&spec, spec.seed)?;
            let (state, series) =
                experiment::conflict_series(&cfg, &data, &spec, ckpt.as_ref().map(|c| &c.state), seed)?;
            report::write_conflicts(&series, &out.join("conflict.csv"))?;
            report::write_cosine_series(&series, &out.join("cosine.csv"))?;
            let obj = NeuralObjective::new(&spec, &data)?;
            let taylor =
                experiment::neural_taylor(&spec, &obj, &state.shared, cfg.probe_batch_size, seed, &[1e-2, 5e-3, 2.5e-3])?;
            let last = series.last().context("no measurements")?;
            let summary = DiagnoseSummary::new(last.epoch, &last.report, taylor);
            report::write_json(&summary, &out.join("diagnose.json"))?;
            println!(
                "epoch {}: conflict rate {:.3}, mean cosine {:.4}",
                summary.epoch, summary.conflict_rate, summary.mean_cosine
            );
        }
        Command::Pssim {
            workers,
            rounds,
            overrides,
        } => {
            apply(&mut cfg, overrides);
            cfg.train.strategy = Strategy::Mamdr;
            cfg.validate()?;
            echo_config(&out, raw.as_deref(), &cfg)?;
            let data = experiment::load_data(&cfg)?;
            let rounds = rounds.unwrap_or(cfg.train.epochs);
            let single = cfg.seeds.len() == 1;
            for &seed in &cfg.seeds {
                let r = experiment::pssim_run(&cfg, &data, seed, *workers, rounds)?;
                let dir = if single { out.clone() } else { ensure_dir(&out.join(format!("seed-{seed}")))? };
                report::write_rounds(&r.log, &dir.join("rounds.csv"))?;
                report::write_metrics(&r.test, &dir.join("test_metrics.csv"))?;
                report::write_json(&MetricSummary::from(&r.test), &dir.join("summary.json"))?;
                Checkpoint {
                    spec: r.spec,
                    strategy: Strategy::Mamdr,
                    state: r.server.global,
                }
                .save(&dir.join("checkpoint.bin"))?;
                println!("seed {seed}, m={workers}: test macro-AUC {:.4}", r.test.macro_auc);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
