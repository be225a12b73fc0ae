mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use exoppo::checkpoint::{write_atomic, Checkpoint};
use exoppo::dataset::Dataset;
use exoppo::objective::{clip_ratio, xi, xi_grad, SurrogateConfig};
use exoppo::trainer::{self, MetricsEvent};
use exoppo::verifier;
use exoppo::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{resolve, RunConfig};

#[derive(Parser)]
#[command(name = "exoppo", version, about = "Extended off-policy PPO toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config value, e.g. `--set surrogate.alpha=2`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory for manifest, metrics and checkpoints.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Online training.
    Train(RunArgs),
    /// Offline training on a dataset file (`offline.dataset`).
    Offline(RunArgs),
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Randomized tabular check of the multi-generation improvement bound.
    VerifyBound {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of prior policies per instance.
        #[arg(long, default_value_t = 3)]
        priors: usize,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long, default_value_t = 1.0, hide = true)]
        penalty_scale: f64,
    },
    /// Surrogate curves over r in (0, 3] as CSV.
    Curves {
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long, value_delimiter = ',', default_value = "2,5,8")]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = 300)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a checkpoint's greedy policy into a dataset file.
    GenDataset {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    version: &'a str,
    out_dir: String,
    started_unix: u64,
    config: &'a RunConfig,
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var("EXOPPO_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("EXOPPO_SEED must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", args.config.display())))?;
    resolve(&text, &args.overrides, seed_from_env()?)
}

/// Creates the run directory and writes the manifest and resolved config.
fn prepare_run(command: &str, cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let manifest = RunManifest {
        command,
        seed: cfg.env.seed,
        version: env!("CARGO_PKG_VERSION"),
        out_dir: out.display().to_string(),
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config: cfg,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&out.join("manifest.json"), &json)?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())
}

struct MetricsLog {
    out: BufWriter<fs::File>,
}

impl MetricsLog {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(fs::File::create(path)?),
        })
    }

    fn write(&mut self, ev: &MetricsEvent) -> Result<()> {
        serde_json::to_writer(&mut self.out, ev).map_err(|e| Error::Format(e.to_string()))?;
        self.out.write_all(b"\n")?;
        if ev.event == "eval" {
            eprintln!(
                "step {:>8}  eval return {:.2} +- {:.2}",
                ev.step,
                ev.return_mean.unwrap_or(f64::NAN),
                ev.return_std.unwrap_or(f64::NAN)
            );
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    prepare_run("train", &cfg, &args.out)?;
    let mut log = MetricsLog::create(&args.out.join("metrics.jsonl"))?;
    let outcome = trainer::train(tcfg, &mut |ev| log.write(ev))?;
    log.finish()?;
    outcome.checkpoint.save(&args.out.join("final.ckpt"))?;
    let c = &outcome.counters;
    println!(
        "trained {} env steps over {} rounds ({} fresh samples per round)",
        c.env_steps, c.update_rounds, c.fresh_per_round
    );
    Ok(())
}

fn cmd_offline(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let ocfg = cfg.offline_config();
    ocfg.validate()?;
    if cfg.offline.dataset.is_empty() {
        return Err(Error::Config("offline.dataset is not set".into()));
    }
    let dataset = Dataset::load(&ocfg.dataset)
        .map_err(|e| Error::Config(format!("cannot load dataset {}: {e}", ocfg.dataset.display())))?;
    prepare_run("offline", &cfg, &args.out)?;
    let mut log = MetricsLog::create(&args.out.join("metrics.jsonl"))?;
    let outcome = trainer::train_offline_on(&dataset, &ocfg, &mut |ev| log.write(ev))?;
    log.finish()?;
    outcome.checkpoint.save(&args.out.join("final.ckpt"))?;
    if !outcome.final_returns.is_empty() {
        let mean = outcome.final_returns.iter().sum::<f64>() / outcome.final_returns.len() as f64;
        println!("final eval return {mean:.3} (dataset logged {:.3})", dataset.logged_return);
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, episodes: usize, seed: u64) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let returns = trainer::evaluate_policy(&ckpt.policy, &ckpt.env, episodes, seed)?;
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    let out = serde_json::json!({
        "env": ckpt.env.id.name(),
        "episodes": episodes,
        "return_mean": mean,
        "return_std": std,
        "returns": returns,
    });
    println!("{out}");
    Ok(())
}

fn cmd_verify(instances: usize, seed: u64, priors: usize, tol: f64, penalty_scale: f64) -> Result<bool> {
    if priors == 0 {
        return Err(Error::Config("--priors must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rep = verifier::sweep(&mut rng, instances, priors, penalty_scale, tol)?;
    println!(
        "{:>5} {:>13} {:>13} {:>13} {:>13} {:>13}",
        "inst", "lhs", "surrogate", "penalty", "rhs", "slack"
    );
    for (i, r) in rep.reports.iter().enumerate() {
        println!(
            "{i:>5} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e}",
            r.lhs, r.surrogate, r.penalty, r.rhs, r.slack
        );
    }
    println!("min slack                {:.6e}", rep.min_slack);
    println!("bound violations         {}", rep.theorem_violations);
    println!("max identity residual    {:.3e}", rep.max_pdl_residual);
    println!("visitation violations    {}", rep.visitation_violations);
    println!("max single-prior gap     {:.3e}", rep.max_convexity_gap);
    Ok(rep.all_hold(tol))
}

fn cmd_curves(epsilon: f64, alphas: &[f64], points: usize, out: &Path) -> Result<()> {
    if points == 0 || alphas.is_empty() {
        return Err(Error::Config("need at least one point and one alpha".into()));
    }
    let mut csv = String::from("alpha,r,xi,xi_grad,clip,clip_grad\n");
    for &alpha in alphas {
        let cfg = SurrogateConfig {
            epsilon,
            alpha,
            ..SurrogateConfig::exo(true)
        };
        cfg.validate()?;
        for k in 1..=points {
            let r = 3.0 * k as f64 / points as f64;
            csv.push_str(&format!(
                "{alpha},{r},{},{},{},{}\n",
                xi(r, &cfg)?,
                xi_grad(r, &cfg)?,
                clip_ratio(r, epsilon),
                if (1.0 - epsilon..=1.0 + epsilon).contains(&r) { 1.0 } else { 0.0 },
            ));
        }
    }
    write_atomic(out, csv.as_bytes())
}

fn cmd_gen_dataset(checkpoint: &Path, episodes: usize, gamma: f64, seed: u64, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds = trainer::generate_dataset(&ckpt, episodes, gamma, seed)?;
    ds.save(out)?;
    println!(
        "wrote {} records from {} episodes, logged return {:.3}",
        ds.records.len(),
        episodes,
        ds.logged_return
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Offline(a) => cmd_offline(a).map(|_| true),
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => cmd_eval(checkpoint, *episodes, *seed).map(|_| true),
        Command::VerifyBound {
            instances,
            seed,
            priors,
            tolerance,
            penalty_scale,
        } => cmd_verify(*instances, *seed, *priors, *tolerance, *penalty_scale),
        Command::Curves {
            epsilon,
            alpha,
            points,
            out,
        } => cmd_curves(*epsilon, alpha, *points, out).map(|_| true),
        Command::GenDataset {
            checkpoint,
            episodes,
            gamma,
            seed,
            out,
        } => cmd_gen_dataset(checkpoint, *episodes, *gamma, *seed, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: bound violated");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
