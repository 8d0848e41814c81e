use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gih_core::config::ExperimentConfig;
use gih_core::exp;
use gih_core::Subset;

/// Experiments on in-context learning of n-gram Markov chains with a
/// two-attention-layer transformer.
#[derive(Parser, Debug)]
#[command(name = "gih-lab", version)]
struct Cli {
    /// key = value configuration file; defaults reproduce the reference protocol
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample training and validation batches
    GenData,
    /// Select the information set by Monte Carlo over the kernel prior
    Infoset,
    /// Train on the batches in the output directory
    Train,
    /// Compare analytic gradients with central finite differences
    Gradcheck,
    /// Distance between a model and the GIH estimator on a batch
    GihEval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Batch file (default: the validation batch in the output directory)
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Subset code such as 110 (default: run information-set selection)
        #[arg(long)]
        s_star: Option<String>,
    },
    /// Test loss of a frozen model over a grid of priors and lengths
    Generalize {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    /// Invariant or validation failure.
    Check(anyhow::Error),
    /// I/O or configuration problem.
    Setup(anyhow::Error),
}

impl From<gih_core::Error> for Failure {
    fn from(e: gih_core::Error) -> Self {
        if e.is_io_or_config() {
            Failure::Setup(e.into())
        } else {
            Failure::Check(e.into())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")
            .map_err(Failure::Setup)?;
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenData => {
            let s = exp::gen_data(&cfg)?;
            println!("wrote {} sequences to {}", s.n_train, s.train_path.display());
            println!("wrote {} sequences to {}", s.n_val, s.val_path.display());
            println!(
                "prior: d={} pa={:?} alpha={} L={}; mean column max probability {:.4}; uniform-start fallbacks {}",
                cfg.vocab, cfg.parents, cfg.alpha, cfg.seq_len, s.mean_max_prob, s.init_fallbacks
            );
        }
        Command::Infoset => {
            let r = exp::cmd_infoset(&cfg)?;
            let m = r.table.universe();
            for (i, s) in r.table.subsets().iter().enumerate() {
                println!("{}  {:.6} +- {:.6}", s.code(m), r.mi_mean[i], r.mi_stderr[i]);
            }
            println!(
                "S* = {} ({}), gap {:.6}, kernels {} (skipped {})",
                r.s_star_code(),
                r.s_star_subset(),
                r.info_gap,
                r.n_kernels,
                r.n_skipped
            );
        }
        Command::Train => {
            let s = exp::cmd_train(&cfg)?;
            let t = &s.trajectory;
            let star = match &cfg.gih_reference {
                Some(c) => cfg.reference_subset(c)?,
                None => Subset::new(cfg.parents.clone())?,
            };
            for stage in ["1", "2", "3", "all"] {
                let Some(r) = t.records.iter().rev().find(|r| r.stage.to_string() == stage) else {
                    continue;
                };
                let p = t.p_of(r, &star.code(cfg.window)).unwrap_or(f64::NAN);
                let sig = star
                    .elems()
                    .iter()
                    .filter(|&&h| h <= cfg.heads && h <= cfg.window)
                    .map(|&h| r.sigma[h - 1][h - 1])
                    .fold(f64::INFINITY, f64::min);
                println!(
                    "stage {stage} end (epoch {}): p_{} = {:.4}, min sigma = {:.4}, a = {:.4}, train loss {:.6}, val loss {:.6}",
                    r.epoch,
                    star.code(cfg.window),
                    p,
                    sig,
                    r.a,
                    r.train_loss,
                    r.val_loss
                );
            }
            println!("checkpoint {}", s.checkpoint.display());
            println!("trajectory {}", s.trajectory_path.display());
        }
        Command::Gradcheck => {
            let reports = exp::cmd_gradcheck(&cfg)?;
            let worst = reports.iter().map(|r| r.max_rel()).fold(0.0, f64::max);
            for (i, r) in reports.iter().enumerate() {
                println!(
                    "draw {i}: a {:.2e}  w {:.2e}  c {:.2e}",
                    r.a.max_rel, r.w.max_rel, r.c.max_rel
                );
            }
            println!("worst relative error {worst:.3e} (tolerance {:e})", exp::GRADCHECK_TOLERANCE);
            if reports.iter().any(|r| r.degraded) {
                return Err(Failure::Check(anyhow::anyhow!(
                    "gradient check above tolerance"
                )));
            }
        }
        Command::GihEval {
            checkpoint,
            batch,
            s_star,
        } => {
            let star = match s_star {
                Some(c) => cfg.reference_subset(c)?,
                None => exp::infoset_report(&cfg)?.s_star_subset().clone(),
            };
            let batch = batch
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join(exp::VAL_FILE));
            let s = exp::cmd_gih_eval(&cfg, checkpoint, &batch, &star)?;
            println!(
                "S* = {}: mean l1 {:.6} over {} sequences ({} without a match)",
                star.code(cfg.window),
                s.mean_l1,
                s.count - s.no_match,
                s.no_match
            );
        }
        Command::Generalize { checkpoint } => {
            let cells = exp::cmd_generalize(&cfg, checkpoint)?;
            for c in &cells {
                println!(
                    "alpha {:<5} L {:<5} loss {:.6} +- {:.6}",
                    c.alpha, c.len_l, c.mean_loss, c.stderr
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Setup(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
