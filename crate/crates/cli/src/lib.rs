//! Command-line harness: dataset generation, training, evaluation, latent
//! navigation, and embedding, glued over the core library.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod embed;
pub mod eval;
pub mod navigate;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use eval::evaluate;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use latentmorph_core::data::{make_dataset, GeneratorConfig};

#[derive(Parser)]
#[command(name = "latentmorph", version, about = "Voxel-shape VAE toolkit: synthetic data, training, latent navigation, spectral embedding")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory for metrics, reports, traces, and plots.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-class voxel dataset.
    GenData {
        /// Samples per class.
        #[arg(long)]
        samples_per_class: Option<usize>,
    },
    /// Train the VAE + classifier; writes metrics.csv and checkpoints.
    Train {
        /// Checkpoint directory.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Model preset: desk32 or full80.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        max_iters: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        eval_every: Option<u64>,
        #[arg(long)]
        patience: Option<usize>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split; writes report.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Walk a sample's latent mean toward a target class; writes a trace dir.
    Navigate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest id of the starting sample.
        #[arg(long)]
        sample_id: u64,
        /// Target class (0 or 1).
        #[arg(long)]
        target: usize,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        p_stop: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Embed training latents (and optionally a trace) into 2D.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trace directory from `navigate` to embed jointly.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// kNN neighborhood size.
        #[arg(long)]
        k: Option<usize>,
    },
}

fn build_config(common: &CommonArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(data) = &common.data {
        cfg.dataset_dir = data.clone();
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    match command {
        Command::GenData { samples_per_class } => {
            if let Some(n) = samples_per_class {
                cfg.data.samples_per_class = *n;
            }
        }
        Command::Train {
            checkpoint_dir,
            preset,
            max_iters,
            lr,
            batch,
            eval_every,
            patience,
            resume: _,
        } => {
            if let Some(dir) = checkpoint_dir {
                cfg.checkpoint_dir = dir.clone();
            }
            if let Some(p) = preset {
                cfg.preset = p.clone();
            }
            if let Some(v) = max_iters {
                cfg.train.max_iters = *v;
            }
            if let Some(v) = lr {
                cfg.train.lr = *v;
            }
            if let Some(v) = batch {
                cfg.train.batch = *v;
            }
            if let Some(v) = eval_every {
                cfg.train.eval_every = *v;
            }
            if let Some(v) = patience {
                cfg.train.patience = *v;
            }
        }
        Command::Navigate { lambda, p_stop, max_iters, .. } => {
            if let Some(v) = lambda {
                cfg.nav.lambda = *v;
            }
            if let Some(v) = p_stop {
                cfg.nav.p_stop = *v;
            }
            if let Some(v) = max_iters {
                cfg.nav.max_iters = *v;
            }
        }
        Command::Embed { k, .. } => {
            if let Some(v) = k {
                cfg.embed.k = *v;
            }
        }
        Command::Eval { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let gen = GeneratorConfig::default();
    let records = make_dataset(
        &gen,
        cfg.data.samples_per_class,
        cfg.data.split,
        cfg.seed,
        &cfg.dataset_dir,
    )?;
    let count = |s: &str| records.iter().filter(|r| r.split == s).count();
    println!(
        "wrote {} samples ({} train / {} val / {} test) to {}",
        records.len(),
        count("train"),
        count("val"),
        count("test"),
        cfg.dataset_dir.display()
    );
    Ok(())
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    match &cli.command {
        Command::GenData { .. } => cmd_gen_data(cfg),
        Command::Train { resume, .. } => train::cmd_train(cfg, resume.as_deref()),
        Command::Eval { checkpoint, split } => eval::cmd_eval(cfg, checkpoint, split),
        Command::Navigate { checkpoint, sample_id, target, .. } => {
            navigate::cmd_navigate(cfg, checkpoint, *sample_id, *target)
        }
        Command::Embed { checkpoint, trace_dir, .. } => {
            embed::cmd_embed(cfg, checkpoint, trace_dir.as_deref())
        }
    }
}

/// Entry point; returns the process exit code (0 ok, 1 usage, 2 runtime).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version land here too and should exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match build_config(&cli.common, &cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 1;
        }
    };
    match dispatch(&cli, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
