//! `pifm`: run the reconstruction pipeline stage by stage or end to end.
//!
//! Stage commands write into `--out` and pick up checkpoints an earlier stage
//! left there, so `train-prior`, `train-flow` and `reconstruct` can run as
//! separate processes. `--force` retrains instead and allows overwriting a
//! report directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pifm::data::TaskKind;
use pifm::experiment::{
    emit_report, run_pipeline, run_sweep_with, run_toy, select, EmitOptions, ExperimentConfig, Pipeline, Report,
    SweepSpec, ToyConfig,
};
use pifm::priors::PriorKind;
use pifm::{PifmError, Result};

#[derive(Parser)]
#[command(name = "pifm", version, about = "Prior-informed flow matching for graph reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset and write it in TU layout.
    Ingest(Common),
    /// Write the train/val/test split.
    Split(Common),
    /// Write observed graphs and masks of the test split.
    Mask(Common),
    /// Fit the edge prior on the training split.
    TrainPrior(Common),
    /// Train the velocity network.
    TrainFlow(Common),
    /// Write prior and flow predictions for the test split.
    Reconstruct(Common),
    /// Run the whole pipeline and write a report under `<out>/report`.
    Evaluate(Common),
    /// Four-node coupling study.
    Toy(Common),
    /// Grid over Euler steps and sampling noise.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "pifm-out")]
    out: PathBuf,
    /// Euler steps.
    #[arg(long)]
    k: Option<usize>,
    /// Sampling noise of the source state.
    #[arg(long = "sigma-s")]
    sigma_s: Option<f64>,
    /// node2vec, sage, graphon or gaussian.
    #[arg(long)]
    prior: Option<PriorKind>,
    /// linkpred, expansion or denoise.
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long = "clamp-observed")]
    clamp_observed: bool,
    #[arg(long)]
    force: bool,
    /// Exit nonzero when a headline metric is NaN.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated Euler step counts.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    ks: Vec<usize>,
    /// Comma-separated sampling noise levels; the config's when omitted.
    #[arg(long, value_delimiter = ',')]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    samples: usize,
}

fn experiment_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.k {
        cfg.flow.k = k;
    }
    if let Some(s) = c.sigma_s {
        cfg.flow.sigma_s_sample = s;
    }
    if let Some(p) = c.prior {
        cfg.prior.kind = p;
    }
    if let Some(t) = c.task {
        cfg.task = t;
    }
    if let Some(r) = c.rate {
        cfg.rate = r;
    }
    if let Some(t) = c.threshold {
        cfg.threshold = t;
    }
    cfg.flow.clamp_observed |= c.clamp_observed;
    cfg.strict |= c.strict;
    Ok(cfg)
}

fn toy_config(c: &Common) -> Result<ToyConfig> {
    let mut cfg: ToyConfig = match &c.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => ToyConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.k {
        cfg.flow.k = k;
    }
    if let Some(s) = c.sigma_s {
        cfg.flow.sigma_s_sample = s;
    }
    cfg.flow.clamp_observed |= c.clamp_observed;
    Ok(cfg)
}

fn pipeline(c: &Common) -> Result<Pipeline> {
    Ok(Pipeline::new(&experiment_config(c)?, Some(&c.out))?.reuse_checkpoints(!c.force))
}

fn report(rep: &Report, dir: &Path, c: &Common, strict: bool) -> Result<bool> {
    let out = emit_report(
        rep,
        dir,
        EmitOptions {
            force: c.force,
            strict,
        },
    )?;
    print!("{}", rep.summary(strict));
    println!("wrote {} files to {}", out.files.len(), dir.display());
    Ok(out.ok)
}

/// Ok(false) means the run finished but a check failed.
fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Ingest(c) => {
            let graphs = pipeline(&c)?.ingest()?;
            println!("{} graphs written to {}", graphs.len(), c.out.join("dataset").display());
        }
        Command::Split(c) => {
            let mut p = pipeline(&c)?;
            let graphs = p.ingest()?;
            let (tr, va, te) = p.split(graphs.len())?.sizes();
            println!("split {tr}/{va}/{te} written to {}", c.out.join("split.json").display());
        }
        Command::Mask(c) => {
            let mut p = pipeline(&c)?;
            let graphs = p.ingest()?;
            let split = p.split(graphs.len())?;
            let masked = p.mask(&select(&graphs, &split.test_ids))?;
            println!("{} masked test graphs in {}", masked.len(), c.out.join("masks").display());
        }
        Command::TrainPrior(c) => {
            let mut p = pipeline(&c)?;
            let graphs = p.ingest()?;
            let split = p.split(graphs.len())?;
            let prior = p.prior(&select(&graphs, &split.train_ids))?;
            println!("{} prior saved to {}", prior.kind(), c.out.join("prior.ckpt").display());
        }
        Command::TrainFlow(c) => {
            let mut p = pipeline(&c)?;
            let graphs = p.ingest()?;
            let split = p.split(graphs.len())?;
            let train = select(&graphs, &split.train_ids);
            let prior = p.prior(&train)?;
            let (_, best, history) = p.flow(&train, &select(&graphs, &split.val_ids), &prior)?;
            if let (Some(b), Some(last)) = (best, history.last()) {
                println!("trained {} epochs, best epoch {b}, final loss {:.5}", history.len(), last.train_loss);
            }
            println!("flow saved to {}", c.out.join("flow.ckpt").display());
        }
        Command::Reconstruct(c) => {
            let mut p = pipeline(&c)?;
            let graphs = p.ingest()?;
            let split = p.split(graphs.len())?;
            let train = select(&graphs, &split.train_ids);
            let prior = p.prior(&train)?;
            let (net, _, _) = p.flow(&train, &select(&graphs, &split.val_ids), &prior)?;
            let cfg = p.config().clone();
            let settings = p.sample_settings(cfg.flow.k, cfg.flow.sigma_s_sample, cfg.samples_per_graph);
            let recs = p.reconstruct(&net, &prior, &select(&graphs, &split.test_ids), settings)?;
            println!("{} reconstructions in {}", recs.len(), c.out.join("predictions").display());
        }
        Command::Evaluate(c) => {
            let p = pipeline(&c)?;
            let strict = p.config().strict;
            let res = run_pipeline(p)?;
            return report(&res.to_report(), &c.out.join("report"), &c, strict);
        }
        Command::Toy(c) => {
            let res = run_toy(&toy_config(&c)?)?;
            return report(&res.to_report(), &c.out, &c, c.strict);
        }
        Command::Sweep(s) => {
            let c = &s.common;
            let p = pipeline(c)?;
            let strict = p.config().strict;
            let spec = SweepSpec {
                ks: s.ks.clone(),
                sigmas: s.sigmas.clone(),
                samples_per_graph: s.samples,
            };
            let res = run_sweep_with(p, &spec)?;
            return report(&res.to_report(), &c.out.join("sweep"), c, strict);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("pifm: checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("pifm: {e}");
            ExitCode::from(match e {
                PifmError::Config(_) | PifmError::Parse { .. } | PifmError::Json(_) => 2,
                _ => 3,
            })
        }
    }
}
