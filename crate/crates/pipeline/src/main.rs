use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracto_core::representation::Representation;
use tracto_pipeline::commands::{cmd_evaluate, cmd_finetune, cmd_infer, cmd_prepare, cmd_pretrain, cmd_synth};
use tracto_pipeline::config::PipelineConfig;
use tracto_pipeline::training::{best_path, RunOptions, Stage, StageOutcome};

#[derive(Parser)]
#[command(name = "tractogpt", version, about = "Streamline classification with a point-patch GPT")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured representation: streamline, cluster or fusion.
    #[arg(long, global = true)]
    representation: Option<Representation>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Continue from the stage's last checkpoint in --out.
    #[arg(long)]
    resume: bool,
    /// Stop once this many epochs of the schedule are done.
    #[arg(long)]
    stop_after: Option<usize>,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions { resume: self.resume, stop_after: self.stop_after }
    }
}

fn best_note(o: &StageOutcome) -> String {
    match o.best_epoch {
        Some(e) => format!(" at epoch {}", e + 1),
        None => String::new(),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write labeled synthetic subjects.
    Synth {
        #[arg(long, default_value_t = 4)]
        subjects: usize,
        /// Streamlines per bundle.
        #[arg(long, default_value_t = 600)]
        streamlines: usize,
    },
    /// Select balanced training and validation samples.
    Prepare,
    /// Next-patch reconstruction pretraining.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Classification fine-tuning.
    Finetune {
        /// Pretrained checkpoint (defaults to <out>/pretrain.ckpt if present).
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Label every streamline of a tractogram.
    Infer {
        input: PathBuf,
        /// Defaults to <out>/finetune.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Voxel DICE / overlap / overreach per class.
    Evaluate {
        predicted: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        voxel_size: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let Some(path) = &cli.config else { bail!("--config is required for this command") };
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(r) = cli.representation {
        cfg.representation = r.to_string();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Synth { subjects, streamlines } => {
            let seed = match (&cli.seed, &cli.config) {
                (Some(s), _) => *s,
                (None, Some(_)) => load_config(&cli)?.seed,
                (None, None) => 0,
            };
            for p in cmd_synth(&out, *subjects, *streamlines, seed)? {
                println!("{}", p.display());
            }
        }
        Command::Prepare => {
            let p = cmd_prepare(&load_config(&cli)?, &out)?;
            print!("{}", toml::to_string(&p.manifest.counts)?);
        }
        Command::Pretrain { run } => {
            let o = cmd_pretrain(&load_config(&cli)?, &out, run.options())?;
            println!("best validation loss {:.6}{}", o.best_metric.unwrap_or(f64::NAN), best_note(&o));
        }
        Command::Finetune { pretrained, run } => {
            let o = cmd_finetune(&load_config(&cli)?, &out, pretrained.as_deref(), run.options())?;
            println!("best validation macro accuracy {:.4}{}", o.best_metric.unwrap_or(f64::NAN), best_note(&o));
        }
        Command::Infer { input, checkpoint } => {
            let cfg = load_config(&cli)?;
            let ck = checkpoint.clone().unwrap_or_else(|| best_path(&out, Stage::Finetune));
            let inf = cmd_infer(&cfg, &ck, input, &out)?;
            println!("labeled {} streamlines into {}", inf.labels.len(), out.join("predicted.tck").display());
        }
        Command::Evaluate { predicted, reference, voxel_size } => {
            let voxel = match (voxel_size, &cli.config) {
                (Some(v), _) => *v,
                (None, Some(_)) => load_config(&cli)?.eval.voxel_size_mm,
                (None, None) => 1.0,
            };
            let report = cmd_evaluate(predicted, reference, voxel, cli.out.as_deref()).context("evaluation failed")?;
            print!("{}", report.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
