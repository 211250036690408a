use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fgan_core::pipeline::{PipelineConfig, Run, Variant};

/// Fairness-aware GAN pipeline.
#[derive(Parser, Debug)]
#[command(name = "fgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON pipeline config; the built-in Gaussian benchmark when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root directory for run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Independent sample sets per evaluation.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Generated samples per evaluation set.
    #[arg(long, global = true)]
    samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the imbalanced training set and the balanced reference set.
    GenData,
    /// Train the auxiliary classifier.
    TrainClassifier,
    /// Train the biased GAN on the imbalanced set.
    TrainGan,
    /// Mine the balanced synthetic set from the biased generator.
    Explore,
    /// Run every missing stage, train the variant's model and evaluate.
    Rebalance,
    /// Write evaluation reports for the trained models.
    Evaluate,
    /// FID heatmap between class-mix profiles of the reference set.
    AuditFid {
        /// Comma-separated profiles: uniform, skewed, classN or a:b:c weights.
        #[arg(long, value_delimiter = ',')]
        profiles: Option<Vec<String>>,
    },
    /// Summarise the reports and export sample grids.
    Report,
    /// Print the effective config and its hash.
    Config,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: fgan_core::FganError| e.to_string())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(v) = cli.variant {
        cfg.variant = v;
    }
    if let Some(r) = cli.repeats {
        cfg.eval.repeats = r;
    }
    if let Some(n) = cli.samples {
        cfg.eval.samples = n;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Command::Config = cli.command {
        cfg.validate()?;
        print!("{}", cfg.resolved().to_json()?);
        eprintln!("config hash {}", cfg.hash()?);
        return Ok(());
    }
    let run = Run::open(cfg)?;
    match cli.command {
        Command::GenData => {
            let (train, reference) = run.gen_data()?;
            println!("training set {:?}", train.class_counts());
            println!("reference set {:?}", reference.class_counts());
        }
        Command::TrainClassifier => {
            let acc = run.train_classifier()?;
            println!("classifier accuracy {acc:.4}");
        }
        Command::TrainGan => {
            let model = run.train_gan()?;
            println!("trained biased GAN for {} steps", model.step);
        }
        Command::Explore => {
            let s = run.explore()?;
            println!("synthetic set {:?}, start vectors {:?}", s.class_counts, s.start_vectors);
        }
        Command::Rebalance | Command::Evaluate => {
            let reports = if matches!(cli.command, Command::Rebalance) {
                run.rebalance()?
            } else {
                run.evaluate()?
            };
            for r in reports {
                println!("{:<14} fairness {}  FID {:.4}  KID x10^3 {:.4}  IS {}", r.label, r.fairness_hard, r.fid, r.kid_x1000, r.inception_score);
            }
        }
        Command::AuditFid { profiles } => {
            let profiles = profiles.unwrap_or_else(|| run.config.audit.profiles.clone());
            let h = run.audit_fid(&profiles).context("FID audit failed")?;
            print!("{}", h.to_csv());
            println!("minimum cross/same ratio {:.2}, identical-set FID {:.2e}", h.min_cross_ratio(), h.identical_set);
        }
        Command::Report => print!("{}", run.report()?),
        Command::Config => unreachable!(),
    }
    println!("run directory {}", run.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
