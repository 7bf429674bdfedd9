use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use cloudseg::losscore::{CeVariant, LossKind};
use cloudseg::raster::PatchMode;
use cloudseg_cli::checks::Faults;
use cloudseg_cli::commands::*;
use cloudseg_cli::config::{Overrides, RunConfig};
use cloudseg_cli::exit_code;

/// Cloud and cloud-shadow segmentation toolkit.
#[derive(Debug, Parser)]
#[command(name = "cloudseg", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// jaccard | ce | fjl1 | fjl2
    #[arg(long, global = true)]
    loss: Option<LossKind>,
    /// as-written | symmetric
    #[arg(long, global = true)]
    ce_variant: Option<CeVariant>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    /// none | half
    #[arg(long, global = true)]
    overlap: Option<PatchMode>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes.
    Synth,
    /// Shadow-augment scenes with the configured parameter grid.
    Augment {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Cut scenes into patches.
    Tile {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train a network; writes a checkpoint and the loss history.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Predict probability maps and masks.
    Predict {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predicted masks against ground truth.
    Evaluate {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Run the loss and gradient self-checks.
    Losscheck {
        #[arg(long, hide = true)]
        inject_wrong_gradient: bool,
    },
    /// Rank shadow augmentation parameters against a no-augmentation baseline.
    Gridsearch {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// k-fold cross-validation.
    Crossval {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let flags = Overrides {
        seed: cli.seed,
        loss: cli.loss,
        ce_variant: cli.ce_variant,
        patch_size: cli.patch_size,
        overlap: cli.overlap,
        threshold: cli.threshold,
        out: cli.out.clone(),
    };
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &flags).context("loading configuration")?;
    if let Command::Crossval { folds: Some(k), .. } = cli.command {
        cfg.crossval.folds = k;
        cfg.validate()?;
    }
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    match &cli.command {
        Command::Synth => {
            let dirs = cmd_synth(&cfg)?;
            println!("wrote {} scenes to {}", dirs.len(), cfg.out.display());
        }
        Command::Augment { input } => {
            let s = cmd_augment(&cfg, input.as_deref())?;
            println!("wrote {} augmented samples, skipped {} scenes", s.written.len(), s.skipped.len());
        }
        Command::Tile { input } => {
            for r in cmd_tile(&cfg, input.as_deref())? {
                println!("{}: {} patches, {} kept", r.scene, r.patches, r.kept);
            }
        }
        Command::Train { input } => {
            let s = cmd_train(&cfg, input.as_deref())?;
            println!("best epoch {}; wrote {} and {}", s.best_epoch, s.checkpoint.display(), s.history.display());
        }
        Command::Predict { input, checkpoint } => {
            let dirs = cmd_predict(&cfg, input.as_deref(), checkpoint.as_deref())?;
            println!("predicted {} scenes into {}", dirs.len(), cfg.out.display());
        }
        Command::Evaluate { pred, gt } => print!("{}", cmd_evaluate(&cfg, pred.as_deref(), gt.as_deref())?),
        Command::Losscheck { inject_wrong_gradient } => {
            let report = cmd_losscheck(&cfg, Faults { wrong_gradient: *inject_wrong_gradient })?;
            report.checks.iter().for_each(|c| println!("{c}"));
            report.warnings.iter().for_each(|w| println!("[WARN] {w}"));
            if !report.all_passed() {
                bail!("{} of {} checks failed", report.checks.iter().filter(|c| !c.passed).count(), report.checks.len());
            }
        }
        Command::Gridsearch { input } => {
            let r = cmd_gridsearch(&cfg, input.as_deref())?;
            match r.baseline {
                Some(b) => println!("baseline shadow jaccard {b:.4}"),
                None => println!("no parameter combinations to evaluate"),
            }
            for e in &r.ranked {
                let p = e.params;
                println!("azimuth offset {:>5} r {:>5} gamma {:.3}: {:.4}", p.azimuth_offset_deg, p.shift_r_px, p.gamma, e.jaccard);
            }
        }
        Command::Crossval { input, .. } => {
            let r = cmd_crossval(&cfg, input.as_deref())?;
            for f in &r.folds {
                println!("fold {}: jaccard {:.4} over {} scenes", f.fold, f.report.jaccard, f.scenes.len());
            }
            println!("mean jaccard {:.4}", r.mean_jaccard);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
