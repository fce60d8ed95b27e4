use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xgrade::commands::{self, OperatingRule, RunConfig};
use xgrade::data::{FixtureConfig, Split};
use xgrade::explain::{Fill, OcclusionConfig};
use xgrade::Result;

#[derive(Parser)]
#[command(name = "xgrade", version, about = "Chest X-ray grading with residual-inception networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML) naming the network config and training settings.
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest CSV (`path,split,<class>...`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint to evaluate, or to initialize from when training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn run(&self) -> Result<RunConfig> {
        RunConfig::load(
            &self.config,
            self.manifest.as_deref(),
            self.checkpoint.as_deref(),
            self.seed,
            &self.out,
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the manifest's train split.
    Train(Common),
    /// Score a split and write report tables and ROC exports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
        /// Fixed decision threshold (default 0.5).
        #[arg(long, conflicts_with = "target_sensitivity")]
        threshold: Option<f64>,
        /// Pick each class's threshold to reach this sensitivity.
        #[arg(long)]
        target_sensitivity: Option<f64>,
    },
    /// Print per-class confidences for one image.
    Predict {
        #[command(flatten)]
        common: Common,
        image: PathBuf,
    },
    /// Occlusion heatmap for one image and class.
    Heatmap {
        #[command(flatten)]
        common: Common,
        image: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long, default_value_t = 32)]
        patch: usize,
        #[arg(long, default_value_t = 16)]
        stride: usize,
        #[arg(long, default_value = "mean")]
        fill: String,
    },
    /// Per-class ROC CSVs from a prediction file.
    RocExport {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a synthetic planted-pattern dataset.
    Fixture {
        #[arg(long, default_value = "fixture")]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated class names.
        #[arg(long, default_value = "pneumonia,tb")]
        classes: String,
        #[arg(long, default_value_t = 36)]
        size: usize,
    },
    /// Describe a checkpoint and/or network config.
    Inspect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let s = commands::cmd_train(&common.run()?)?;
            let last = s.records.last().map_or(f64::NAN, |r| r.loss);
            println!(
                "trained {} steps, final loss {last:.6}; checkpoint {}",
                s.records.len(),
                s.checkpoint.display()
            );
        }
        Command::Evaluate {
            common,
            split,
            threshold,
            target_sensitivity,
        } => {
            let rule = match (threshold, target_sensitivity) {
                (_, Some(s)) => OperatingRule::TargetSensitivity(s),
                (Some(t), None) => OperatingRule::Threshold(t),
                (None, None) => OperatingRule::default(),
            };
            let split: Split = split.parse()?;
            let s = commands::cmd_evaluate(&common.run()?, split, rule)?;
            print!("{}", xgrade::metrics::report::performance_text(&s.reports));
        }
        Command::Predict { common, image } => {
            for (class, score) in commands::cmd_predict(&common.run()?, &image)? {
                println!("{class}\t{score:.6}");
            }
        }
        Command::Heatmap {
            common,
            image,
            class,
            patch,
            stride,
            fill,
        } => {
            let cfg = OcclusionConfig {
                patch,
                stride,
                fill: fill.parse::<Fill>()?,
                parallel: xgrade::data::threads_from_env() > 0,
            };
            let hm = commands::cmd_heatmap(&common.run()?, &image, &class, &cfg)?;
            println!("{}x{} heatmap, peak at {:?}", hm.rows, hm.cols, hm.argmax());
        }
        Command::RocExport {
            predictions,
            manifest,
            out,
        } => {
            for f in commands::cmd_roc_export(&predictions, &manifest, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Fixture {
            out,
            n,
            test,
            seed,
            classes,
            size,
        } => {
            let cfg = FixtureConfig {
                train: n,
                test,
                seed,
                size,
                classes: classes.split(',').map(|s| s.trim().to_owned()).collect(),
                ..FixtureConfig::default()
            };
            println!("{}", commands::cmd_fixture(&out, &cfg)?.display());
        }
        Command::Inspect {
            checkpoint,
            network,
        } => print!(
            "{}",
            commands::cmd_inspect(checkpoint.as_deref(), network.as_deref().map(Path::new))?
        ),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
