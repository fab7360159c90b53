use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pclab::commands;
use pclab::{thread_pool, ExperimentConfig, Result};

#[derive(Parser)]
#[command(
    name = "pclab",
    version,
    about = "Correlation-aware long-tailed classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides both the data and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test CSVs and a manifest.
    GenData(Common),
    /// Train on the generated splits; writes checkpoints and a trace.
    Train(Common),
    /// Evaluate a classifier checkpoint on a CSV split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/classifier.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/test.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the loss x mu ablation matrix over the configured seeds.
    Ablate(Common),
    /// Export the predicted class over a 2-D grid.
    ExportBoundary {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/classifier.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok((cfg, out))
    }

    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn written(common: &Common, path: &Path) {
    common.progress(format!("wrote {}", path.display()));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let (cfg, out) = common.load()?;
            for path in commands::gen_data(&cfg, &out)? {
                written(&common, &path);
            }
        }
        Command::Train(common) => {
            let (cfg, out) = common.load()?;
            let art = commands::cmd_train(&cfg, &out)?;
            if let Some(last) = art.outcome.trace.last() {
                common.progress(format!(
                    "epoch {} loss {:.6} val mR@1 {:.4} pcm version {}",
                    last.epoch, last.loss, last.mean_recall_at_1, last.pcm_version
                ));
            }
            for path in [&art.classifier, &art.pcm, &art.trace] {
                written(&common, path);
            }
        }
        Command::Eval {
            common,
            checkpoint,
            data,
        } => {
            let (cfg, out) = common.load()?;
            let checkpoint = checkpoint.unwrap_or_else(|| out.join(commands::CLASSIFIER_JSON));
            let data = data.unwrap_or_else(|| out.join(commands::TEST_CSV));
            let art = commands::cmd_eval(&cfg, &checkpoint, &data, &out)?;
            for (k, mr) in &art.report.mean_recall_at_k {
                common.progress(format!("mR@{k} {mr:.4}"));
            }
            written(&common, &art.path);
            println!("{}", commands::norm_variance_line(art.weight_norm_variance));
        }
        Command::Ablate(common) => {
            let (cfg, out) = common.load()?;
            let pool = thread_pool()?;
            let (_, path) = pool.install(|| commands::cmd_ablate(&cfg, &out))?;
            if !common.quiet {
                let table =
                    std::fs::read_to_string(&path).map_err(|e| pclab::CliError::io(&path, e))?;
                print!("{table}");
            }
            written(&common, &path);
        }
        Command::ExportBoundary { common, checkpoint } => {
            let (cfg, out) = common.load()?;
            let checkpoint = checkpoint.unwrap_or_else(|| out.join(commands::CLASSIFIER_JSON));
            let path = commands::cmd_export_boundary(&cfg, &checkpoint, &out)?;
            written(&common, &path);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
