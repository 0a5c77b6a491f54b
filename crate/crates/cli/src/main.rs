use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use motionboost::ablation::{ablation_report, AblationOptions, Variant};
use motionboost::dataset::Corpus;
use motionboost::eval::evaluate;
use motionboost::nn::Mqpm;
use motionboost::pipeline::{self, RunLayout};
use motionboost::selection::{score_corpus, write_scores};
use motionboost::synth::{gen_synthetic_splits, SynthSpec};
use motionboost::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "motionboost",
    version,
    about = "Boost video saliency maps with motion-quality pseudo labels"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the keep-one-of-W window.
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with train and test splits.
    GenSynth(GenSynthArgs),
    /// Stage 1: label the training split and train the quality network.
    TrainMqpm,
    /// Run the quality network over the test split.
    Score {
        /// Quality network checkpoint (defaults to the run's stage-1 output).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stage 2: select frames and write the pseudo-GT manifest.
    BuildTrainset,
    /// Train the refinement network on the stage-2 manifest.
    TrainRefine,
    /// Write refined maps for a frame tree.
    Infer {
        /// Refinement checkpoint (defaults to the run's stage-3 output).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Frame tree (defaults to the configured test frames).
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Map output tree (defaults to the run's stage-3 maps).
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Score a map tree against a mask tree.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write per-frame metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build the comparison tables for a finished run.
    Ablation {
        /// Skip the window sweep.
        #[arg(long)]
        no_sweep: bool,
        /// Only these rows of the pseudo-GT source table.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
    },
    /// Run all three stages.
    RunAll,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 8)]
    videos: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    train_videos: usize,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "ms" | "baseline" => Ok(Variant::MsBaseline),
        "random" => Ok(Variant::MsMinusMqpm),
        "mqpm" => Ok(Variant::MsPlusMqpm),
        "full" => Ok(Variant::Full),
        _ => Err(format!("unknown variant `{s}` (ms, random, mqpm, full)")),
    }
}

impl Cli {
    fn config(&self) -> Result<PipelineConfig> {
        let Some(path) = &self.config else {
            bail!("this command needs --config");
        };
        let mut config =
            PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(w) = self.window {
            config.window = w;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen_synth(cli: &Cli, args: &GenSynthArgs) -> Result<()> {
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
    let spec = SynthSpec {
        videos: args.videos,
        frames_per_video: args.frames,
        height: args.size,
        width: args.size,
        seed: cli.seed.unwrap_or(SynthSpec::default().seed),
        ..SynthSpec::default()
    };
    let (train, test) = gen_synthetic_splits(&root, &spec, args.train_videos)?;
    let mut config = PipelineConfig::synthetic(Path::new("."), Path::new("run"));
    if let Some(w) = cli.window {
        config.window = w;
    }
    let config_path = root.join("pipeline.toml");
    std::fs::write(&config_path, config.to_toml()?)
        .with_context(|| format!("writing {}", config_path.display()))?;
    println!(
        "train: {} frames, {} flows; test: {} frames, {} flows; config {}",
        train.frame_count(),
        train.flow_count(),
        test.frame_count(),
        test.flow_count(),
        config_path.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(args) => gen_synth(cli, args),
        Command::TrainMqpm => print_json(&pipeline::run_stage1(&cli.config()?)?),
        Command::Score { checkpoint } => {
            let config = cli.config()?;
            let layout = RunLayout::new(&config.out);
            let ckpt = checkpoint
                .clone()
                .unwrap_or_else(|| layout.mqpm_checkpoint());
            let (model, _) = Mqpm::load(&ckpt)?;
            let corpus = Corpus::scan(&config.test.frames)?;
            let dir = layout.stage(2);
            let flows = config.test.flow_provider(&dir.join("flow_scratch"))?;
            let scored = score_corpus(&corpus, flows.as_ref(), &model, config.max_magnitude)?;
            write_scores(&scored, &dir)?;
            let accepted = scored.iter().filter(|s| s.decision).count();
            println!("{accepted} of {} frames judged high quality", scored.len());
            Ok(())
        }
        Command::BuildTrainset => print_json(&pipeline::run_stage2(&cli.config()?)?),
        Command::TrainRefine => {
            let (n, log) = pipeline::train_stage3(&cli.config()?)?;
            println!("trained on {n} frames over {} epochs", log.epochs.len());
            Ok(())
        }
        Command::Infer {
            checkpoint,
            frames,
            maps,
        } => {
            let config = cli.config().ok();
            let layout = config.as_ref().map(|c| RunLayout::new(&c.out));
            let pick = |given: &Option<PathBuf>, fallback: Option<PathBuf>, what: &str| {
                given
                    .clone()
                    .or(fallback)
                    .with_context(|| format!("pass --{what} or --config"))
            };
            let ckpt = pick(
                checkpoint,
                layout.as_ref().map(|l| l.refine_checkpoint()),
                "checkpoint",
            )?;
            let frames = pick(
                frames,
                config.as_ref().map(|c| c.test.frames.clone()),
                "frames",
            )?;
            let maps = pick(maps, layout.as_ref().map(|l| l.refined_maps()), "maps")?;
            let corpus = Corpus::scan(&frames)?;
            let n = pipeline::infer_refined_dir(&corpus, &ckpt, &maps)?;
            println!("wrote {n} maps to {}", maps.display());
            Ok(())
        }
        Command::Evaluate { pred, gt, csv } => {
            let report = evaluate(pred, gt)?;
            if let Some(path) = csv {
                std::fs::write(path, report.to_csv())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Ablation { no_sweep, variants } => {
            let config = cli.config()?;
            let mut options = AblationOptions::default();
            if *no_sweep {
                options.windows.clear();
            }
            if let Some(v) = variants {
                options.variants = v.clone();
            }
            let report = ablation_report(&config, &options)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::RunAll => {
            let report = pipeline::run_pipeline(&cli.config()?)?;
            print_json(&report)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
