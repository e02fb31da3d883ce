mod config;
mod pipeline;
mod report;
mod results;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use cdf_core::cascade::Conditioning;
use cdf_core::Error as CoreError;

use config::{ExperimentConfig, Overrides};
use pipeline::Run;

#[derive(Parser)]
#[command(name = "cdf", version = config::VERSION, about = "Cascaded deep factorization of speech")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the workspace directory.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Full-size network layers instead of the small-corpus defaults.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpeakerSystem {
    Idf,
    Cdf,
    Both,
}

/// `all`, or one of baseline, +ling, +spk, +ling&spk.
#[derive(Clone, Copy)]
struct EmotionSelection(Option<Conditioning>);

fn parse_conditioning(s: &str) -> Result<EmotionSelection, String> {
    match s {
        "all" => Ok(EmotionSelection(None)),
        other => other.parse().map(|c| EmotionSelection(Some(c))).map_err(|e: CoreError| e.to_string()),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus.
    SynthData,
    /// Compute Fbank features and log power spectra.
    ExtractFeatures,
    /// Train the phone classifier.
    TrainPhone,
    /// Train the IDF and/or CDF speaker networks.
    TrainSpeaker {
        #[arg(long, value_enum, default_value = "both")]
        system: SpeakerSystem,
    },
    /// Train emotion classifiers under the selected conditionings.
    TrainEmotion {
        #[arg(long, value_parser = parse_conditioning, default_value = "all")]
        conditioning: EmotionSelection,
    },
    /// Run the full cascade over every utterance and store q, s, e.
    Factorize,
    /// Train the additive spectrum reconstructor.
    TrainRecon,
    /// Speaker identification over the test-length conditions.
    EvalSre,
    /// Emotion ACC and MAP at frame and utterance level.
    EvalAer,
    /// Evaluate spectrum reconstruction and resynthesize one utterance.
    Reconstruct,
    /// Write report.txt from the result files.
    Report {
        /// Accept results produced under other configurations.
        #[arg(long)]
        force: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::ExtractFeatures => "extract-features",
            Command::TrainPhone => "train-phone",
            Command::TrainSpeaker { .. } => "train-speaker",
            Command::TrainEmotion { .. } => "train-emotion",
            Command::Factorize => "factorize",
            Command::TrainRecon => "train-recon",
            Command::EvalSre => "eval-sre",
            Command::EvalAer => "eval-aer",
            Command::Reconstruct => "reconstruct",
            Command::Report { .. } => "report",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| anyhow::anyhow!("--config <FILE> is required"))?;
    let cfg = ExperimentConfig::load(&path)?.resolve(&Overrides {
        seed: cli.seed,
        workspace: cli.workspace,
        paper_scale: cli.paper_scale,
    })?;
    log::info!("config {} ({})", cfg.hash(), config::VERSION);
    let mut r = Run::new(cfg);
    let name = cli.command.name();
    match cli.command {
        Command::SynthData => pipeline::synth_data(&mut r)?,
        Command::ExtractFeatures => pipeline::extract_features(&mut r)?,
        Command::TrainPhone => pipeline::train_phone(&mut r)?,
        Command::TrainSpeaker { system } => {
            let systems: &[&str] = match system {
                SpeakerSystem::Idf => &["idf"],
                SpeakerSystem::Cdf => &["cdf"],
                SpeakerSystem::Both => &["idf", "cdf"],
            };
            pipeline::train_speaker(&mut r, systems)?
        }
        Command::TrainEmotion { conditioning } => {
            let conds = conditioning.0.map_or(Conditioning::ALL.to_vec(), |c| vec![c]);
            pipeline::train_emotion(&mut r, &conds)?
        }
        Command::Factorize => pipeline::factorize_corpus(&mut r)?,
        Command::TrainRecon => pipeline::train_recon(&mut r)?,
        Command::EvalSre => pipeline::eval_sre(&mut r)?,
        Command::EvalAer => pipeline::eval_aer(&mut r)?,
        Command::Reconstruct => pipeline::reconstruct(&mut r)?,
        Command::Report { force } => print!("{}", pipeline::report(&mut r, force)?),
    }
    r.finish(name)
}

/// 2 for a broken cascade order or missing artifact, 3 for numeric
/// failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        match cause.downcast_ref::<CoreError>() {
            Some(CoreError::CascadeOrder(_) | CoreError::MissingArtifact { .. }) => return 2,
            Some(CoreError::Numeric(_)) => return 3,
            _ => {}
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
