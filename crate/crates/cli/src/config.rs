//! Experiment configuration: one TOML file drives a whole run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cdf_core::cascade::{ModelConfigs, TrainConfig};
use cdf_core::dsp::FrameConfig;
use cdf_core::reconstruct::ReconConfig;
use cdf_core::seeds::derive_seed;
use cdf_core::synthdata::{corpus_frame_config, SynthSpec};

pub const VERSION: &str = concat!("cdf v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub enroll_seconds: f64,
    pub test_frames: Vec<usize>,
    pub max_trials_per_speaker: usize,
    /// Length-normalize the averaged d-vector before scoring.
    pub renormalize_dvectors: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            enroll_seconds: 30.0,
            test_frames: vec![20, 50, 100],
            max_trials_per_speaker: 1000,
            renormalize_dvectors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResynthConfig {
    pub griffin_lim_iterations: usize,
    /// Utterance to render; empty picks the first eval utterance.
    pub utterance: String,
}

impl Default for ResynthConfig {
    fn default() -> Self {
        ResynthConfig {
            griffin_lim_iterations: 32,
            utterance: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; every section seed is derived from it.
    pub seed: u64,
    pub workspace: PathBuf,
    pub frame: FrameConfig,
    pub synth: SynthSpec,
    pub models: ModelConfigs,
    pub phone: TrainConfig,
    pub speaker: TrainConfig,
    pub emotion: TrainConfig,
    pub recon: ReconConfig,
    pub protocol: ProtocolConfig,
    pub resynthesis: ResynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            workspace: PathBuf::from("workspace"),
            frame: FrameConfig::default(),
            synth: SynthSpec::default(),
            models: ModelConfigs::default(),
            phone: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
            speaker: TrainConfig {
                epochs: 12,
                ..TrainConfig::default()
            },
            emotion: TrainConfig {
                epochs: 8,
                ..TrainConfig::default()
            },
            recon: ReconConfig::default(),
            protocol: ProtocolConfig::default(),
            resynthesis: ResynthConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workspace: Option<PathBuf>,
    pub paper_scale: bool,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies overrides, derives section seeds and validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = &o.workspace {
            self.workspace = w.clone();
        }
        if o.paper_scale {
            self.models = self.models.paper_scale();
        }
        let seed = self.seed;
        self.synth.seed = derive_seed(seed, "synth");
        self.phone.seed = derive_seed(seed, "phone");
        self.speaker.seed = derive_seed(seed, "speaker");
        self.emotion.seed = derive_seed(seed, "emotion");
        self.recon.seed = derive_seed(seed, "recon");
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        self.synth.validate()?;
        for t in [&self.phone, &self.speaker, &self.emotion] {
            t.validate()?;
        }
        self.recon.validate()?;
        self.recon.check_frame(&self.frame)?;
        let timing = corpus_frame_config(&self.synth);
        if self.frame.sample_rate_hz != timing.sample_rate_hz
            || self.frame.frame_length_samples != timing.frame_length_samples
            || self.frame.frame_shift_samples != timing.frame_shift_samples
        {
            bail!(
                "frame timing must match the synthetic corpus labels ({} Hz, {} / {} samples)",
                timing.sample_rate_hz,
                timing.frame_length_samples,
                timing.frame_shift_samples
            );
        }
        let p = &self.protocol;
        if !(p.enroll_seconds > 0.0) || p.test_frames.is_empty() || p.max_trials_per_speaker == 0 {
            bail!("protocol needs positive enrollment, test lengths and trial cap");
        }
        if self.resynthesis.griffin_lim_iterations == 0 {
            bail!("griffin_lim_iterations must be positive");
        }
        Ok(())
    }

    /// The resolved configuration without its workspace location and with
    /// derived section seeds cleared (they follow from `seed`).
    pub fn canonical(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.workspace = PathBuf::new();
        c.synth.seed = 0;
        c.phone.seed = 0;
        c.speaker.seed = 0;
        c.emotion.seed = 0;
        c.recon.seed = 0;
        c
    }

    pub fn hash(&self) -> String {
        let text = toml::to_string(&self.canonical()).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn frames_per_second(&self) -> f64 {
        self.frame.sample_rate_hz as f64 / self.frame.frame_shift_samples as f64
    }
}
