//! Deterministic synthetic emotional-speech corpus with known latent factors.
//!
//! Every utterance is a source-filter rendering of a phone sequence: the
//! speaker fixes the pitch range, glottal tilt, vocal-tract length and a
//! high resonance; each phone fixes two formants, voicing and loudness; the
//! emotion scales pitch and energy and adds a slow pitch wobble. Emotion is
//! the weakest of the three cues and is entangled with the other two.

mod manifest;
mod protocol;
mod voice;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use manifest::{CorpusManifest, PhoneSegment, Split, UttRecord};
pub use protocol::{make_sre_protocol, SreCondition, SreProtocol, TestSegment};
pub use voice::{synthesize_utterance, EmotionVoice, PhoneVoice, SpeakerVoice, Voices};

use crate::dsp::{write_wav, FrameConfig};
use crate::error::{Error, Result};
use crate::seeds::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_phones: usize,
    /// Speakers whose utterances are split across train/dev/eval.
    pub n_speakers: usize,
    /// Additional speakers used only for identification tests.
    pub n_sre_eval_speakers: usize,
    pub n_emotions: usize,
    pub utterances_per_speaker: usize,
    pub utterances_per_sre_speaker: usize,
    /// Inclusive range of non-silence phones per utterance.
    pub phones_per_utterance: [usize; 2],
    /// Inclusive range of frames per phone.
    pub phone_duration_frames: [usize; 2],
    pub dev_fraction: f64,
    pub eval_fraction: f64,
    pub sample_rate: u32,
    /// Standard deviation of the additive noise, in 16-bit sample units.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_phones: 20,
            n_speakers: 16,
            n_sre_eval_speakers: 16,
            n_emotions: 4,
            utterances_per_speaker: 20,
            utterances_per_sre_speaker: 40,
            phones_per_utterance: [8, 12],
            phone_duration_frames: [6, 14],
            dev_fraction: 0.15,
            eval_fraction: 0.15,
            sample_rate: 8000,
            noise_std: 20.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_phones < 2 || self.n_speakers < 2 || self.n_emotions < 2 {
            return Err(Error::config("phone, speaker and emotion counts must be at least 2"));
        }
        if self.utterances_per_speaker < 1 {
            return Err(Error::config("utterances_per_speaker must be at least 1"));
        }
        if self.n_sre_eval_speakers > 0 && self.utterances_per_sre_speaker < 1 {
            return Err(Error::config("utterances_per_sre_speaker must be at least 1"));
        }
        let [pmin, pmax] = self.phones_per_utterance;
        let [dmin, dmax] = self.phone_duration_frames;
        if pmin == 0 || pmin > pmax || dmin == 0 || dmin > dmax {
            return Err(Error::config("phone count and duration ranges must be non-empty"));
        }
        if !(0.0..1.0).contains(&(self.dev_fraction + self.eval_fraction))
            || self.dev_fraction < 0.0
            || self.eval_fraction < 0.0
        {
            return Err(Error::config("dev and eval fractions must be non-negative and sum below 1"));
        }
        if self.sample_rate != 8000 {
            return Err(Error::config("the corpus is rendered at 8000 Hz"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be non-negative"));
        }
        Ok(())
    }

    pub fn speaker_id(index: usize) -> String {
        format!("spk{index:03}")
    }

    pub fn utt_id(speaker: usize, index: usize) -> String {
        format!("spk{speaker:03}_{index:03}")
    }

    /// Split of utterance `i` of a main-pool speaker.
    pub fn split_of(&self, i: usize) -> Split {
        let u = self.utterances_per_speaker;
        let n_eval = (self.eval_fraction * u as f64).round() as usize;
        let n_dev = (self.dev_fraction * u as f64).round() as usize;
        let n_train = u.saturating_sub(n_eval + n_dev);
        if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Eval
        }
    }
}

/// Frame config the corpus is laid out against.
pub fn corpus_frame_config(spec: &SynthSpec) -> FrameConfig {
    FrameConfig {
        sample_rate_hz: spec.sample_rate,
        ..FrameConfig::default()
    }
}

/// Renders every utterance to `<out_dir>/wav/<utt_id>.wav` and writes
/// `<out_dir>/manifest.tsv`.
pub fn generate_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    let frame = corpus_frame_config(spec);
    let voices = Voices::draw(spec);
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::Write(format!("{}: {e}", wav_dir.display())))?;

    let mut records = Vec::new();
    let total_speakers = spec.n_speakers + spec.n_sre_eval_speakers;
    for s in 0..total_speakers {
        let main_pool = s < spec.n_speakers;
        let n_utts = if main_pool {
            spec.utterances_per_speaker
        } else {
            spec.utterances_per_sre_speaker
        };
        for i in 0..n_utts {
            let utt_id = SynthSpec::utt_id(s, i);
            let emotion = (i + s) % spec.n_emotions;
            let mut rng = rng_for(spec.seed, &utt_id);
            let segments = voice::draw_segments(spec, &mut rng);
            let samples = synthesize_utterance(&voices, s, emotion, &segments, &frame, spec.noise_std, &mut rng);
            let rel = format!("wav/{utt_id}.wav");
            write_wav(&out_dir.join(&rel), &samples, spec.sample_rate)
                .map_err(|e| Error::Write(format!("{rel}: {e}")))?;
            records.push(UttRecord {
                utt_id,
                wav_path: rel,
                speaker_id: SynthSpec::speaker_id(s),
                emotion_id: emotion,
                split: if main_pool { spec.split_of(i) } else { Split::Eval },
                segments,
            });
        }
    }
    let manifest = CorpusManifest { records };
    manifest
        .save(&out_dir.join("manifest.tsv"))
        .map_err(|e| Error::Write(format!("manifest: {e}")))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_proportions() {
        let spec = SynthSpec::default();
        let splits: Vec<Split> = (0..20).map(|i| spec.split_of(i)).collect();
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 14);
        assert_eq!(splits.iter().filter(|s| **s == Split::Dev).count(), 3);
        assert_eq!(splits.iter().filter(|s| **s == Split::Eval).count(), 3);
    }

    #[test]
    fn invalid_specs() {
        for bad in [
            SynthSpec { n_phones: 1, ..SynthSpec::default() },
            SynthSpec { utterances_per_speaker: 0, ..SynthSpec::default() },
            SynthSpec { phone_duration_frames: [5, 4], ..SynthSpec::default() },
            SynthSpec { dev_fraction: 0.6, eval_fraction: 0.5, ..SynthSpec::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
