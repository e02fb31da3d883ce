//! The cascade: phone net, then a speaker net conditioned on phone
//! posteriors, then an emotion net conditioned on either or both factors.
//! The unconditioned (individual) variants train through the same code.

mod data;
mod log;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use data::{CorpusFeatures, UttFeatures, FBANK_ARCHIVE, SPECTRUM_ARCHIVE};
pub use log::{LogEntry, TrainingLog};
pub use train::{train_stage, TrainedStage};

use crate::dsp::length_normalize;
use crate::error::{Error, Result};
use crate::models::{
    emotion_outputs, phone_posteriors, speaker_features, AerNetConfig, CtdnnConfig, CtdnnGeometry, PhoneNetConfig,
    KEY_OUTPUT_DIM, KIND_AER, KIND_CTDNN, KIND_PHONE,
};
use crate::nncore::NetworkCheckpoint;

/// Metadata key holding the frame context the emotion net is aligned to.
pub const KEY_ALIGN_CONTEXT: &str = "align_context";
pub const KEY_CONDITIONING: &str = "conditioning";
/// Comma-separated class names, for networks whose labels are names.
pub const KEY_CLASSES: &str = "classes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Phone,
    Speaker,
    Emotion,
}

/// Which upstream factors are concatenated to the Fbank input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Conditioning {
    pub ling: bool,
    pub spk: bool,
}

impl Conditioning {
    pub const NONE: Conditioning = Conditioning { ling: false, spk: false };
    pub const LING: Conditioning = Conditioning { ling: true, spk: false };
    pub const SPK: Conditioning = Conditioning { ling: false, spk: true };
    pub const BOTH: Conditioning = Conditioning { ling: true, spk: true };
    pub const ALL: [Conditioning; 4] = [Self::NONE, Self::LING, Self::SPK, Self::BOTH];

    /// File-name friendly tag.
    pub fn slug(self) -> &'static str {
        match (self.ling, self.spk) {
            (false, false) => "baseline",
            (true, false) => "ling",
            (false, true) => "spk",
            (true, true) => "ling_spk",
        }
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match (self.ling, self.spk) {
            (false, false) => "baseline",
            (true, false) => "+ling",
            (false, true) => "+spk",
            (true, true) => "+ling&spk",
        })
    }
}

impl FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "none" | "" => Ok(Self::NONE),
            "+ling" | "ling" => Ok(Self::LING),
            "+spk" | "spk" => Ok(Self::SPK),
            "+ling&spk" | "ling&spk" | "ling_spk" => Ok(Self::BOTH),
            other => Err(Error::config(format!("unknown conditioning {other:?}"))),
        }
    }
}

impl TryFrom<String> for Conditioning {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Conditioning> for String {
    fn from(c: Conditioning) -> String {
        c.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Frames per minibatch.
    pub batch_frames: usize,
    pub learning_rate: f64,
    /// Learning rate of epoch `n` is `learning_rate * lr_decay^(n-1)`.
    pub lr_decay: f64,
    /// Output frames per training chunk of the speaker net.
    pub chunk_frames: usize,
    /// Cap on frames visited per epoch (0 visits everything).
    pub max_frames_per_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 6,
            batch_frames: 256,
            learning_rate: 1e-3,
            lr_decay: 0.8,
            chunk_frames: 40,
            max_frames_per_epoch: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_frames == 0 || self.chunk_frames == 0 {
            return Err(Error::config("epochs, batch_frames and chunk_frames must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.lr_decay > 0.0) {
            return Err(Error::config("learning rate and decay must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch.saturating_sub(1) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub conditioning: Conditioning,
    pub train: TrainConfig,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match self.stage {
            Stage::Phone if self.conditioning != Conditioning::NONE => {
                Err(Error::config("the phone stage takes no conditional input"))
            }
            Stage::Speaker if self.conditioning.spk => {
                Err(Error::config("the speaker stage cannot be conditioned on itself"))
            }
            _ => Ok(()),
        }
    }
}

/// Architecture templates; corpus-dependent widths are filled in at training time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfigs {
    pub phone: PhoneNetConfig,
    pub ctdnn: CtdnnConfig,
    pub aer: AerNetConfig,
}

impl ModelConfigs {
    pub fn paper_scale(self) -> Self {
        ModelConfigs {
            phone: self.phone.paper_scale(),
            ctdnn: self.ctdnn.paper_scale(),
            aer: self.aer,
        }
    }
}

/// Trained networks available to a downstream stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upstream<'a> {
    pub phone: Option<&'a NetworkCheckpoint>,
    pub speaker: Option<&'a NetworkCheckpoint>,
}

impl<'a> Upstream<'a> {
    fn phone_for(&self, cond: Conditioning) -> Result<Option<&'a NetworkCheckpoint>> {
        if !cond.ling {
            return Ok(None);
        }
        let ck = self
            .phone
            .ok_or_else(|| Error::CascadeOrder("linguistic conditioning needs a trained phone network".into()))?;
        ck.expect_kind(KIND_PHONE)?;
        Ok(Some(ck))
    }

    fn speaker_for(&self, cond: Conditioning) -> Result<Option<&'a NetworkCheckpoint>> {
        if !cond.spk {
            return Ok(None);
        }
        let ck = self
            .speaker
            .ok_or_else(|| Error::CascadeOrder("speaker conditioning needs a trained speaker network".into()))?;
        ck.expect_kind(KIND_CTDNN)?;
        Ok(Some(ck))
    }
}

fn hstack(parts: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| Error::dim(format!("cannot concatenate factors: {e}")))
}

/// Speaker-net input `[fbank; q]` (or the bare Fbank when `phone` is absent).
pub fn speaker_input(fbank: &Array2<f64>, phone: Option<&NetworkCheckpoint>) -> Result<Array2<f64>> {
    match phone {
        Some(ck) => hstack(&[fbank, &phone_posteriors(ck, fbank)?]),
        None => Ok(fbank.clone()),
    }
}

/// Centre offset of the frame a `context`-frame speaker window is aligned to.
pub fn align_offset(context: usize) -> usize {
    context / 2
}

/// Emotion-net input over the frames that carry a speaker feature:
/// row `j` is `[fbank; q]` at frame `j + context/2` followed by `s_j`.
pub fn emotion_input(
    fbank: &Array2<f64>,
    cond: Conditioning,
    upstream: &Upstream,
    context: usize,
) -> Result<Array2<f64>> {
    let t = fbank.nrows();
    if t < context {
        return Err(Error::UtteranceTooShort { frames: t, needed: context });
    }
    let n = t + 1 - context;
    let off = align_offset(context);
    let fb = fbank.slice(s![off..off + n, ..]).to_owned();
    let mut parts = vec![fb];
    if let Some(ck) = upstream.phone_for(cond)? {
        let q = phone_posteriors(ck, fbank)?;
        parts.push(q.slice(s![off..off + n, ..]).to_owned());
    }
    if let Some(ck) = upstream.speaker_for(cond)? {
        let sctx = CtdnnGeometry::from_checkpoint(ck)?.context_frames();
        if sctx != context {
            return Err(Error::CascadeMismatch(format!(
                "speaker net sees {sctx} frames, emotion net is aligned to {context}"
            )));
        }
        let phone = speaker_phone(ck, upstream)?;
        parts.push(speaker_features(ck, &speaker_input(fbank, phone)?)?);
    }
    let refs: Vec<&Array2<f64>> = parts.iter().collect();
    hstack(&refs)
}

/// The phone net a speaker net was conditioned on, if any.
fn speaker_phone<'a>(spk: &NetworkCheckpoint, upstream: &Upstream<'a>) -> Result<Option<&'a NetworkCheckpoint>> {
    let cond_dim: usize = spk.meta_parse("cond_dim")?;
    if cond_dim == 0 {
        return Ok(None);
    }
    let phone = upstream
        .phone
        .ok_or_else(|| Error::CascadeOrder("speaker net is conditioned on phones; phone network missing".into()))?;
    let p: usize = phone.meta_parse(KEY_OUTPUT_DIM)?;
    if p != cond_dim {
        return Err(Error::CascadeMismatch(format!(
            "speaker net expects {cond_dim} phone posteriors, phone net emits {p}"
        )));
    }
    Ok(Some(phone))
}

/// One aligned frame of the three factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFrame {
    pub q: Vec<f64>,
    pub s: Vec<f64>,
    pub e: Vec<f64>,
}

/// Factor sequences sharing `T'' = T - context + 1` frames; row `j`
/// describes input frame `j + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub q: Array2<f64>,
    pub s: Array2<f64>,
    pub e: Array2<f64>,
    pub offset: usize,
}

impl Factors {
    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.nrows() == 0
    }

    pub fn frame(&self, j: usize) -> FactorFrame {
        FactorFrame {
            q: self.q.row(j).to_vec(),
            s: self.s.row(j).to_vec(),
            e: self.e.row(j).to_vec(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = FactorFrame> + '_ {
        (0..self.len()).map(|j| self.frame(j))
    }

    /// `[q; s; e]` per frame.
    pub fn stacked(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.q.view(), self.s.view(), self.e.view()]).expect("equal row counts")
    }
}

/// Runs the full cascade over one utterance's Fbank frames.
pub fn factorize(
    fbank: &Array2<f64>,
    phone: &NetworkCheckpoint,
    speaker: &NetworkCheckpoint,
    aer: &NetworkCheckpoint,
) -> Result<Factors> {
    phone.expect_kind(KIND_PHONE)?;
    speaker.expect_kind(KIND_CTDNN)?;
    aer.expect_kind(KIND_AER)?;
    let n_phones: usize = phone.meta_parse(KEY_OUTPUT_DIM)?;
    let feature_dim: usize = speaker.meta_parse("feature_dim")?;
    let ling_dim: usize = aer.meta_parse("ling_dim")?;
    let spk_dim: usize = aer.meta_parse("spk_dim")?;
    if ling_dim != 0 && ling_dim != n_phones || spk_dim != 0 && spk_dim != feature_dim {
        return Err(Error::CascadeMismatch(format!(
            "emotion net expects q:{ling_dim} s:{spk_dim}, cascade provides q:{n_phones} s:{feature_dim}"
        )));
    }
    let context = CtdnnGeometry::from_checkpoint(speaker)?.context_frames();
    let aligned: usize = aer.meta_parse(KEY_ALIGN_CONTEXT)?;
    if aligned != context {
        return Err(Error::CascadeMismatch(format!(
            "emotion net aligned to {aligned} frames, speaker net sees {context}"
        )));
    }
    let upstream = Upstream {
        phone: Some(phone),
        speaker: Some(speaker),
    };
    let t = fbank.nrows();
    if t < context {
        return Err(Error::UtteranceTooShort { frames: t, needed: context });
    }
    let off = align_offset(context);
    let n = t + 1 - context;
    let q_full = phone_posteriors(phone, fbank)?;
    let s = speaker_features(speaker, &speaker_input(fbank, speaker_phone(speaker, &upstream)?)?)?;
    let cond = Conditioning {
        ling: ling_dim > 0,
        spk: spk_dim > 0,
    };
    let (_, e) = emotion_outputs(aer, &emotion_input(fbank, cond, &upstream, context)?)?;
    Ok(Factors {
        q: q_full.slice(s![off..off + n, ..]).to_owned(),
        s,
        e,
        offset: off,
    })
}

/// Mean of frame-level speaker features, then length-normalized.
pub fn utterance_dvector(frames: &Array2<f64>) -> Result<Vec<f64>> {
    utterance_dvector_with(frames, true)
}

pub fn utterance_dvector_with(frames: &Array2<f64>, renormalize: bool) -> Result<Vec<f64>> {
    let mean = frames.mean_axis(Axis(0)).ok_or(Error::NoFrames)?;
    if renormalize {
        length_normalize(mean.as_slice().expect("contiguous"))
    } else {
        Ok(mean.to_vec())
    }
}
