//! Scoring and metrics: cosine scoring, Top-1 identification over the
//! short-segment protocol, and frame/utterance emotion ACC and MAP.

mod tables;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{s, Array1, Array2, Axis};

pub use tables::{format_aer_table, format_sre_table, AerRow};

use crate::cascade::{
    emotion_input, speaker_input, utterance_dvector_with, Conditioning, CorpusFeatures, Upstream, KEY_ALIGN_CONTEXT,
    KEY_CONDITIONING,
};
use crate::error::{Error, Result};
use crate::models::{emotion_outputs, speaker_features, KIND_AER, KIND_CTDNN, KIND_PHONE};
use crate::nncore::NetworkCheckpoint;
use crate::synthdata::{Split, SreProtocol};

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("cosine of {} vs {} dims", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroScoreVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub condition: String,
    pub n_trials: usize,
    pub n_correct: usize,
    pub idr_percent: f64,
}

impl TrialResult {
    pub fn new(condition: &str, n_trials: usize, n_correct: usize) -> Self {
        TrialResult {
            condition: condition.to_string(),
            n_trials,
            n_correct,
            idr_percent: if n_trials == 0 {
                0.0
            } else {
                100.0 * n_correct as f64 / n_trials as f64
            },
        }
    }
}

/// Nearest enrolled speaker by cosine score; ties go to the smallest id.
pub fn identify<'a>(enrolled: &'a BTreeMap<String, Vec<f64>>, test: &[f64]) -> Result<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for (id, v) in enrolled {
        let score = cosine_score(v, test)?;
        if best.map_or(true, |(_, b)| score > b) {
            best = Some((id, score));
        }
    }
    best.map(|b| b.0).ok_or_else(|| Error::Protocol("no enrolled speakers".into()))
}

pub fn top1_identification(
    enrolled: &BTreeMap<String, Vec<f64>>,
    trials: &[(Vec<f64>, String)],
    condition: &str,
) -> Result<TrialResult> {
    if enrolled.len() < 2 {
        return Err(Error::Protocol(format!(
            "identification needs at least 2 enrolled speakers, got {}",
            enrolled.len()
        )));
    }
    let mut correct = 0;
    for (vector, truth) in trials {
        if !enrolled.contains_key(truth) {
            return Err(Error::Protocol(format!("trial speaker {truth} is not enrolled")));
        }
        if identify(enrolled, vector)? == truth {
            correct += 1;
        }
    }
    Ok(TrialResult::new(condition, trials.len(), correct))
}

/// Runs every protocol condition with one speaker network. Conditioned
/// networks need the phone network they were trained with; posteriors are
/// computed on each test segment alone.
pub fn run_sre_experiment(
    protocol: &SreProtocol,
    corpus: &CorpusFeatures,
    speaker: &NetworkCheckpoint,
    phone: Option<&NetworkCheckpoint>,
    renormalize: bool,
) -> Result<Vec<TrialResult>> {
    speaker.expect_kind(KIND_CTDNN)?;
    let cond_dim: usize = speaker.meta_parse("cond_dim")?;
    let phone = match (cond_dim, phone) {
        (0, _) => None,
        (_, Some(p)) => {
            p.expect_kind(KIND_PHONE)?;
            Some(p)
        }
        (_, None) => {
            return Err(Error::CascadeOrder(
                "conditioned speaker network needs its phone network".into(),
            ))
        }
    };
    let utt = |id: &str| {
        corpus
            .get(id)
            .ok_or_else(|| Error::Protocol(format!("utterance {id} has no features")))
    };

    let mut enrolled = BTreeMap::new();
    for (spk, utts) in &protocol.enrollment {
        let mut frames = Vec::new();
        for id in utts {
            let u = utt(id)?;
            frames.push(speaker_features(speaker, &speaker_input(&u.fbank, phone)?)?);
        }
        let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
        let pooled = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::dim(e.to_string()))?;
        enrolled.insert(spk.clone(), utterance_dvector_with(&pooled, renormalize)?);
    }

    protocol
        .conditions
        .iter()
        .map(|cond| {
            let trials = cond
                .trials
                .iter()
                .map(|t| {
                    let u = utt(&t.utt_id)?;
                    if t.start_frame + t.n_frames > u.n_frames() {
                        return Err(Error::Protocol(format!("segment beyond the end of {}", t.utt_id)));
                    }
                    let seg = u.fbank.slice(s![t.start_frame..t.start_frame + t.n_frames, ..]).to_owned();
                    let feats = speaker_features(speaker, &speaker_input(&seg, phone)?)?;
                    Ok((utterance_dvector_with(&feats, renormalize)?, t.speaker_id.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            top1_identification(&enrolled, &trials, &cond.label)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Frame,
    Utterance,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Frame => "frame",
            Level::Utterance => "utterance",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionReport {
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub acc_percent: f64,
    /// Mean per-class recall over classes that occur.
    pub map_percent: f64,
    pub level: Level,
}

impl EmotionReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>, level: Level) -> Result<Self> {
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::NoData("empty confusion matrix".into()));
        }
        let trace: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let recalls: Vec<f64> = confusion
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        if recalls.len() < confusion.len() {
            log::warn!(
                "{} emotion classes have no samples and are left out of MAP",
                confusion.len() - recalls.len()
            );
        }
        Ok(EmotionReport {
            acc_percent: 100.0 * trace as f64 / total as f64,
            map_percent: 100.0 * recalls.iter().sum::<f64>() / recalls.len() as f64,
            confusion,
            level,
        })
    }
}

fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// ACC/MAP from per-utterance frame posteriors and utterance labels. At
/// utterance level the frame posteriors are averaged before the decision.
pub fn emotion_metrics(utterances: &[(Array2<f64>, usize)], level: Level) -> Result<EmotionReport> {
    let k = utterances
        .first()
        .map(|(p, _)| p.ncols())
        .ok_or_else(|| Error::NoData("no utterances".into()))?;
    let mut confusion = vec![vec![0usize; k]; k];
    for (post, label) in utterances {
        if *label >= k || post.ncols() != k {
            return Err(Error::Label(format!("label {label} outside {k} emotion classes")));
        }
        match level {
            Level::Frame => {
                for row in post.rows() {
                    confusion[*label][argmax(row.iter().copied())] += 1;
                }
            }
            Level::Utterance => {
                let mean: Array1<f64> = post.mean_axis(Axis(0)).ok_or(Error::NoFrames)?;
                confusion[*label][argmax(mean.iter().copied())] += 1;
            }
        }
    }
    EmotionReport::from_confusion(confusion, level)
}

/// Frame- and utterance-level reports of an emotion network on one split.
/// Only speakers seen in training are scored; utterances shorter than the
/// alignment context are skipped.
pub fn aer_reports(
    corpus: &CorpusFeatures,
    split: Split,
    aer: &NetworkCheckpoint,
    upstream: &Upstream,
) -> Result<(EmotionReport, EmotionReport)> {
    aer.expect_kind(KIND_AER)?;
    let cond: Conditioning = aer
        .meta(KEY_CONDITIONING)
        .ok_or_else(|| Error::config("emotion checkpoint lacks its conditioning"))?
        .parse()?;
    let context: usize = aer.meta_parse(KEY_ALIGN_CONTEXT)?;
    let known = corpus.train_speakers();
    let utts = corpus
        .split(split)
        .filter(|u| known.binary_search(&u.speaker_id).is_ok() && u.n_frames() >= context)
        .map(|u| {
            let (post, _) = emotion_outputs(aer, &emotion_input(&u.fbank, cond, upstream, context)?)?;
            Ok((post, u.emotion))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        emotion_metrics(&utts, Level::Frame)?,
        emotion_metrics(&utts, Level::Utterance)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_examples() {
        assert!((cosine_score(&[2.0, 0.0], &[5.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine_score(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroScoreVector)));
    }

    #[test]
    fn ties_go_to_the_smallest_id() {
        let enrolled: BTreeMap<String, Vec<f64>> = [("b", vec![1.0, 0.0]), ("a", vec![2.0, 0.0])]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert_eq!(identify(&enrolled, &[1.0, 1.0]).unwrap(), "a");
    }

    #[test]
    fn idr_arithmetic_and_errors() {
        assert_eq!(TrialResult::new("c", 1000, 550).idr_percent, 55.0);
        let enrolled: BTreeMap<String, Vec<f64>> = [("x", vec![1.0, 0.0]), ("y", vec![0.0, 1.0])]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let r = top1_identification(&enrolled, &[(vec![0.0, 1.0], "y".into())], "c").unwrap();
        assert_eq!(r.idr_percent, 100.0);
        assert!(matches!(
            top1_identification(&enrolled, &[(vec![0.0, 1.0], "z".into())], "c"),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn confusion_examples() {
        let r = EmotionReport::from_confusion(vec![vec![2, 0], vec![1, 1]], Level::Frame).unwrap();
        assert_eq!(r.acc_percent, 75.0);
        assert_eq!(r.map_percent, 75.0);
        let r = EmotionReport::from_confusion(vec![vec![10, 0], vec![1, 1]], Level::Frame).unwrap();
        assert!((r.acc_percent - 100.0 * 11.0 / 12.0).abs() < 1e-12);
        assert_eq!(r.map_percent, 75.0);
        let r = EmotionReport::from_confusion(vec![vec![3, 1, 0], vec![0, 0, 0], vec![0, 0, 2]], Level::Frame).unwrap();
        assert_eq!(r.map_percent, 100.0 * (0.75 + 1.0) / 2.0);
    }

    #[test]
    fn utterance_level_averages_posteriors() {
        let post = array![[0.6, 0.4], [0.2, 0.8]];
        let r = emotion_metrics(&[(post.clone(), 1)], Level::Utterance).unwrap();
        assert_eq!(r.confusion, vec![vec![0, 0], vec![0, 1]]);
        let f = emotion_metrics(&[(post, 1)], Level::Frame).unwrap();
        assert_eq!(f.confusion, vec![vec![0, 0], vec![1, 1]]);
        assert!(matches!(
            emotion_metrics(&[(array![[0.5, 0.5]], 2)], Level::Frame),
            Err(Error::Label(_))
        ));
    }
}
