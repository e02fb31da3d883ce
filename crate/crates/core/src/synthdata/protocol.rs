//! Speaker-identification trial lists over speakers unseen in training.

use std::collections::{BTreeMap, BTreeSet};

use super::{CorpusManifest, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestSegment {
    pub utt_id: String,
    pub speaker_id: String,
    pub start_frame: usize,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SreCondition {
    /// e.g. `C(30-20f)`
    pub label: String,
    pub test_frames: usize,
    pub trials: Vec<TestSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SreProtocol {
    /// Whole utterances pooled per speaker for enrollment.
    pub enrollment: BTreeMap<String, Vec<String>>,
    pub conditions: Vec<SreCondition>,
}

/// Builds identification trials over the eval-split speakers that never occur
/// in training. Each speaker's utterances, in id order, fill the enrollment
/// pool until it holds `enroll_seconds` of audio; the rest are cut into
/// non-overlapping test segments of each requested length, at most
/// `max_trials_per_speaker` per condition.
pub fn make_sre_protocol(
    manifest: &CorpusManifest,
    enroll_seconds: f64,
    test_frames: &[usize],
    frames_per_second: f64,
    max_trials_per_speaker: usize,
) -> Result<SreProtocol> {
    if test_frames.is_empty() || test_frames.contains(&0) || max_trials_per_speaker == 0 {
        return Err(Error::Protocol("test lengths and trial counts must be positive".into()));
    }
    let train: BTreeSet<&str> = manifest.split(Split::Train).map(|r| r.speaker_id.as_str()).collect();
    let mut by_speaker: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for r in manifest.split(Split::Eval).filter(|r| !train.contains(r.speaker_id.as_str())) {
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    if by_speaker.len() < 2 {
        return Err(Error::ProtocolInfeasible(format!(
            "{} unseen eval speakers, need at least 2",
            by_speaker.len()
        )));
    }
    let enroll_frames = (enroll_seconds * frames_per_second).ceil() as usize;

    let mut enrollment = BTreeMap::new();
    let mut conditions: Vec<SreCondition> = test_frames
        .iter()
        .map(|&n| SreCondition {
            label: format!("C({}-{}f)", enroll_seconds.round() as i64, n),
            test_frames: n,
            trials: Vec::new(),
        })
        .collect();
    for (spk, mut utts) in by_speaker {
        utts.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        let mut pooled = 0;
        let mut split_at = utts.len();
        for (i, u) in utts.iter().enumerate() {
            if pooled >= enroll_frames {
                split_at = i;
                break;
            }
            pooled += u.n_frames();
        }
        if pooled < enroll_frames {
            return Err(Error::ProtocolInfeasible(format!(
                "{spk} has {pooled} frames, enrollment needs {enroll_frames}"
            )));
        }
        enrollment.insert(spk.to_string(), utts[..split_at].iter().map(|u| u.utt_id.clone()).collect());
        for cond in &mut conditions {
            let n = cond.test_frames;
            let segments: Vec<TestSegment> = utts[split_at..]
                .iter()
                .flat_map(|u| {
                    (0..u.n_frames() / n).map(move |k| TestSegment {
                        utt_id: u.utt_id.clone(),
                        speaker_id: spk.to_string(),
                        start_frame: k * n,
                        n_frames: n,
                    })
                })
                .take(max_trials_per_speaker)
                .collect();
            if segments.is_empty() {
                return Err(Error::ProtocolInfeasible(format!(
                    "{spk} has no audio left for {n}-frame tests"
                )));
            }
            cond.trials.extend(segments);
        }
    }
    Ok(SreProtocol {
        enrollment,
        conditions,
    })
}
