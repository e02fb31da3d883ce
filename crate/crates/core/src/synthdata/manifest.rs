//! Corpus manifest: one tab-separated record per line.
//!
//! ```text
//! # utt_id  wav_path  speaker_id  emotion_id  split  segments
//! spk003_017  wav/spk003_017.wav  spk003  2  train  0:0-9,7:9-17,...
//! ```
//! Segments are `phone:start-end` with half-open frame ranges.

use std::fmt;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

const HEADER: &str = "# utt_id\twav_path\tspeaker_id\temotion_id\tsplit\tsegments";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhoneSegment {
    pub phone: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UttRecord {
    pub utt_id: String,
    /// Relative to the manifest's directory.
    pub wav_path: String,
    pub speaker_id: String,
    pub emotion_id: usize,
    pub split: Split,
    pub segments: Vec<PhoneSegment>,
}

impl UttRecord {
    pub fn n_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end_frame)
    }

    /// Phone label of every frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat(s.phone).take(s.end_frame - s.start_frame))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let mut at = 0;
        for s in &self.segments {
            if s.start_frame != at || s.end_frame <= s.start_frame {
                return Err(Error::Format(format!(
                    "{}: segments must tile the utterance without gaps",
                    self.utt_id
                )));
            }
            at = s.end_frame;
        }
        if self.segments.is_empty() {
            return Err(Error::Format(format!("{}: no segments", self.utt_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub records: Vec<UttRecord>,
}

impl CorpusManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.records {
            let segs: Vec<String> = r
                .segments
                .iter()
                .map(|s| format!("{}:{}-{}", s.phone, s.start_frame, s.end_frame))
                .collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.utt_id,
                r.wav_path,
                r.speaker_id,
                r.emotion_id,
                r.split,
                segs.join(",")
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("manifest line {}: {what}", n + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(bad("expected 6 tab-separated fields"));
            }
            let segments = fields[5]
                .split(',')
                .map(|seg| {
                    let (phone, range) = seg.split_once(':').ok_or_else(|| bad("segment"))?;
                    let (start, end) = range.split_once('-').ok_or_else(|| bad("segment range"))?;
                    Ok(PhoneSegment {
                        phone: phone.parse().map_err(|_| bad("phone id"))?,
                        start_frame: start.parse().map_err(|_| bad("start frame"))?,
                        end_frame: end.parse().map_err(|_| bad("end frame"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let record = UttRecord {
                utt_id: fields[0].to_string(),
                wav_path: fields[1].to_string(),
                speaker_id: fields[2].to_string(),
                emotion_id: fields[3].parse().map_err(|_| bad("emotion id"))?,
                split: fields[4].parse()?,
                segments,
            };
            record.validate()?;
            records.push(record);
        }
        Ok(CorpusManifest { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                reason: "corpus manifest not found".into(),
            },
            _ => e.into(),
        })?;
        Self::parse(&text)
    }

    pub fn resolve(&self, root: &Path, record: &UttRecord) -> PathBuf {
        root.join(&record.wav_path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UttRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Sorted, de-duplicated speaker ids of a split.
    pub fn speakers(&self, split: Split) -> Vec<String> {
        let mut ids: Vec<String> = self.split(split).map(|r| r.speaker_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn max_phone(&self) -> Option<usize> {
        self.records.iter().flat_map(|r| r.segments.iter().map(|s| s.phone)).max()
    }

    pub fn max_emotion(&self) -> Option<usize> {
        self.records.iter().map(|r| r.emotion_id).max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record_strategy() -> impl Strategy<Value = UttRecord> {
        (
            "[a-z0-9_]{1,12}",
            0usize..8,
            0usize..3,
            prop::collection::vec((0usize..30, 1usize..20), 1..10),
        )
            .prop_map(|(id, emotion, split, segs)| {
                let mut at = 0;
                let segments = segs
                    .into_iter()
                    .map(|(phone, len)| {
                        let s = PhoneSegment {
                            phone,
                            start_frame: at,
                            end_frame: at + len,
                        };
                        at += len;
                        s
                    })
                    .collect();
                UttRecord {
                    wav_path: format!("wav/{id}.wav"),
                    speaker_id: format!("spk_{}", &id[..1]),
                    utt_id: id,
                    emotion_id: emotion,
                    split: [Split::Train, Split::Dev, Split::Eval][split],
                    segments,
                }
            })
    }

    proptest! {
        #[test]
        fn text_round_trip(records in prop::collection::vec(record_strategy(), 0..6)) {
            let m = CorpusManifest { records };
            let back = CorpusManifest::parse(&m.to_text()).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_text(), m.to_text());
        }
    }

    #[test]
    fn gaps_are_rejected() {
        let text = "u1\twav/u1.wav\tspk0\t0\ttrain\t0:0-5,1:6-9\n";
        assert!(matches!(CorpusManifest::parse(text), Err(Error::Format(_))));
    }

    #[test]
    fn frame_labels_follow_segments() {
        let m = CorpusManifest::parse("u\tw\ts\t1\tdev\t0:0-2,3:2-5\n").unwrap();
        assert_eq!(m.records[0].frame_labels(), vec![0, 0, 3, 3, 3]);
        assert_eq!(m.records[0].n_frames(), 5);
    }
}
