//! Per-utterance features and labels for the whole corpus.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::dsp::{read_record, read_wav, write_record, FeatureExtractor, FrameConfig};
use crate::error::{Error, Result};
use crate::synthdata::{CorpusManifest, Split};

pub const FBANK_ARCHIVE: &str = "fbank.cdff";
pub const SPECTRUM_ARCHIVE: &str = "spectrum.cdff";

#[derive(Debug, Clone, PartialEq)]
pub struct UttFeatures {
    pub utt_id: String,
    pub speaker_id: String,
    pub emotion: usize,
    pub split: Split,
    pub phone_labels: Vec<usize>,
    pub fbank: Array2<f64>,
    pub spectrum: Array2<f64>,
}

impl UttFeatures {
    pub fn n_frames(&self) -> usize {
        self.fbank.nrows()
    }
}

/// Features of every manifest record, in manifest order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusFeatures {
    pub utterances: Vec<UttFeatures>,
}

impl CorpusFeatures {
    pub fn extract(manifest: &CorpusManifest, root: &Path, frame: &FrameConfig) -> Result<Self> {
        let extractor = FeatureExtractor::new(frame)?;
        let mut pairs = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let wav = read_wav(manifest.resolve(root, r))?;
            let (fb, spec) = extractor.analyze(&wav)?;
            pairs.push((fb.frames, spec.frames));
        }
        Self::assemble(manifest, pairs)
    }

    fn assemble(manifest: &CorpusManifest, pairs: Vec<(Array2<f64>, Array2<f64>)>) -> Result<Self> {
        if pairs.len() != manifest.records.len() {
            return Err(Error::Alignment(format!(
                "{} feature records for {} utterances",
                pairs.len(),
                manifest.records.len()
            )));
        }
        let utterances = manifest
            .records
            .iter()
            .zip(pairs)
            .map(|(r, (fbank, spectrum))| {
                let labels = r.frame_labels();
                if fbank.nrows() != labels.len() || spectrum.nrows() != labels.len() {
                    return Err(Error::Alignment(format!(
                        "{}: {} feature frames, {} labelled frames",
                        r.utt_id,
                        fbank.nrows(),
                        labels.len()
                    )));
                }
                Ok(UttFeatures {
                    utt_id: r.utt_id.clone(),
                    speaker_id: r.speaker_id.clone(),
                    emotion: r.emotion_id,
                    split: r.split,
                    phone_labels: labels,
                    fbank,
                    spectrum,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CorpusFeatures { utterances })
    }

    /// Writes the Fbank and log-power archives into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, pick) in [
            (FBANK_ARCHIVE, (|u: &UttFeatures| &u.fbank) as fn(&UttFeatures) -> &Array2<f64>),
            (SPECTRUM_ARCHIVE, |u: &UttFeatures| &u.spectrum),
        ] {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            for u in &self.utterances {
                write_record(&mut w, pick(u))?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(manifest: &CorpusManifest, dir: &Path) -> Result<Self> {
        let read_all = |name: &str| -> Result<Vec<Array2<f64>>> {
            let path = dir.join(name);
            let file = File::open(&path).map_err(|_| Error::MissingArtifact {
                path: path.clone(),
                reason: "feature archive not found; run extract-features".into(),
            })?;
            let mut r = BufReader::new(file);
            let mut out = Vec::new();
            while let Some(m) = read_record(&mut r)? {
                out.push(m);
            }
            Ok(out)
        };
        let fbank = read_all(FBANK_ARCHIVE)?;
        let spectrum = read_all(SPECTRUM_ARCHIVE)?;
        if fbank.len() != spectrum.len() {
            return Err(Error::Alignment("fbank and spectrum archives differ in length".into()));
        }
        Self::assemble(manifest, fbank.into_iter().zip(spectrum).collect())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UttFeatures> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn get(&self, utt_id: &str) -> Option<&UttFeatures> {
        self.utterances.iter().find(|u| u.utt_id == utt_id)
    }

    pub fn fbank_dim(&self) -> Result<usize> {
        self.utterances
            .first()
            .map(|u| u.fbank.ncols())
            .ok_or_else(|| Error::NoData("corpus has no utterances".into()))
    }

    pub fn n_phones(&self) -> usize {
        self.utterances
            .iter()
            .flat_map(|u| u.phone_labels.iter().copied())
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn n_emotions(&self) -> usize {
        self.utterances.iter().map(|u| u.emotion).max().map_or(0, |m| m + 1)
    }

    /// Sorted speaker ids of the training split: the speaker-net classes.
    pub fn train_speakers(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.split(Split::Train).map(|u| u.speaker_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}
