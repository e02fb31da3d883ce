use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// Only 16-bit PCM mono at this rate is accepted.
const REQUIRED_RATE: u32 = 8000;

/// Reads a 16-bit little-endian PCM mono 8 kHz WAV file. Samples keep their
/// integer scale.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                reason: "wav file not found".into(),
            }
        }
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != SampleFormat::Int
        || spec.sample_rate != REQUIRED_RATE
    {
        return Err(Error::Format(format!(
            "{}: need 16-bit PCM mono at {REQUIRED_RATE} Hz, got {} channel(s), {} bits {:?} at {} Hz",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format,
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(f64::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[i16], sample_rate_hz: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}
