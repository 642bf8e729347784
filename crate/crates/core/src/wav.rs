//! Mono 16-bit PCM WAV reading and writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::AudioSignal;

const PCM_SCALE: f64 = 32768.0;

fn wav_err(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            message: format!("expected mono audio, found {} channels", spec.channels),
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            message: format!(
                "expected 16-bit integer PCM, found {} bits {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    AudioSignal::new(samples, spec.sample_rate)
}

/// Quantizes to 16-bit PCM; samples outside [-1, 1) are clipped.
pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &signal.samples {
        let q = (s * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
