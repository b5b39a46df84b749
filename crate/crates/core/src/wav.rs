//! Mono WAV input (16-bit PCM or 32-bit float) and 16-bit PCM output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!("{}: expected mono, found {} channels", path.display(), spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            reader.into_samples::<i16>().map(|s| s.map(|v| v as f32 / 32768.0)).collect::<Result<Vec<_>, _>>()?
        }
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<Vec<_>, _>>()?,
        (format, bits) => {
            return Err(Error::Format(format!("{}: unsupported sample type {format:?}/{bits}", path.display())))
        }
    };
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes 16-bit PCM; samples outside [−1, 1] are clipped.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let spec =
        WavSpec { channels: 1, sample_rate: clip.sample_rate_hz, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v)?;
    }
    w.finalize()?;
    Ok(())
}
