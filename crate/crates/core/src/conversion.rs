//! Inference: stage-1 conversion `V1(x, y′) = dec(enc(x), y′)` and the patched
//! stage-2 conversion `V2 = V1 + gen(enc(x), y′)`, on spectrograms of any
//! length and end to end on waveforms.

use std::fmt;
use std::str::FromStr;

use crate::dsp::{griffin_lim, stft_logmag, AudioClip, DspConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::model::Networks;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConversionStage {
    V1,
    V2,
}

impl fmt::Display for ConversionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConversionStage::V1 => "v1",
            ConversionStage::V2 => "v2",
        })
    }
}

impl FromStr for ConversionStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(ConversionStage::V1),
            "v2" => Ok(ConversionStage::V2),
            other => Err(Error::invalid(format!("unknown conversion stage {other}"))),
        }
    }
}

/// Padded length: a multiple of the encoder's downsampling factor with a
/// latent sequence of at least two steps (instance norm needs two).
pub fn padded_length(frames: usize, factor: usize) -> usize {
    frames.div_ceil(factor).max(2) * factor
}

/// Stage-1 output and (for V2) the generator residual, both `[T, F]` in
/// feature scale and trimmed to the input length.
struct Outputs {
    v1: Vec<f64>,
    residual: Option<Vec<f64>>,
}

fn run(nets: &Networks, x: &Spectrogram, target: usize, with_residual: bool) -> Result<Outputs> {
    if x.n_bins() != nets.cfg.feat_bins {
        return Err(Error::ConfigMismatch(format!("spectrogram has {} bins, model {}", x.n_bins(), nets.cfg.feat_bins)));
    }
    if target >= nets.cfg.n_speakers {
        return Err(Error::invalid(format!("unknown target speaker {target}")));
    }
    let frames = x.n_frames();
    let padded = x.pad_to(padded_length(frames, nets.cfg.downsample_factor()));
    let z = nets.encode(&nets.input(&padded)?)?;
    let f = x.n_bins();
    let tp = padded.n_frames();
    let trim = |t: Tensor<f32>, map: &dyn Fn(usize, f32) -> f64| -> Vec<f64> {
        let full = t.data();
        let mut out = Vec::with_capacity(frames * f);
        for ti in 0..frames {
            for fi in 0..f {
                out.push(map(fi, full[fi * tp + ti]));
            }
        }
        out
    };
    let v1 = trim(nets.decode(&z, &[target])?, &|fi, v| nets.restore(fi, v));
    let residual = if with_residual {
        Some(trim(nets.residual(&z, &[target])?, &|fi, d| nets.restore_delta(fi, d)))
    } else {
        None
    };
    Ok(Outputs { v1, residual })
}

fn to_spec(data: Vec<f64>, like: &Spectrogram) -> Result<Spectrogram> {
    Spectrogram::new(data, like.n_frames(), like.n_bins(), like.config_fingerprint.clone())
}

/// `dec(enc(x), y′)`; the output has the input's length.
pub fn convert_v1(nets: &Networks, x: &Spectrogram, target: usize) -> Result<Spectrogram> {
    to_spec(run(nets, x, target, false)?.v1, x)
}

/// `V1 + gen(enc(x), y′)`, with the residual brought to feature scale and
/// added in double precision.
pub fn convert_v2(nets: &Networks, x: &Spectrogram, target: usize) -> Result<Spectrogram> {
    let out = run(nets, x, target, true)?;
    let res = out.residual.unwrap_or_default();
    to_spec(out.v1.iter().zip(&res).map(|(a, r)| a + r).collect(), x)
}

/// Generator residual alone, trimmed like the conversions.
pub fn generator_residual(nets: &Networks, x: &Spectrogram, target: usize) -> Result<Spectrogram> {
    let out = run(nets, x, target, true)?;
    to_spec(out.residual.unwrap_or_default(), x)
}

pub fn convert(nets: &Networks, x: &Spectrogram, target: usize, stage: ConversionStage) -> Result<Spectrogram> {
    match stage {
        ConversionStage::V1 => convert_v1(nets, x, target),
        ConversionStage::V2 => convert_v2(nets, x, target),
    }
}

#[derive(Clone, Debug)]
pub struct ConversionRequest {
    pub source: AudioClip,
    pub target_speaker: usize,
    pub stage: ConversionStage,
    pub dsp: DspConfig,
}

/// Analysis, conversion and Griffin-Lim synthesis.
pub fn convert_wav(req: &ConversionRequest, nets: &Networks) -> Result<AudioClip> {
    let spec = stft_logmag(&req.source, &req.dsp)?;
    let converted = convert(nets, &spec, req.target_speaker, req.stage)?;
    let mut clip = griffin_lim(&converted, &req.dsp)?;
    clip.speaker = Some(req.target_speaker);
    Ok(clip)
}
