//! Deterministic synthetic speakers: harmonic tones whose fundamental and
//! three-peak spectral envelope identify the speaker, while syllable timing,
//! loudness and peak weighting play the role of linguistic content.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::wav::write_wav;

/// Envelope peak centers of the middle speaker, in Hz.
const BASE_FORMANTS: [f64; 3] = [500.0, 1050.0, 1500.0];
/// Relative peak weights of the syllable "vowels".
const VOWELS: [[f64; 3]; 5] = [[1.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.2, 0.3, 1.0], [1.0, 0.9, 0.1], [0.5, 0.15, 0.8]];
const FORMANT_BANDWIDTH_HZ: f64 = 110.0;
const NOISE_LEVEL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpeaker {
    pub name: String,
    pub f0_hz: f64,
    pub formants_hz: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl ToyCorpusConfig {
    pub fn new(n_speakers: usize, utterances_per_speaker: usize, seed: u64) -> Self {
        Self { n_speakers, utterances_per_speaker, seed, sample_rate_hz: 16_000, min_secs: 2.0, max_secs: 4.0 }
    }

    /// Four speakers with 40 utterances each at 4 kHz, the corpus the desk
    /// profile is tuned on.
    pub fn desk() -> Self {
        Self { sample_rate_hz: 4_000, ..Self::new(4, 40, 7) }
    }
}

/// Speaker `s` of `n`: `f0 = 110·4^{s/(n−1)}` Hz and envelope peaks scaled by
/// `0.8·1.5^{s/(n−1)}`, so low voices also have low resonances.
pub fn toy_speakers(n: usize) -> Vec<ToySpeaker> {
    (0..n)
        .map(|s| {
            let pos = if n > 1 { s as f64 / (n - 1) as f64 } else { 0.0 };
            let scale = 0.8 * 1.5f64.powf(pos);
            ToySpeaker {
                name: format!("spk{s:02}"),
                f0_hz: 110.0 * 4f64.powf(pos),
                formants_hz: BASE_FORMANTS.map(|f| f * scale),
            }
        })
        .collect()
}

/// One utterance of `speaker`: a sequence of syllables separated by short
/// pauses, each with its own vowel weighting and raised-cosine loudness
/// contour, over a faint noise floor.
pub fn synthesize_utterance(speaker: &ToySpeaker, rate: u32, secs: f64, rng: &mut ChaCha8Rng) -> AudioClip {
    let n = (secs * rate as f64).round() as usize;
    let nyquist = rate as f64 / 2.0;
    let n_harm = ((0.95 * nyquist) / speaker.f0_hz).floor().max(1.0) as usize;
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();

    // per-vowel harmonic amplitudes, normalized to unit sum
    let tables: Vec<Vec<f64>> = VOWELS
        .iter()
        .map(|w| {
            let amps: Vec<f64> = (1..=n_harm)
                .map(|k| {
                    let f = k as f64 * speaker.f0_hz;
                    0.02 + (0..3)
                        .map(|j| w[j] * (-0.5 * ((f - speaker.formants_hz[j]) / FORMANT_BANDWIDTH_HZ).powi(2)).exp())
                        .sum::<f64>()
                })
                .collect();
            let total: f64 = amps.iter().sum();
            amps.into_iter().map(|a| a / total).collect()
        })
        .collect();

    let mut samples = vec![0f64; n];
    let mut pos = (rng.gen_range(0.0..0.05) * rate as f64) as usize;
    while pos < n {
        let len = (rng.gen_range(0.15..0.4) * rate as f64) as usize;
        let gain = rng.gen_range(0.3..0.8);
        let vowel = &tables[rng.gen_range(0..VOWELS.len())];
        let end = (pos + len).min(n);
        for (i, s) in samples[pos..end].iter_mut().enumerate() {
            let env = 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos();
            let t = (pos + i) as f64 / rate as f64;
            let tone: f64 = vowel
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, ph))| a * (2.0 * PI * (k + 1) as f64 * speaker.f0_hz * t + ph).sin())
                .sum();
            *s += 0.8 * gain * env * tone;
        }
        pos = end + (rng.gen_range(0.01..0.05) * rate as f64) as usize;
    }
    for s in &mut samples {
        *s += NOISE_LEVEL * rng.gen_range(-1.0..1.0);
    }
    AudioClip::new(samples.into_iter().map(|v| v as f32).collect(), rate)
}

/// Writes `<out_dir>/<speaker>/uttNNN.wav` plus a `speakers.json` description.
/// Output bytes depend only on the configuration.
pub fn make_toy_corpus(cfg: &ToyCorpusConfig, out_dir: &Path) -> Result<Vec<ToySpeaker>> {
    if cfg.n_speakers < 2 {
        return Err(Error::invalid("toy corpus needs at least two speakers"));
    }
    if cfg.utterances_per_speaker == 0 || !(cfg.min_secs > 0.0 && cfg.min_secs <= cfg.max_secs) {
        return Err(Error::invalid("toy corpus needs utterances with a positive duration range"));
    }
    let speakers = toy_speakers(cfg.n_speakers);
    for (s, speaker) in speakers.iter().enumerate() {
        // one stream per speaker keeps speakers independent of each other's counts
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s as u64 + 1);
        for u in 0..cfg.utterances_per_speaker {
            let secs = if cfg.max_secs > cfg.min_secs { rng.gen_range(cfg.min_secs..cfg.max_secs) } else { cfg.min_secs };
            let clip = synthesize_utterance(speaker, cfg.sample_rate_hz, secs, &mut rng);
            write_wav(&out_dir.join(&speaker.name).join(format!("utt{u:03}.wav")), &clip)?;
        }
    }
    std::fs::write(out_dir.join("speakers.json"), serde_json::to_string_pretty(&speakers)?)?;
    Ok(speakers)
}
