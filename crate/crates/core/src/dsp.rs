//! Spectral front end: pre-emphasis, Hann-windowed log-magnitude STFT and
//! Griffin-Lim phase reconstruction back to a waveform.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
}

/// Analysis/synthesis settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub preemphasis_coeff: f64,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub window: Window,
    pub sample_rate_hz: u32,
    pub fft_size: usize,
    pub griffinlim_iters: usize,
    /// Amplitudes are clamped to this value before taking the log.
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// The subset of [`DspConfig`] that determines feature values.
#[derive(Serialize)]
struct AnalysisKey<'a> {
    preemphasis_coeff: f64,
    frame_length_ms: f64,
    frame_shift_ms: f64,
    window: &'a Window,
    sample_rate_hz: u32,
    fft_size: usize,
    log_floor: f64,
}

impl DspConfig {
    /// 16 kHz, 50 ms Hann frames every 12.5 ms, 2048-point FFT.
    pub fn paper() -> Self {
        Self {
            preemphasis_coeff: 0.97,
            frame_length_ms: 50.0,
            frame_shift_ms: 12.5,
            window: Window::Hann,
            sample_rate_hz: 16_000,
            fft_size: 2048,
            griffinlim_iters: 60,
            log_floor: 1e-5,
        }
    }

    /// Same framing in milliseconds at 4 kHz with a 256-point FFT (129 bins).
    pub fn desk() -> Self {
        Self { sample_rate_hz: 4_000, fft_size: 256, ..Self::paper() }
    }

    /// Window length in samples.
    pub fn frame_length(&self) -> usize {
        (self.frame_length_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// Hop in samples.
    pub fn hop(&self) -> usize {
        (self.frame_shift_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_shift_ms > 0.0 && self.frame_shift_ms < self.frame_length_ms) {
            return Err(Error::invalid("frame shift must be positive and shorter than the frame"));
        }
        if self.hop() == 0 || self.frame_length() < 2 {
            return Err(Error::invalid("frame or hop rounds to zero samples"));
        }
        if self.fft_size < self.frame_length() {
            return Err(Error::invalid(format!(
                "fft size {} shorter than frame length {}",
                self.fft_size,
                self.frame_length()
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::invalid("log floor must be positive"));
        }
        Ok(())
    }

    /// Hash of the settings that affect extracted features.
    pub fn fingerprint(&self) -> String {
        fingerprint::of(&AnalysisKey {
            preemphasis_coeff: self.preemphasis_coeff,
            frame_length_ms: self.frame_length_ms,
            frame_shift_ms: self.frame_shift_ms,
            window: &self.window,
            sample_rate_hz: self.sample_rate_hz,
            fft_size: self.fft_size,
            log_floor: self.log_floor,
        })
    }

    /// Number of frames produced for `n` samples (no centering or padding).
    pub fn frame_count(&self, n: usize) -> usize {
        let l = self.frame_length();
        if n < l {
            0
        } else {
            (n - l) / self.hop() + 1
        }
    }
}

/// Mono waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub speaker: Option<usize>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Self {
        Self { samples, sample_rate_hz, speaker: None }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Natural-log amplitude spectrogram, frames × bins, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    frames: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
    pub config_fingerprint: String,
}

impl Spectrogram {
    pub fn new(frames: Vec<f64>, n_frames: usize, n_bins: usize, config_fingerprint: String) -> Result<Self> {
        if n_frames == 0 || n_bins == 0 || frames.len() != n_frames * n_bins {
            return Err(Error::invalid(format!(
                "spectrogram data of length {} does not match {n_frames} × {n_bins}",
                frames.len()
            )));
        }
        Ok(Self { frames, n_frames, n_bins, config_fingerprint })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.frames[t * self.n_bins + f]
    }

    /// Frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n_frames {
            return Err(Error::invalid(format!("frames {start}..{} out of 0..{}", start + len, self.n_frames)));
        }
        let data = self.frames[start * self.n_bins..(start + len) * self.n_bins].to_vec();
        Self::new(data, len, self.n_bins, self.config_fingerprint.clone())
    }

    /// Extends to `len` frames by repeating the last frame.
    pub fn pad_to(&self, len: usize) -> Self {
        let mut data = self.frames.clone();
        let last = self.frame(self.n_frames - 1).to_vec();
        for _ in self.n_frames..len {
            data.extend_from_slice(&last);
        }
        let n = self.n_frames.max(len);
        Self { frames: data, n_frames: n, n_bins: self.n_bins, config_fingerprint: self.config_fingerprint.clone() }
    }

    /// Bin-major `[F, T]` single-precision copy, the layout the networks use.
    pub fn to_bins_major(&self) -> Vec<f32> {
        let (t, f) = (self.n_frames, self.n_bins);
        let mut out = vec![0f32; t * f];
        for ti in 0..t {
            for fi in 0..f {
                out[fi * t + ti] = self.frames[ti * f + fi] as f32;
            }
        }
        out
    }

    /// Inverse of [`Spectrogram::to_bins_major`].
    pub fn from_bins_major(data: &[f32], n_bins: usize, n_frames: usize, fingerprint: String) -> Result<Self> {
        if data.len() != n_bins * n_frames {
            return Err(Error::invalid("bin-major data has the wrong length"));
        }
        let mut frames = vec![0f64; data.len()];
        for fi in 0..n_bins {
            for ti in 0..n_frames {
                frames[ti * n_bins + fi] = data[fi * n_frames + ti] as f64;
            }
        }
        Self::new(frames, n_frames, n_bins, fingerprint)
    }
}

/// `out[0] = s[0]`, `out[n] = s[n] − coeff·s[n−1]`.
pub fn preemphasize(signal: &[f64], coeff: f64) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::invalid("pre-emphasis of an empty signal"));
    }
    let mut out = Vec::with_capacity(signal.len());
    out.push(signal[0]);
    out.extend(signal.windows(2).map(|w| w[1] - coeff * w[0]));
    Ok(out)
}

/// Recursive inverse of [`preemphasize`].
pub fn deemphasize(signal: &[f64], coeff: f64) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::invalid("de-emphasis of an empty signal"));
    }
    let mut out = Vec::with_capacity(signal.len());
    let mut prev = 0.0;
    for &v in signal {
        prev = v + coeff * prev;
        out.push(prev);
    }
    Ok(out)
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Reusable FFT plans and window for one configuration.
struct Analyzer {
    window: Vec<f64>,
    hop: usize,
    n_fft: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Analyzer {
    fn new(cfg: &DspConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: hann(cfg.frame_length()),
            hop: cfg.hop(),
            n_fft: cfg.fft_size,
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Complex half spectra of every frame, `[T][F]`.
    fn stft(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let l = self.window.len();
        let t = if x.len() < l { 0 } else { (x.len() - l) / self.hop + 1 };
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        (0..t)
            .map(|ti| {
                let start = ti * self.hop;
                buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                for (n, w) in self.window.iter().enumerate() {
                    buf[n].re = x[start + n] * w;
                }
                self.forward.process(&mut buf);
                buf[..self.bins()].to_vec()
            })
            .collect()
    }

    /// Least-squares inverse STFT: windowed overlap-add divided by the summed
    /// squared window (zero where no window covers a sample).
    fn istft(&self, spec: &[Vec<Complex64>]) -> Vec<f64> {
        let l = self.window.len();
        let len = (spec.len() - 1) * self.hop + l;
        let mut acc = vec![0f64; len];
        let mut norm = vec![0f64; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let bins = self.bins();
        for (ti, half) in spec.iter().enumerate() {
            buf[..bins].copy_from_slice(half);
            for k in bins..self.n_fft {
                buf[k] = half[self.n_fft - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = ti * self.hop;
            for (n, w) in self.window.iter().enumerate() {
                acc[start + n] += w * buf[n].re / self.n_fft as f64;
                norm[start + n] += w * w;
            }
        }
        acc.iter().zip(&norm).map(|(a, n)| if *n > 1e-12 { a / n } else { 0.0 }).collect()
    }
}

fn check_rate(clip: &AudioClip, cfg: &DspConfig) -> Result<()> {
    if clip.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::ConfigMismatch(format!(
            "clip sampled at {} Hz, config expects {} Hz",
            clip.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    Ok(())
}

/// Pre-emphasis, framing, Hann window, FFT, `ln(max(|X|, floor))`.
pub fn stft_logmag(clip: &AudioClip, cfg: &DspConfig) -> Result<Spectrogram> {
    check_rate(clip, cfg)?;
    let an = Analyzer::new(cfg)?;
    if clip.samples.len() < cfg.frame_length() {
        return Err(Error::invalid(format!(
            "clip of {} samples is shorter than one frame ({})",
            clip.samples.len(),
            cfg.frame_length()
        )));
    }
    let x: Vec<f64> = clip.samples.iter().map(|&v| v as f64).collect();
    let x = preemphasize(&x, cfg.preemphasis_coeff)?;
    let spec = an.stft(&x);
    let floor = cfg.log_floor;
    let frames = spec.iter().flat_map(|row| row.iter().map(move |c| c.norm().max(floor).ln())).collect();
    Spectrogram::new(frames, spec.len(), an.bins(), cfg.fingerprint())
}

/// Result of [`griffin_lim_traced`].
#[derive(Clone, Debug)]
pub struct GriffinLimOutput {
    pub clip: AudioClip,
    /// Spectral distance after each iteration (see [`griffin_lim_traced`]).
    pub objective: Vec<f64>,
}

/// Griffin-Lim followed by de-emphasis.
pub fn griffin_lim(spec: &Spectrogram, cfg: &DspConfig) -> Result<AudioClip> {
    Ok(griffin_lim_traced(spec, cfg, cfg.griffinlim_iters)?.clip)
}

/// Runs `iters` Griffin-Lim iterations. `objective[i]` is the squared distance
/// between the target magnitudes and the STFT magnitudes of the signal after
/// iteration `i + 1`, summed over the full (two-sided) spectrum.
pub fn griffin_lim_traced(spec: &Spectrogram, cfg: &DspConfig, iters: usize) -> Result<GriffinLimOutput> {
    let an = Analyzer::new(cfg)?;
    if spec.n_bins() != an.bins() {
        return Err(Error::ConfigMismatch(format!(
            "spectrogram has {} bins, fft size {} gives {}",
            spec.n_bins(),
            cfg.fft_size,
            an.bins()
        )));
    }
    let bins = an.bins();
    // entries clamped at the floor carry no magnitude information and are
    // synthesized as silence
    let floor = cfg.log_floor.ln();
    let mag: Vec<Vec<f64>> = (0..spec.n_frames())
        .map(|t| spec.frame(t).iter().map(|&v| if v <= floor { 0.0 } else { v.exp() }).collect())
        .collect();
    let mut phase = peak_locked_phases(&an, &mag);

    let weight = |k: usize| if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
    let mut objective = Vec::with_capacity(iters);
    let mut signal = synthesize(&an, &mag, &phase);
    for _ in 0..iters {
        let analysis = an.stft(&signal);
        let mut dist = 0.0;
        for ((row, target), ph) in analysis.iter().zip(&mag).zip(phase.iter_mut()) {
            for (k, ((c, m), p)) in row.iter().zip(target).zip(ph.iter_mut()).enumerate() {
                let a = c.norm();
                dist += weight(k) * (a - m).powi(2);
                *p = if a > 0.0 { c / a } else { Complex64::new(1.0, 0.0) };
            }
        }
        objective.push(dist);
        signal = synthesize(&an, &mag, &phase);
    }
    let out = deemphasize(&signal, cfg.preemphasis_coeff)?;
    Ok(GriffinLimOutput {
        clip: AudioClip::new(out.into_iter().map(|v| v as f32).collect(), cfg.sample_rate_hz),
        objective,
    })
}

/// Initial phases from a sinusoidal reading of the magnitudes. Every local
/// maximum is taken as one partial whose frequency comes from parabolic
/// interpolation of the log magnitudes; its phase advances by one hop of that
/// frequency from frame to frame. Bins between two peaks take the phase the
/// window transform gives them relative to the nearer partial.
fn peak_locked_phases(an: &Analyzer, mag: &[Vec<f64>]) -> Vec<Vec<Complex64>> {
    let n_fft = an.n_fft as f64;
    let bins = an.bins();
    let hop = an.hop as f64;
    let mut carrier = vec![0f64; bins];
    let mut out = Vec::with_capacity(mag.len());
    for row in mag {
        let peaks: Vec<usize> = (1..bins - 1).filter(|&k| row[k] > 0.0 && row[k] > row[k - 1] && row[k] >= row[k + 1]).collect();
        let mut phases = vec![Complex64::new(1.0, 0.0); bins];
        let mut next_carrier = vec![0f64; bins];
        let mut lo = 0;
        for (i, &p) in peaks.iter().enumerate() {
            let hi = match peaks.get(i + 1) {
                Some(&q) => (p..=q).min_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(p),
                None => bins - 1,
            };
            let (a, b, c) = (row[p - 1].max(1e-300).ln(), row[p].ln(), row[p + 1].max(1e-300).ln());
            let denom = a - 2.0 * b + c;
            let delta = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            let omega = 2.0 * PI * (p as f64 + delta) / n_fft;
            let theta = carrier[p] + omega * hop;
            for k in lo..=hi {
                let nu = 2.0 * PI * k as f64 / n_fft - omega;
                let w = window_transform(&an.window, nu);
                phases[k] = Complex64::from_polar(1.0, theta) * w / w.norm().max(1e-300);
                next_carrier[k] = theta;
            }
            lo = hi + 1;
        }
        carrier = next_carrier;
        out.push(phases);
    }
    out
}

/// `Σ w[n] e^{−iνn}`.
fn window_transform(window: &[f64], nu: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, -nu);
    let mut z = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for &w in window {
        acc += z * w;
        z *= step;
    }
    acc
}

fn synthesize(an: &Analyzer, mag: &[Vec<f64>], phase: &[Vec<Complex64>]) -> Vec<f64> {
    let spec: Vec<Vec<Complex64>> =
        mag.iter().zip(phase).map(|(m, p)| m.iter().zip(p).map(|(a, b)| b * *a).collect()).collect();
    an.istft(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, secs: f64, rate: u32, amp: f64) -> AudioClip {
        let n = (secs * rate as f64) as usize;
        let s = (0..n).map(|i| (amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32).collect();
        AudioClip::new(s, rate)
    }

    #[test]
    fn preemphasis_examples() {
        assert_eq!(preemphasize(&[0.0, 0.0, 0.0], 0.97).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(preemphasize(&[1.0, 0.0, 0.0], 0.97).unwrap(), vec![1.0, -0.97, 0.0]);
        let c = preemphasize(&[1.0, 1.0, 1.0], 0.97).unwrap();
        for (a, b) in c.iter().zip([1.0, 0.03, 0.03]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(preemphasize(&[], 0.97).unwrap_err().class(), "invalid-argument");
        assert_eq!(deemphasize(&[], 0.97).unwrap_err().class(), "invalid-argument");
        assert_eq!(deemphasize(&[1.0, -0.97, 0.0], 0.97).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(deemphasize(&[0.0; 4], 0.97).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn emphasis_round_trip_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = deemphasize(&preemphasize(&s, 0.97).unwrap(), 0.97).unwrap();
        let err = s.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn frame_count_example() {
        let cfg = DspConfig::paper();
        assert_eq!((cfg.frame_length(), cfg.hop()), (800, 200));
        let spec = stft_logmag(&AudioClip::new(vec![0.1; 4000], 16_000), &cfg).unwrap();
        assert_eq!(spec.n_frames(), 17);
        assert_eq!(spec.n_bins(), 1025);
    }

    #[test]
    fn pure_tone_peaks_at_expected_bin() {
        let cfg = DspConfig::paper();
        let spec = stft_logmag(&tone(1000.0, 0.5, 16_000, 0.5), &cfg).unwrap();
        for t in 0..spec.n_frames() {
            let row = spec.frame(t);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, 128);
        }
    }

    #[test]
    fn silence_sits_at_the_floor() {
        let cfg = DspConfig::paper();
        let spec = stft_logmag(&AudioClip::new(vec![0.0; 2000], 16_000), &cfg).unwrap();
        assert!(spec.data().iter().all(|&v| v == cfg.log_floor.ln()));
    }

    #[test]
    fn analysis_errors() {
        let cfg = DspConfig::paper();
        let short = AudioClip::new(vec![0.0; 799], 16_000);
        assert_eq!(stft_logmag(&short, &cfg).unwrap_err().class(), "invalid-argument");
        let wrong_rate = AudioClip::new(vec![0.0; 2000], 8_000);
        assert_eq!(stft_logmag(&wrong_rate, &cfg).unwrap_err().class(), "config-mismatch");
        let spec = stft_logmag(&AudioClip::new(vec![0.0; 2000], 16_000), &cfg).unwrap();
        let other = DspConfig { fft_size: 1024, ..cfg };
        assert_eq!(griffin_lim(&spec, &other).unwrap_err().class(), "config-mismatch");
    }

    #[test]
    fn analysis_is_deterministic() {
        let cfg = DspConfig::desk();
        let clip = tone(330.0, 0.4, 4000, 0.3);
        assert_eq!(stft_logmag(&clip, &cfg).unwrap(), stft_logmag(&clip, &cfg).unwrap());
    }

    #[test]
    fn scaling_shifts_log_magnitudes() {
        let cfg = DspConfig::desk();
        let clip = tone(300.0, 0.3, 4000, 0.25);
        let floor = cfg.log_floor.ln();
        let a = stft_logmag(&clip, &cfg).unwrap();
        // power-of-two gains scale f32 samples exactly
        for alpha in [0.5f64, 2.0, 4.0] {
            let scaled = AudioClip::new(clip.samples.iter().map(|v| v * alpha as f32).collect(), 4000);
            let b = stft_logmag(&scaled, &cfg).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                if *x > floor && *y > floor {
                    assert!((y - x - alpha.ln()).abs() < 1e-6, "{x} {y}");
                }
            }
        }
    }

    #[test]
    fn griffin_lim_reconstructs_a_tone() {
        let cfg = DspConfig::paper();
        let spec = stft_logmag(&tone(440.0, 1.0, 16_000, 0.5), &cfg).unwrap();
        let out = griffin_lim_traced(&spec, &cfg, 60).unwrap();
        assert_eq!(out.clip.samples.len(), (spec.n_frames() - 1) * cfg.hop() + cfg.frame_length());
        for w in out.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} -> {}", w[0], w[1]);
        }
        let again = stft_logmag(&out.clip, &cfg).unwrap();
        let err: f64 =
            spec.data().iter().zip(again.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / spec.data().len() as f64;
        assert!(err < 0.1, "mean abs log error {err}");
    }

    #[test]
    fn griffin_lim_of_silence_is_quiet() {
        let cfg = DspConfig::paper();
        let spec = stft_logmag(&AudioClip::new(vec![0.0; 4000], 16_000), &cfg).unwrap();
        let out = griffin_lim(&spec, &cfg).unwrap();
        assert!(out.samples.iter().all(|v| v.abs() < 1e-3));
    }

    proptest! {
        #[test]
        fn frame_count_formula(n in 0usize..5000, l in 2usize..400, h in 1usize..200) {
            prop_assume!(h < l);
            let rate = 1000;
            let cfg = DspConfig {
                frame_length_ms: l as f64,
                frame_shift_ms: h as f64,
                sample_rate_hz: rate,
                fft_size: l.next_power_of_two(),
                ..DspConfig::paper()
            };
            let expected = if n >= l { (n - l) / h + 1 } else { 0 };
            prop_assert_eq!(cfg.frame_count(n), expected);
            if n >= l {
                let spec = stft_logmag(&AudioClip::new(vec![0.01; n], rate), &cfg).unwrap();
                prop_assert_eq!(spec.n_frames(), expected);
            }
        }
    }
}
