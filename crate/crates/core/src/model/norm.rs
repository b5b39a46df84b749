use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// Smallest standard deviation used for a bin; keeps constant bins finite.
const MIN_STD: f64 = 1e-3;

/// Per-bin standardization of log-magnitude features. The networks work on
/// standardized features; conversions map their outputs back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    /// Mean and population standard deviation of every bin over all frames.
    pub fn fit<'a>(specs: impl IntoIterator<Item = &'a Spectrogram>) -> Result<Self> {
        let specs: Vec<&Spectrogram> = specs.into_iter().collect();
        let bins = specs.first().map(|s| s.n_bins()).ok_or_else(|| Error::invalid("no features to fit"))?;
        if specs.iter().any(|s| s.n_bins() != bins) {
            return Err(Error::invalid("features with different bin counts"));
        }
        let frames: usize = specs.iter().map(|s| s.n_frames()).sum();
        let mut mean = vec![0.0; bins];
        for s in &specs {
            for t in 0..s.n_frames() {
                for (m, v) in mean.iter_mut().zip(s.frame(t)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= frames as f64);
        let mut var = vec![0.0; bins];
        for s in &specs {
            for t in 0..s.n_frames() {
                for ((acc, v), m) in var.iter_mut().zip(s.frame(t)).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = var.into_iter().map(|v| (v / frames as f64).sqrt().max(MIN_STD)).collect();
        Ok(Self { mean, std })
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    /// Standardized frames in `[F, T]` (bins-major) order.
    pub fn apply(&self, spec: &Spectrogram) -> Result<Vec<f32>> {
        self.check(spec.n_bins())?;
        let t = spec.n_frames();
        let mut out = vec![0f32; t * self.bins()];
        for ti in 0..t {
            for (f, v) in spec.frame(ti).iter().enumerate() {
                out[f * t + ti] = ((v - self.mean[f]) / self.std[f]) as f32;
            }
        }
        Ok(out)
    }

    /// Feature value of bin `f` for a standardized value.
    pub fn restore(&self, f: usize, v: f32) -> f64 {
        self.mean[f] + self.std[f] * f64::from(v)
    }

    /// Feature-scale size of a standardized difference in bin `f`.
    pub fn restore_delta(&self, f: usize, d: f32) -> f64 {
        self.std[f] * f64::from(d)
    }

    fn check(&self, bins: usize) -> Result<()> {
        if bins != self.bins() {
            return Err(Error::ConfigMismatch(format!("features have {bins} bins, normalization {}", self.bins())));
        }
        Ok(())
    }
}
