//! Objective evaluation: per-bin global variance of converted spectrograms,
//! the latent speaker probe, and PNG heatmaps / curve plots.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::conversion::{convert, padded_length, ConversionStage};
use crate::corpus::Dataset;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::model::{Classifier, ModelConfig, Networks};
use crate::nn::{Adam, AdamConfig, Mode, ParamBuilder, ParamSet};
use crate::tensor::Tensor;

/// Per-frequency global variance of a set of utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct GvReport {
    pub per_bin: Vec<f64>,
    pub average: f64,
    pub condition_tag: String,
}

/// For each utterance, the population variance of every bin over its frames;
/// `per_bin` averages these over utterances.
pub fn global_variance(specs: &[Spectrogram], tag: &str) -> Result<GvReport> {
    let first = specs.first().ok_or_else(|| Error::invalid("global variance of an empty set"))?;
    let bins = first.n_bins();
    let mut per_bin = vec![0.0; bins];
    for s in specs {
        if s.n_bins() != bins {
            return Err(Error::invalid(format!("spectrograms with {} and {} bins", bins, s.n_bins())));
        }
        let t = s.n_frames() as f64;
        let mut mean = vec![0.0; bins];
        for f in 0..s.n_frames() {
            for (m, v) in mean.iter_mut().zip(s.frame(f)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t);
        let mut var = vec![0.0; bins];
        for f in 0..s.n_frames() {
            for ((acc, v), m) in var.iter_mut().zip(s.frame(f)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        for (p, v) in per_bin.iter_mut().zip(var) {
            *p += v / t;
        }
    }
    per_bin.iter_mut().for_each(|p| *p /= specs.len() as f64);
    let average = per_bin.iter().sum::<f64>() / bins as f64;
    Ok(GvReport { per_bin, average, condition_tag: tag.to_string() })
}

impl GvReport {
    /// `bin<TAB>value` lines followed by `average<TAB>value`.
    pub fn write_table(&self, w: &mut impl Write) -> Result<()> {
        for (k, v) in self.per_bin.iter().enumerate() {
            writeln!(w, "{k}\t{v}")?;
        }
        writeln!(w, "average\t{}", self.average)?;
        Ok(())
    }
}

/// Two voice groups standing in for the gender split: the lower half of the
/// speaker ids (lower fundamental on the toy corpus) is `M`, the rest `F`.
pub fn voice_group(speaker: usize, n_speakers: usize) -> char {
    if speaker < n_speakers / 2 {
        'M'
    } else {
        'F'
    }
}

pub const DIRECTIONS: [&str; 4] = ["M2M", "M2F", "F2M", "F2F"];

/// Row labels of the comparison table, keyed by system tag.
pub const SYSTEMS: [(&str, &str); 3] =
    [("autoencoder", "(a) autoencoder alone"), ("stage1", "(b) stage 1 alone"), ("proposed", "(c) proposed")];

/// Converts every test utterance to every other speaker and reports GV per
/// group direction, tagged `DIR/system`.
pub fn gv_by_direction(nets: &Networks, test: &Dataset, stage: ConversionStage, system: &str) -> Result<Vec<GvReport>> {
    let n = test.n_speakers;
    let mut buckets: BTreeMap<String, Vec<Spectrogram>> = BTreeMap::new();
    for u in &test.entries {
        for target in (0..n).filter(|&t| t != u.speaker) {
            let dir = format!("{}2{}", voice_group(u.speaker, n), voice_group(target, n));
            buckets.entry(dir).or_default().push(convert(nets, &u.spec, target, stage)?);
        }
    }
    DIRECTIONS
        .iter()
        .filter_map(|d| buckets.get(*d).map(|specs| global_variance(specs, &format!("{d}/{system}"))))
        .collect()
}

/// Table of GV averages: one row per system, one column per direction.
/// Tags are `DIR/system`; unknown systems follow the known ones.
pub fn gv_table(reports: &[GvReport]) -> String {
    let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut systems: Vec<String> = Vec::new();
    for r in reports {
        let (dir, sys) = r.condition_tag.split_once('/').unwrap_or(("all", r.condition_tag.as_str()));
        if !systems.iter().any(|s| s == sys) {
            systems.push(sys.to_string());
        }
        cells.insert((sys.to_string(), dir.to_string()), r.average);
    }
    let rank = |s: &str| SYSTEMS.iter().position(|(k, _)| *k == s).unwrap_or(SYSTEMS.len());
    systems.sort_by_key(|s| rank(s));
    let mut out = String::from("system");
    for d in DIRECTIONS {
        out.push('\t');
        out.push_str(d);
    }
    out.push('\n');
    for s in systems {
        let label = SYSTEMS.iter().find(|(k, _)| *k == s).map_or(s.as_str(), |(_, l)| l);
        out.push_str(label);
        for d in DIRECTIONS {
            match cells.get(&(s.clone(), d.to_string())) {
                Some(v) => out.push_str(&format!("\t{v:.4}")),
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes the per-bin curves of every report to `png` and returns the table.
pub fn gv_compare(reports: &[GvReport], png: &Path) -> Result<String> {
    if reports.len() < 2 {
        return Err(Error::invalid("need at least two conditions to compare"));
    }
    let bins = reports[0].per_bin.len();
    if reports.iter().any(|r| r.per_bin.len() != bins) {
        return Err(Error::invalid("conditions have different numbers of bins"));
    }
    plot_curves(&reports.iter().map(|r| r.per_bin.as_slice()).collect::<Vec<_>>(), png)?;
    Ok(gv_table(reports))
}

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=steps {
        let x = x0 + (x1 - x0) * i / steps;
        let y = y0 + (y1 - y0) * i / steps;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Line plot, one colour per curve, shared vertical scale from zero to the
/// largest value.
pub fn plot_curves(curves: &[&[f64]], path: &Path) -> Result<()> {
    let (w, h, margin) = (640u32, 400u32, 30i64);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let (left, right, top, bottom) = (margin, w as i64 - margin, margin, h as i64 - margin);
    draw_line(&mut img, (left, bottom), (right, bottom), axis);
    draw_line(&mut img, (left, bottom), (left, top), axis);
    let max = curves.iter().flat_map(|c| c.iter()).fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
    for (k, c) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        let n = c.len().max(2) - 1;
        let pt = |i: usize| {
            let x = left + ((right - left) as f64 * i as f64 / n as f64).round() as i64;
            let y = bottom - ((bottom - top) as f64 * c[i] / max).round() as i64;
            (x, y)
        };
        for i in 1..c.len() {
            draw_line(&mut img, pt(i - 1), pt(i), color);
        }
    }
    save_png(&img, path)
}

/// Piecewise-linear approximation of a perceptually ordered dark-to-bright map.
fn colormap(v: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] =
        [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + (STOPS[i + 1][k] - STOPS[i][k]) * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Heatmaps stacked top to bottom, time left to right and low frequencies at
/// the bottom of each panel. All panels share one colour scale, the global
/// minimum and maximum unless `range` is given.
pub fn plot_spectrograms(panels: &[&Spectrogram], path: &Path, range: Option<(f64, f64)>) -> Result<()> {
    if panels.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        panels.iter().flat_map(|s| s.data().iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = (hi - lo).max(1e-12);
    let gap = 4u32;
    let width = panels.iter().map(|s| s.n_frames()).max().unwrap_or(1) as u32;
    let height = panels.iter().map(|s| s.n_bins() as u32).sum::<u32>() + gap * (panels.len() as u32 - 1);
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let mut y0 = 0u32;
    for s in panels {
        let bins = s.n_bins() as u32;
        for t in 0..s.n_frames() {
            for f in 0..s.n_bins() {
                let v = (s.get(t, f) - lo) / span;
                img.put_pixel(t as u32, y0 + bins - 1 - f as u32, colormap(v));
            }
        }
        y0 += bins + gap;
    }
    save_png(&img, path)
}

/// Single heatmap with its own colour scale.
pub fn plot_spectrogram(spec: &Spectrogram, path: &Path) -> Result<()> {
    plot_spectrograms(&[spec], path, None)
}

/// Latent code `[C, T′]` of one utterance with its speaker.
pub type LabeledLatent = (Tensor<f32>, usize);

/// Encodes each utterance (edge-padded to the downsampling multiple).
pub fn collect_latents(nets: &Networks, ds: &Dataset) -> Result<Vec<LabeledLatent>> {
    ds.entries
        .iter()
        .map(|u| {
            let padded = u.spec.pad_to(padded_length(u.spec.n_frames(), nets.cfg.downsample_factor()));
            let z = nets.encode(&nets.input(&padded)?)?;
            let s = z.shape().to_vec();
            Ok((z.reshape(&s[1..])?, u.speaker))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Latent frames per training crop.
    pub crop_frames: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { steps: 3000, batch_size: 16, crop_frames: 16, adam: AdamConfig::default(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub n_eval: usize,
    pub condition: String,
}

impl ProbeReport {
    /// `condition<TAB>accuracy<TAB>n_eval`
    pub fn line(&self) -> String {
        format!("{}\t{}\t{}", self.condition, self.accuracy, self.n_eval)
    }
}

fn crop(z: &Tensor<f32>, start: usize, len: usize) -> Vec<f32> {
    let (c, t) = (z.shape()[0], z.shape()[1]);
    let mut out = Vec::with_capacity(c * len);
    for ch in 0..c {
        out.extend_from_slice(&z.data()[ch * t + start..ch * t + start + len]);
    }
    out
}

/// Trains a fresh classifier of classifier-1's architecture on frozen
/// `train` latents and reports its utterance-level accuracy on `test`.
/// `model` fixes the architecture; its latent width must match the codes.
pub fn disentanglement_probe(
    model: &ModelConfig,
    train: &[LabeledLatent],
    test: &[LabeledLatent],
    cfg: &ProbeConfig,
    condition: &str,
) -> Result<ProbeReport> {
    let mut speakers: Vec<usize> = train.iter().map(|(_, s)| *s).collect();
    speakers.sort_unstable();
    speakers.dedup();
    if speakers.len() < 2 {
        return Err(Error::invalid("probe needs latents from at least two speakers"));
    }
    if test.is_empty() {
        return Err(Error::invalid("probe needs held-out latents"));
    }
    let c = model.latent_dim();
    for (z, s) in train.iter().chain(test) {
        if z.shape().len() != 2 || z.shape()[0] != c || z.shape()[1] < 2 {
            return Err(Error::invalid(format!("latent of shape {:?}, expected [{c}, ≥2]", z.shape())));
        }
        if *s >= model.n_speakers {
            return Err(Error::invalid(format!("speaker {s} outside the model's {} speakers", model.n_speakers)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::default();
    let probe = Classifier::new(model, &mut ParamBuilder::new(&mut params, &mut rng));
    let mut opt = Adam::new(cfg.adam, &params);
    let min_len = train.iter().map(|(z, _)| z.shape()[1]).min().unwrap_or(2);
    let len = cfg.crop_frames.min(min_len).max(2);
    for _ in 0..cfg.steps {
        let mut x = Vec::with_capacity(cfg.batch_size * c * len);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (z, s) = &train[rng.gen_range(0..train.len())];
            let start = rng.gen_range(0..=z.shape()[1] - len);
            x.extend(crop(z, start, len));
            labels.push(*s);
        }
        let mut t = Tape::<f32>::new();
        let p = params.bind(&mut t, true);
        let xv = t.constant(Tensor::new(&[cfg.batch_size, c, len], x)?);
        let logits = probe.forward(&mut t, &p, xv, &mut Mode::train(&mut rng))?;
        let nll = t.softmax_nll(logits, &labels)?;
        let mut g = t.backward(nll);
        let grads = p.grads(&mut g);
        opt.update(&mut params, &grads);
    }
    let mut correct = 0;
    for (z, s) in test {
        let mut t = Tape::<f32>::new();
        let p = params.bind(&mut t, false);
        let xv = t.constant(z.reshape(&[1, c, z.shape()[1]])?);
        let logits = probe.forward(&mut t, &p, xv, &mut Mode::eval())?;
        let row = t.value(logits).data();
        let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
        correct += usize::from(best == *s);
    }
    Ok(ProbeReport { accuracy: correct as f64 / test.len() as f64, n_eval: test.len(), condition: condition.to_string() })
}

#[cfg(test)]
mod tests;
