//! The five trainable networks: encoder, decoder, generator (decoder-shaped,
//! independent weights), classifier-1 on the latent code, and the 2-d
//! discriminator with its speaker-classification head.

mod blocks;
mod checkpoint;
mod classifier;
mod decoder;
mod discriminator;
mod encoder;
mod norm;

pub use blocks::{conv_bank, instance_norm, pixel_shuffle_1d, pixel_unshuffle_1d, ConvBank};
pub use checkpoint::{Checkpoint, CheckpointMeta, NetworkState};
pub use classifier::Classifier;
pub use decoder::Decoder;
pub use discriminator::{CriticOutput, Discriminator};
pub use encoder::Encoder;
pub use norm::FeatureNorm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::fingerprint;
use crate::nn::{Mode, ParamBuilder, ParamSet};
use crate::tensor::Tensor;

pub const IN_EPS: f64 = 1e-5;

/// Architecture hyper-parameters. Widths are stored at paper scale and
/// multiplied by `scale` when the networks are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_speakers: usize,
    pub feat_bins: usize,
    pub width: usize,
    pub conv_bank_k: usize,
    pub bank_channels: usize,
    /// Stride-2 encoder conv blocks; the time downsampling factor is `2^n`.
    pub strided_blocks: usize,
    pub dense_blocks: usize,
    pub classifier_blocks: usize,
    pub classifier_kernel: usize,
    pub dropout_encoder: f64,
    pub dropout_classifier: f64,
    pub disc_channels: Vec<usize>,
    pub disc_out_channels: usize,
    pub disc_kernel: usize,
    /// Frames per training segment; fixes the discriminator's input shape.
    pub segment_frames: usize,
    pub leaky_slope: f64,
    pub scale: f64,
}

impl ModelConfig {
    /// Paper-scale network for `n_speakers` speakers and `feat_bins` frequency bins.
    pub fn paper(n_speakers: usize, feat_bins: usize) -> Self {
        Self {
            n_speakers,
            feat_bins,
            width: 512,
            conv_bank_k: 8,
            bank_channels: 128,
            strided_blocks: 3,
            dense_blocks: 4,
            classifier_blocks: 4,
            classifier_kernel: 5,
            dropout_encoder: 0.5,
            dropout_classifier: 0.3,
            disc_channels: vec![64, 128, 256, 512, 512],
            disc_out_channels: 32,
            disc_kernel: 5,
            segment_frames: 128,
            leaky_slope: 0.2,
            scale: 1.0,
        }
    }

    /// Paper architecture with every width scaled by 1/8.
    pub fn desk(n_speakers: usize, feat_bins: usize) -> Self {
        Self { scale: 0.125, ..Self::paper(n_speakers, feat_bins) }
    }

    /// Smallest useful network (width 8, three bank branches, three critic
    /// layers), for gradient checks and fast tests.
    pub fn shrunken(n_speakers: usize, feat_bins: usize, segment_frames: usize) -> Self {
        Self {
            width: 8,
            bank_channels: 4,
            conv_bank_k: 3,
            disc_channels: vec![2, 4, 4],
            disc_out_channels: 2,
            segment_frames,
            ..Self::paper(n_speakers, feat_bins)
        }
    }

    fn scaled(&self, v: usize) -> usize {
        ((v as f64 * self.scale).round() as usize).max(1)
    }

    /// Effective channel width (kept even so the decoder GRU halves it).
    pub fn hidden(&self) -> usize {
        let w = self.scaled(self.width).max(2);
        w + w % 2
    }

    pub fn latent_dim(&self) -> usize {
        self.hidden()
    }

    pub fn bank_width(&self) -> usize {
        self.scaled(self.bank_channels)
    }

    pub fn disc_widths(&self) -> Vec<usize> {
        self.disc_channels.iter().map(|&c| self.scaled(c)).collect()
    }

    pub fn disc_out_width(&self) -> usize {
        self.scaled(self.disc_out_channels)
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.strided_blocks
    }

    /// Width of each speaker-conditioned decoder/generator layer, in order.
    pub fn embedding_dims(&self) -> Vec<usize> {
        vec![self.hidden(); self.strided_blocks + self.dense_blocks + 1]
    }

    /// Spatial size `(freq, time)` of the discriminator's final feature map.
    pub fn disc_output_dims(&self) -> (usize, usize) {
        let mut f = self.feat_bins;
        let mut t = self.segment_frames;
        for _ in &self.disc_channels {
            f = f.div_ceil(2);
            t = t.div_ceil(2);
        }
        (f, t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::invalid("need at least two speakers"));
        }
        if self.feat_bins == 0 || self.width == 0 || self.conv_bank_k == 0 || self.disc_channels.is_empty() {
            return Err(Error::invalid("all widths must be positive"));
        }
        if self.segment_frames % self.downsample_factor() != 0 {
            return Err(Error::invalid(format!(
                "segment length {} not divisible by downsampling factor {}",
                self.segment_frames,
                self.downsample_factor()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_encoder) || !(0.0..1.0).contains(&self.dropout_classifier) {
            return Err(Error::invalid("dropout rates must lie in [0, 1)"));
        }
        if self.disc_kernel % 2 == 0 || self.classifier_kernel == 0 {
            return Err(Error::invalid("discriminator kernel must be odd"));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint::of(self)
    }
}

/// Which network a [`ParamSet`] belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Net {
    Encoder,
    Decoder,
    Generator,
    Classifier1,
    Discriminator,
}

impl Net {
    pub const ALL: [Net; 5] = [Net::Encoder, Net::Decoder, Net::Generator, Net::Classifier1, Net::Discriminator];

    pub fn name(self) -> &'static str {
        match self {
            Net::Encoder => "encoder",
            Net::Decoder => "decoder",
            Net::Generator => "generator",
            Net::Classifier1 => "classifier1",
            Net::Discriminator => "discriminator",
        }
    }
}

/// Architectures plus their parameters.
#[derive(Clone, Debug)]
pub struct Networks {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub generator: Decoder,
    pub classifier: Classifier,
    pub discriminator: Discriminator,
    pub params: [ParamSet<f32>; 5],
    /// Input standardization; fitted on the training data when the first
    /// training stage starts.
    pub norm: Option<FeatureNorm>,
}

impl Networks {
    /// Builds all networks with deterministic initialization from `seed`.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets: [ParamSet<f32>; 5] = Default::default();
        let encoder = Encoder::new(cfg, &mut ParamBuilder::new(&mut sets[0], &mut rng));
        let decoder = Decoder::new(cfg, &mut ParamBuilder::new(&mut sets[1], &mut rng), false);
        let generator = Decoder::new(cfg, &mut ParamBuilder::new(&mut sets[2], &mut rng), true);
        let classifier = Classifier::new(cfg, &mut ParamBuilder::new(&mut sets[3], &mut rng));
        let discriminator = Discriminator::new(cfg, &mut ParamBuilder::new(&mut sets[4], &mut rng));
        Ok(Self { cfg: cfg.clone(), encoder, decoder, generator, classifier, discriminator, params: sets, norm: None })
    }

    pub fn params(&self, net: Net) -> &ParamSet<f32> {
        &self.params[net as usize]
    }

    pub fn params_mut(&mut self, net: Net) -> &mut ParamSet<f32> {
        &mut self.params[net as usize]
    }

    /// SHA-256 over one network's raw parameter bytes.
    pub fn param_hash(&self, net: Net) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in self.params(net).iter() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// `[1, F, T]` network input for a spectrogram, standardized when a
    /// normalization is set.
    pub fn input(&self, spec: &Spectrogram) -> Result<Tensor<f32>> {
        if spec.n_bins() != self.cfg.feat_bins {
            return Err(Error::ConfigMismatch(format!("spectrogram has {} bins, model {}", spec.n_bins(), self.cfg.feat_bins)));
        }
        let data = match &self.norm {
            Some(n) => n.apply(spec)?,
            None => spec.to_bins_major(),
        };
        Tensor::new(&[1, spec.n_bins(), spec.n_frames()], data)
    }

    /// Feature value of bin `f` for a network output value.
    pub fn restore(&self, f: usize, v: f32) -> f64 {
        self.norm.as_ref().map_or(f64::from(v), |n| n.restore(f, v))
    }

    /// Feature-scale size of a network-scale difference in bin `f`.
    pub fn restore_delta(&self, f: usize, d: f32) -> f64 {
        self.norm.as_ref().map_or(f64::from(d), |n| n.restore_delta(f, d))
    }

    /// Inference-mode encoder pass: `x [B, F, T]` → `[B, latent, T/factor]`.
    pub fn encode(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut t = Tape::new();
        let p = self.params(Net::Encoder).bind(&mut t, false);
        let xv = t.constant(x.clone());
        let z = self.encoder.forward(&mut t, &p, xv, &mut Mode::eval())?;
        Ok(t.value(z).clone())
    }

    /// Decoder (stage 1) output for latent `z` and one target speaker per item.
    pub fn decode(&self, z: &Tensor<f32>, speakers: &[usize]) -> Result<Tensor<f32>> {
        self.run_decoder(Net::Decoder, z, speakers)
    }

    /// Generator residual for latent `z`.
    pub fn residual(&self, z: &Tensor<f32>, speakers: &[usize]) -> Result<Tensor<f32>> {
        self.run_decoder(Net::Generator, z, speakers)
    }

    fn run_decoder(&self, net: Net, z: &Tensor<f32>, speakers: &[usize]) -> Result<Tensor<f32>> {
        let mut t = Tape::new();
        let p = self.params(net).bind(&mut t, false);
        let zv = t.constant(z.clone());
        let arch = if net == Net::Generator { &self.generator } else { &self.decoder };
        let y = arch.forward(&mut t, &p, zv, speakers)?;
        Ok(t.value(y).clone())
    }

    /// Classifier-1 logits `[B, N]` for latent `z`, dropout off.
    pub fn classify(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut t = Tape::new();
        let p = self.params(Net::Classifier1).bind(&mut t, false);
        let zv = t.constant(z.clone());
        let y = self.classifier.forward(&mut t, &p, zv, &mut Mode::eval())?;
        Ok(t.value(y).clone())
    }

    /// Critic score `[B, 1]` and classifier-2 logits `[B, N]`.
    pub fn criticize(&self, x: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut t = Tape::new();
        let p = self.params(Net::Discriminator).bind(&mut t, false);
        let xv = t.constant(x.clone());
        let out = self.discriminator.forward(&mut t, &p, xv)?;
        Ok((t.value(out.score).clone(), t.value(out.logits).clone()))
    }
}

#[cfg(test)]
mod tests;
