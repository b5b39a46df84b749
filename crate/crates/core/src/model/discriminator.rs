use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Bound, Conv2d, Linear, ParamBuilder, ParamId};
use crate::real::Real;

use super::{ModelConfig, IN_EPS};

/// Critic score (unbounded, Wasserstein) and classifier-2 speaker logits.
#[derive(Clone, Copy, Debug)]
pub struct CriticOutput {
    /// `[B, 1]`
    pub score: Var,
    /// `[B, N_speaker]`
    pub logits: Var,
}

/// 2-d convolutional critic over a spectrogram treated as a one-channel
/// frequency × time image. Both heads share every convolution.
#[derive(Clone, Debug)]
pub struct Discriminator {
    blocks: Vec<Conv2d>,
    squeeze: Conv2d,
    score: Linear,
    classify: Linear,
    feat_bins: usize,
    frames: usize,
    slope: f64,
}

impl Discriminator {
    pub fn new(cfg: &ModelConfig, pb: &mut ParamBuilder<'_>) -> Self {
        let k = cfg.disc_kernel;
        let mut c_in = 1;
        let mut blocks = Vec::new();
        for (i, c) in cfg.disc_widths().into_iter().enumerate() {
            blocks.push(Conv2d::new(pb, &format!("conv{i}"), c_in, c, ConvGeom::square_2d(k, 2, k / 2)));
            c_in = c;
        }
        let out_c = cfg.disc_out_width();
        let squeeze = Conv2d::new(pb, "squeeze", c_in, out_c, ConvGeom::square_2d(1, 1, 0));
        let (fo, to) = cfg.disc_output_dims();
        let flat = out_c * fo * to;
        Self {
            blocks,
            squeeze,
            score: Linear::new(pb, "score", flat, 1),
            classify: Linear::new(pb, "classify", flat, cfg.n_speakers),
            feat_bins: cfg.feat_bins,
            frames: cfg.segment_frames,
            slope: cfg.leaky_slope,
        }
    }

    pub fn first_conv_weight(&self) -> ParamId {
        self.blocks[0].weight()
    }

    /// Output of the shared trunk, `[B, C, F', T']`.
    pub fn trunk<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let s = t.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.feat_bins || s[2] != self.frames {
            return Err(Error::invalid(format!(
                "discriminator expects [B, {}, {}], got {s:?}",
                self.feat_bins, self.frames
            )));
        }
        let mut h = t.reshape(x, &[s[0], 1, s[1], s[2]])?;
        for c in self.blocks.iter().chain(std::iter::once(&self.squeeze)) {
            let a = c.forward(t, p, h)?;
            let a = t.leaky_relu(a, self.slope);
            h = t.instance_norm(a, IN_EPS)?;
        }
        Ok(h)
    }

    /// `x [B, F, T]` (training-segment shape only).
    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<CriticOutput> {
        let h = self.trunk(t, p, x)?;
        let s = t.shape(h).to_vec();
        let flat = t.reshape(h, &[s[0], s[1..].iter().product()])?;
        Ok(CriticOutput { score: self.score.forward(t, p, flat)?, logits: self.classify.forward(t, p, flat)? })
    }
}
