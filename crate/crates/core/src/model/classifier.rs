use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::kernels::ConvGeom;
use crate::nn::{Bound, Conv1d, Mode, ParamBuilder};
use crate::real::Real;

use super::blocks::conv_act;
use super::{ModelConfig, IN_EPS};

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv1d,
    b: Conv1d,
}

/// Speaker classifier over a latent sequence: residual conv blocks, an activation,
/// per-frame logits, then a time average. Also the architecture of the disentanglement probe.
#[derive(Clone, Debug)]
pub struct Classifier {
    blocks: Vec<ResBlock>,
    head: Conv1d,
    slope: f64,
    dropout: f64,
}

impl Classifier {
    pub fn new(cfg: &ModelConfig, pb: &mut ParamBuilder<'_>) -> Self {
        let w = cfg.hidden();
        let k = cfg.classifier_kernel;
        let blocks = (0..cfg.classifier_blocks)
            .map(|i| ResBlock {
                a: Conv1d::new(pb, &format!("conv{i}a"), w, w, ConvGeom::same_1d(k)),
                b: Conv1d::new(pb, &format!("conv{i}b"), w, w, ConvGeom::same_1d(k)),
            })
            .collect();
        let head = Conv1d::new(pb, "head", w, cfg.n_speakers, ConvGeom::same_1d(1));
        Self { blocks, head, slope: cfg.leaky_slope, dropout: cfg.dropout_classifier }
    }

    /// `z [B, latent, T']` → logits `[B, N_speaker]`.
    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, z: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let mut h = z;
        for b in &self.blocks {
            let a = conv_act(t, p, &b.a, h, self.slope)?;
            let a = b.b.forward(t, p, a)?;
            let a = t.instance_norm(a, IN_EPS)?;
            let sum = t.add(h, a)?;
            h = mode.apply_dropout(t, sum, self.dropout)?;
        }
        // without this activation the time average would only see mean(z)
        let h = t.leaky_relu(h, self.slope);
        let frames = self.head.forward(t, p, h)?;
        t.mean_time(frames)
    }
}
