use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{BiGru, Bound, Conv1d, Merge, Mode, ParamBuilder};
use crate::real::Real;

use super::blocks::{conv_act, ConvBank};
use super::{ModelConfig, IN_EPS};

#[derive(Clone, Debug)]
struct StridedBlock {
    conv: Conv1d,
    down: Conv1d,
}

/// conv-bank → projection → strided conv blocks (÷2 each) → dense blocks →
/// bi-GRU (directions summed) → recurrent + dense.
#[derive(Clone, Debug)]
pub struct Encoder {
    bank: ConvBank,
    bank_proj: Conv1d,
    blocks: Vec<StridedBlock>,
    dense: Vec<Conv1d>,
    rnn: BiGru,
    slope: f64,
    dropout: f64,
    factor: usize,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, pb: &mut ParamBuilder<'_>) -> Self {
        let w = cfg.hidden();
        let bank = ConvBank::new(pb, cfg.feat_bins, cfg.bank_width(), cfg.conv_bank_k, cfg.leaky_slope);
        // bank output (K·branch channels) is projected to the residual width
        let bank_proj = Conv1d::new(pb, "bank_proj", cfg.conv_bank_k * cfg.bank_width(), w, ConvGeom::same_1d(1));
        let blocks = (0..cfg.strided_blocks)
            .map(|i| StridedBlock {
                conv: Conv1d::new(pb, &format!("conv{i}a"), w, w, ConvGeom::same_1d(5)),
                down: Conv1d::new(pb, &format!("conv{i}b"), w, w, ConvGeom::strided_1d(5, 2)),
            })
            .collect();
        let dense = (0..cfg.dense_blocks).map(|i| Conv1d::new(pb, &format!("dense{i}"), w, w, ConvGeom::same_1d(1))).collect();
        let rnn = BiGru::new(pb, "rnn", w, w, Merge::Sum);
        Self {
            bank,
            bank_proj,
            blocks,
            dense,
            rnn,
            slope: cfg.leaky_slope,
            dropout: cfg.dropout_encoder,
            factor: cfg.downsample_factor(),
        }
    }

    pub fn bank(&self) -> &ConvBank {
        &self.bank
    }

    /// `x [B, F, T]` → latent `[B, latent_dim, T/factor]`.
    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var, mode: &mut Mode<'_>) -> Result<Var> {
        let frames = t.shape(x)[2];
        if frames % self.factor != 0 || frames == 0 {
            return Err(Error::invalid(format!("encoder input length {frames} not divisible by {}", self.factor)));
        }
        let h = self.bank.forward(t, p, x)?;
        let mut h = self.bank_proj.forward(t, p, h)?;
        for b in &self.blocks {
            let a = conv_act(t, p, &b.conv, h, self.slope)?;
            let a = conv_act(t, p, &b.down, a, self.slope)?;
            let a = t.instance_norm(a, IN_EPS)?;
            let skip = t.avg_pool2(h)?;
            let sum = t.add(a, skip)?;
            h = mode.apply_dropout(t, sum, self.dropout)?;
        }
        for d in &self.dense {
            let a = d.forward(t, p, h)?;
            let a = t.instance_norm(a, IN_EPS)?;
            let sum = t.add(h, a)?;
            h = mode.apply_dropout(t, sum, self.dropout)?;
        }
        let r = self.rnn.forward(t, p, h)?;
        t.add(r, h)
    }
}
