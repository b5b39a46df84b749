use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::kernels::ConvGeom;
use crate::nn::{BiGru, Bound, Conv1d, Embedding, Merge, ParamBuilder, ParamId};
use crate::real::Real;

use super::blocks::conv_act;
use super::{ModelConfig, IN_EPS};

#[derive(Clone, Debug)]
struct UpBlock {
    emb: Embedding,
    expand: Conv1d,
    conv: Conv1d,
}

#[derive(Clone, Debug)]
struct DenseBlock {
    emb: Embedding,
    fc: Conv1d,
}

/// Speaker-conditioned upsampling network. Used both as the stage-1 decoder
/// and, with independent weights and a zero-initialized output layer, as the
/// stage-2 residual generator.
#[derive(Clone, Debug)]
pub struct Decoder {
    up: Vec<UpBlock>,
    dense: Vec<DenseBlock>,
    rnn_emb: Embedding,
    rnn: BiGru,
    out: Conv1d,
    slope: f64,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, pb: &mut ParamBuilder<'_>, zero_output: bool) -> Self {
        let w = cfg.hidden();
        let n = cfg.n_speakers;
        let up = (0..cfg.strided_blocks)
            .map(|i| UpBlock {
                emb: Embedding::new(pb, &format!("emb_up{i}"), n, w),
                expand: Conv1d::new(pb, &format!("up{i}a"), w, 2 * w, ConvGeom::same_1d(3)),
                conv: Conv1d::new(pb, &format!("up{i}b"), w, w, ConvGeom::same_1d(3)),
            })
            .collect();
        let dense = (0..cfg.dense_blocks)
            .map(|i| DenseBlock {
                emb: Embedding::new(pb, &format!("emb_dense{i}"), n, w),
                fc: Conv1d::new(pb, &format!("dense{i}"), w, w, ConvGeom::same_1d(1)),
            })
            .collect();
        let rnn_emb = Embedding::new(pb, "emb_rnn", n, w);
        let rnn = BiGru::new(pb, "rnn", w, w / 2, Merge::Concat);
        let out = if zero_output {
            Conv1d::zeroed(pb, "out", w, cfg.feat_bins, ConvGeom::same_1d(1))
        } else {
            Conv1d::new(pb, "out", w, cfg.feat_bins, ConvGeom::same_1d(1))
        };
        Self { up, dense, rnn_emb, rnn, out, slope: cfg.leaky_slope }
    }

    pub fn output_weight(&self) -> ParamId {
        self.out.weight()
    }

    /// Embedding tables in layer order.
    pub fn embedding_tables(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.up.iter().map(|b| b.emb.table()).collect();
        v.extend(self.dense.iter().map(|b| b.emb.table()));
        v.push(self.rnn_emb.table());
        v
    }

    /// `z [B, latent, T']`, one speaker per item → `[B, F, T'·2^blocks]`.
    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, z: Var, speakers: &[usize]) -> Result<Var> {
        let mut h = z;
        for b in &self.up {
            let c = b.emb.condition(t, p, h, speakers)?;
            let a = conv_act(t, p, &b.expand, c, self.slope)?;
            let a = t.pixel_shuffle(a, 2)?;
            let a = conv_act(t, p, &b.conv, a, self.slope)?;
            let a = t.instance_norm(a, IN_EPS)?;
            let skip = t.upsample2(h)?;
            h = t.add(a, skip)?;
        }
        for b in &self.dense {
            let c = b.emb.condition(t, p, h, speakers)?;
            let a = b.fc.forward(t, p, c)?;
            let a = t.instance_norm(a, IN_EPS)?;
            h = t.add(h, a)?;
        }
        let c = self.rnn_emb.condition(t, p, h, speakers)?;
        let r = self.rnn.forward(t, p, c)?;
        let combined = t.add(r, h)?;
        self.out.forward(t, p, combined)
    }
}
