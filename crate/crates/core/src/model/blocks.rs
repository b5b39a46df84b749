use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::nn::{Bound, Conv1d, ParamBuilder, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;

use super::IN_EPS;

/// `[C, T] -> [C/r, T·r]` with `out[c, t·r + j] = x[c·r + j, t]`.
pub fn pixel_shuffle_1d<S: Real>(x: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    let s = x.shape();
    if s.len() != 2 || r == 0 || s[0] % r != 0 {
        return Err(Error::invalid(format!("pixel shuffle of {s:?} by {r}")));
    }
    let out = kernels::pixel_shuffle_forward(x.data(), 1, s[0], s[1], r);
    Tensor::new(&[s[0] / r, s[1] * r], out)
}

/// Inverse of [`pixel_shuffle_1d`].
pub fn pixel_unshuffle_1d<S: Real>(y: &Tensor<S>, r: usize) -> Result<Tensor<S>> {
    let s = y.shape();
    if s.len() != 2 || r == 0 || s[1] % r != 0 {
        return Err(Error::invalid(format!("pixel unshuffle of {s:?} by {r}")));
    }
    let out = kernels::pixel_unshuffle(y.data(), 1, s[0] * r, s[1] / r, r);
    Tensor::new(&[s[0] * r, s[1] / r], out)
}

/// Per-channel normalization over time of `x [C, T]`, no affine terms.
pub fn instance_norm<S: Real>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    if s.len() != 2 || s[1] < 2 {
        return Err(Error::invalid(format!("instance norm needs [C, T>=2], got {s:?}")));
    }
    Tensor::new(s, kernels::instance_norm_forward(x.data(), s[1], IN_EPS).0)
}

/// Bank of 1-d convolutions with kernel sizes `1..=K` ("same" padding), each
/// producing `branch` channels; outputs are concatenated, then LeakyReLU and
/// instance norm.
#[derive(Clone, Debug)]
pub struct ConvBank {
    branches: Vec<Conv1d>,
    slope: f64,
}

impl ConvBank {
    pub fn new(pb: &mut ParamBuilder<'_>, c_in: usize, branch: usize, k: usize, slope: f64) -> Self {
        let branches = (1..=k).map(|ks| Conv1d::new(pb, &format!("bank{ks}"), c_in, branch, ConvGeom::same_1d(ks))).collect();
        Self { branches, slope }
    }

    pub fn branches(&self) -> &[Conv1d] {
        &self.branches
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let outs = self.branches.iter().map(|c| c.forward(t, p, x)).collect::<Result<Vec<_>>>()?;
        let cat = t.concat(&outs)?;
        let act = t.leaky_relu(cat, self.slope);
        t.instance_norm(act, IN_EPS)
    }
}

/// Runs a conv bank on one `[C, T]` sequence.
pub fn conv_bank<S: Real>(bank: &ConvBank, params: &ParamSet<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::invalid(format!("conv bank input must be [C, T], got {s:?}")));
    }
    let mut t = Tape::new();
    let p = params.bind(&mut t, false);
    let xv = t.constant(x.reshape(&[1, s[0], s[1]])?);
    let y = bank.forward(&mut t, &p, xv)?;
    let ys = t.shape(y).to_vec();
    t.value(y).reshape(&ys[1..])
}

/// `LReLU(conv)` helper used by several blocks.
pub(crate) fn conv_act<S: Real>(t: &mut Tape<S>, p: &Bound, c: &Conv1d, x: Var, slope: f64) -> Result<Var> {
    let y = c.forward(t, p, x)?;
    Ok(t.leaky_relu(y, slope))
}
