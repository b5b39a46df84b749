//! Training objectives: reconstruction, speaker likelihood, the adversarial
//! autoencoder objective, the Wasserstein critic/generator pair, the gradient
//! penalty and the stage-2 totals. Also the per-step [`LossReport`].

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;

use crate::autograd::{softmax_nll_values, Tape, Var};
use crate::error::{Error, Result};
use crate::model::Discriminator;
use crate::nn::{Bound, ParamSet};
use crate::real::{Dual, Real};
use crate::tensor::Tensor;

pub const DEFAULT_GP_COEFF: f64 = 10.0;

/// Mean absolute error over all elements.
pub fn rec_loss<S: Real>(x: &Tensor<S>, x_rec: &Tensor<S>) -> Result<f64> {
    if x.shape() != x_rec.shape() {
        return Err(Error::invalid(format!("rec_loss shapes {:?} vs {:?}", x.shape(), x_rec.shape())));
    }
    let total: f64 = x.data().iter().zip(x_rec.data()).map(|(a, b)| (a.value() - b.value()).abs()).sum();
    Ok(total / x.len().max(1) as f64)
}

/// Mean over the batch of `−log softmax(logits)[label]`; `logits` is `[B, N]`.
pub fn speaker_nll<S: Real>(logits: &Tensor<S>, labels: &[usize]) -> Result<f64> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::invalid(format!("logits {s:?} for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::invalid(format!("label {bad} out of range for {} speakers", s[1])));
    }
    let logits: Vec<f64> = logits.data().iter().map(|v| v.value()).collect();
    Ok(softmax_nll_values(&logits, s[1], labels).1)
}

/// Encoder/decoder objective `rec − λ·cls1`.
pub fn ae_objective(rec: f64, cls1: f64, lambda: f64) -> f64 {
    rec - lambda * cls1
}

/// `(critic_adv, gen_adv)`: the critic minimizes `mean(fake) − mean(real)`,
/// the generator minimizes `−mean(fake)`.
pub fn critic_losses(score_real: &[f64], score_fake: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let fake = mean(score_fake);
    (fake - mean(score_real), -fake)
}

pub fn stage2_generator_total(gen_adv: f64, cls2_g: f64) -> f64 {
    gen_adv + cls2_g
}

pub fn stage2_discriminator_total(critic_adv: f64, gp: f64, cls2_d: f64, gp_coeff: f64) -> f64 {
    critic_adv + gp_coeff * gp + cls2_d
}

/// A network producing one scalar score per batch item, usable with
/// [`gradient_penalty`]. Items must not interact inside the network.
pub trait Critic {
    /// Scores of shape `[B]` or `[B, 1]`.
    fn score<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var>;
}

impl Critic for Discriminator {
    fn score<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward(t, p, x)?.score)
    }
}

/// `u·real + (1−u)·fake` with one `u ~ U(0, 1)` per batch item.
pub fn interpolate<S: Real>(real: &Tensor<S>, fake: &Tensor<S>, rng: &mut impl Rng) -> Result<Tensor<S>> {
    if real.shape() != fake.shape() || real.shape().is_empty() {
        return Err(Error::invalid(format!("interpolation shapes {:?} vs {:?}", real.shape(), fake.shape())));
    }
    let per_item = real.len() / real.shape()[0];
    let u: Vec<f64> = (0..real.shape()[0]).map(|_| rng.gen::<f64>()).collect();
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let u = S::from_f64(u[i / per_item]);
            u * r + (S::one() - u) * f
        })
        .collect();
    Tensor::new(real.shape(), data)
}

/// Penalty value, per-item input-gradient norms and (optionally) the
/// penalty's gradient with respect to the critic parameters.
#[derive(Clone, Debug)]
pub struct Penalty<T> {
    pub value: f64,
    pub norms: Vec<f64>,
    pub param_grads: Option<Vec<Option<Vec<T>>>>,
}

/// `mean_b (‖∇ₓ score(x̂_b)‖₂ − 1)²` at the given points, unscaled.
///
/// The parameter gradient needs the derivative of an input gradient. It is
/// obtained as a directional derivative: with `v_b = ∂penalty/∂g_b`, the
/// parameter gradient of `Σ_b v_b·∇ₓ score(x̂_b)` equals the ε-part of the
/// parameter gradient of `Σ score(x̂ + ε·v)` evaluated in dual numbers.
pub fn penalty_at<T: Real, C: Critic>(
    critic: &C,
    params: &ParamSet<T>,
    x_hat: &Tensor<T>,
    with_param_grads: bool,
) -> Result<Penalty<T>> {
    let batch = *x_hat.shape().first().ok_or_else(|| Error::invalid("empty interpolation batch"))?;
    let per_item = x_hat.len() / batch.max(1);

    let mut tape = Tape::<T>::new();
    let p = params.bind(&mut tape, false);
    let x = tape.leaf(x_hat.clone(), true);
    let score = critic.score(&mut tape, &p, x)?;
    if tape.value(score).len() != batch {
        return Err(Error::invalid("critic must produce one score per item"));
    }
    let grads = tape.backward(score);
    let g: Vec<f64> = grads.get(x).map(|g| g.iter().map(|v| v.value()).collect()).unwrap_or(vec![0.0; x_hat.len()]);
    let norms: Vec<f64> = g.chunks(per_item).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let value = norms.iter().map(|n| (n - 1.0).powi(2)).sum::<f64>() / batch as f64;

    let param_grads = if with_param_grads {
        // ∂penalty/∂g_b = (2/B)·(‖g_b‖ − 1)·g_b/‖g_b‖
        let direction: Vec<T> = g
            .iter()
            .enumerate()
            .map(|(i, &gi)| {
                let n = norms[i / per_item];
                T::from_f64(if n > 0.0 { 2.0 / batch as f64 * (n - 1.0) * gi / n } else { 0.0 })
            })
            .collect();
        let mut tape = Tape::<Dual<T>>::new();
        let dual_params: ParamSet<Dual<T>> = params.cast();
        let p = dual_params.bind(&mut tape, true);
        let xd = x_hat.data().iter().zip(&direction).map(|(&re, &eps)| Dual::new(re, eps)).collect();
        let x = tape.constant(Tensor::new(x_hat.shape(), xd)?);
        let score = critic.score(&mut tape, &p, x)?;
        let mut grads = tape.backward(score);
        let out = p
            .grads(&mut grads)
            .into_iter()
            .map(|g| g.map(|g| g.into_iter().map(|d| d.eps).collect()))
            .collect();
        Some(out)
    } else {
        None
    };
    Ok(Penalty { value, norms, param_grads })
}

/// Gradient penalty on random interpolates of `real` and `fake`. The caller
/// applies the coefficient.
pub fn gradient_penalty<T: Real, C: Critic>(
    critic: &C,
    params: &ParamSet<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    rng: &mut impl Rng,
    with_param_grads: bool,
) -> Result<Penalty<T>> {
    let x_hat = interpolate(real, fake, rng)?;
    penalty_at(critic, params, &x_hat, with_param_grads)
}

/// Names of the logged quantities, in log order.
pub const LOSS_NAMES: [&str; 11] =
    ["rec", "cls1", "ae_total", "critic_adv", "gen_adv", "cls2_d", "cls2_g", "gp", "gen_total", "dis_total", "lambda"];

/// Named loss values of one logging step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub values: BTreeMap<String, f64>,
}

impl LossReport {
    pub fn new(step: u64) -> Self {
        Self { step, values: BTreeMap::new() }
    }

    pub fn set(&mut self, name: &str, value: f64) -> &mut Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// Fails with `non-finite-loss` naming the first offending entry.
    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite { name: name.clone(), step: self.step }),
            None => Ok(()),
        }
    }

    /// One `step<TAB>name<TAB>value` line per entry, in [`LOSS_NAMES`] order.
    pub fn write_lines(&self, w: &mut impl Write) -> Result<()> {
        for name in LOSS_NAMES {
            if let Some(v) = self.values.get(name) {
                writeln!(w, "{}\t{}\t{}", self.step, name, v)?;
            }
        }
        Ok(())
    }
}
