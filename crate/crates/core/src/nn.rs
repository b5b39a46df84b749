//! Parameter storage, the layer building blocks shared by all networks, and Adam.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter arrays of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Real> Default for ParamSet<S> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<S: Real> ParamSet<S> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<S>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<T: Real>(&self) -> ParamSet<T> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Registers every array as a tape leaf. `trainable = false` makes them
    /// constants so no gradient flows into this network.
    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect() }
    }

    /// Replaces arrays by name; every name must exist with the same shape.
    pub fn load_from(&mut self, other: &ParamSet<S>) -> Result<()> {
        if other.names != self.names {
            return Err(Error::ConfigMismatch("parameter names differ".into()));
        }
        for (mine, theirs) in self.tensors.iter_mut().zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::ConfigMismatch(format!("shape {:?} vs {:?}", mine.shape(), theirs.shape())));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<S>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }
}

/// Tape variables for one bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter, in [`ParamSet`] order.
    pub fn grads<S: Real>(&self, grads: &mut Grads<S>) -> Vec<Option<Vec<S>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

/// Initializes parameters into a [`ParamSet`] under a name prefix.
pub struct ParamBuilder<'a> {
    pub set: &'a mut ParamSet<f32>,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(set: &'a mut ParamSet<f32>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { set, rng, prefix: String::new() }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut ParamBuilder<'_>) -> R) -> R {
        let prefix = format!("{}{name}.", self.prefix);
        let mut inner = ParamBuilder { set: self.set, rng: self.rng, prefix };
        f(&mut inner)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound) as f32);
        self.set.push(format!("{}{name}", self.prefix), t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std) as f32
        });
        self.set.push(format!("{}{name}", self.prefix), t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.set.push(format!("{}{name}", self.prefix), Tensor::zeros(shape))
    }
}

/// Draws a dropout keep-mask scaled by `1/(1-p)`.
pub fn dropout_mask<S: Real>(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<S> {
    let keep = S::from_f64(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep }).collect()
}

/// Per-forward state: the dropout RNG (training) or none (inference).
pub struct Mode<'a> {
    pub dropout: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Mode<'a> {
    pub fn eval() -> Self {
        Self { dropout: None }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self { dropout: Some(rng) }
    }

    pub fn apply_dropout<S: Real>(&mut self, tape: &mut Tape<S>, x: Var, p: f64) -> Result<Var> {
        match self.dropout.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                let mask = dropout_mask(rng, tape.value(x).len(), p);
                tape.dropout(x, mask)
            }
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    w: ParamId,
    b: ParamId,
    geom: ConvGeom,
}

impl Conv1d {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize, geom: ConvGeom) -> Self {
        let bound = 1.0 / ((c_in * geom.kw) as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w: pb.uniform("weight", &[c_out, c_in, geom.kw], bound),
            b: pb.uniform("bias", &[c_out], bound),
            geom,
        })
    }

    /// Same layer with all parameters initialized to zero.
    pub fn zeroed(pb: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize, geom: ConvGeom) -> Self {
        pb.scoped(name, |pb| Self {
            w: pb.zeros("weight", &[c_out, c_in, geom.kw]),
            b: pb.zeros("bias", &[c_out]),
            geom,
        })
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        t.conv1d(x, p.var(self.w), Some(p.var(self.b)), self.geom)
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    geom: ConvGeom,
}

impl Conv2d {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize, geom: ConvGeom) -> Self {
        let bound = 1.0 / ((c_in * geom.kh * geom.kw) as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w: pb.uniform("weight", &[c_out, c_in, geom.kh, geom.kw], bound),
            b: pb.uniform("bias", &[c_out], bound),
            geom,
        })
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        t.conv2d(x, p.var(self.w), Some(p.var(self.b)), self.geom)
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        pb.scoped(name, |pb| Self { w: pb.uniform("weight", &[d_out, d_in], bound), b: pb.uniform("bias", &[d_out], bound) })
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        t.linear(x, p.var(self.w), Some(p.var(self.b)))
    }
}

/// Single-direction GRU layer.
#[derive(Clone, Debug)]
pub struct Gru {
    w: [ParamId; 4],
    reverse: bool,
}

impl Gru {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, c_in: usize, hidden: usize, reverse: bool) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        pb.scoped(name, |pb| Self {
            w: [
                pb.uniform("w_ih", &[3 * hidden, c_in], bound),
                pb.uniform("w_hh", &[3 * hidden, hidden], bound),
                pb.uniform("b_ih", &[3 * hidden], bound),
                pb.uniform("b_hh", &[3 * hidden], bound),
            ],
            reverse,
        })
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        t.gru(x, self.w.map(|id| p.var(id)), self.reverse)
    }
}

/// Bidirectional GRU whose two directions are either summed or concatenated.
#[derive(Clone, Debug)]
pub struct BiGru {
    fwd: Gru,
    bwd: Gru,
    merge: Merge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Merge {
    Sum,
    Concat,
}

impl BiGru {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, c_in: usize, hidden: usize, merge: Merge) -> Self {
        pb.scoped(name, |pb| Self {
            fwd: Gru::new(pb, "fwd", c_in, hidden, false),
            bwd: Gru::new(pb, "bwd", c_in, hidden, true),
            merge,
        })
    }

    pub fn forward<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var) -> Result<Var> {
        let f = self.fwd.forward(t, p, x)?;
        let b = self.bwd.forward(t, p, x)?;
        match self.merge {
            Merge::Sum => t.add(f, b),
            Merge::Concat => t.concat(&[f, b]),
        }
    }
}

/// Per-speaker table; the looked-up row is broadcast-added over time.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
}

impl Embedding {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, rows: usize, dim: usize) -> Self {
        Self { table: pb.normal(name, &[rows, dim], 1.0), rows }
    }

    pub fn condition<S: Real>(&self, t: &mut Tape<S>, p: &Bound, x: Var, labels: &[usize]) -> Result<Var> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.rows) {
            return Err(Error::invalid(format!("unknown speaker id {bad} (table has {})", self.rows)));
        }
        let e = t.gather(p.var(self.table), labels)?;
        t.add_channel(x, e)
    }

    pub fn table(&self) -> ParamId {
        self.table
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.9, eps: 1e-8 }
    }
}

/// Adam state for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn update(&mut self, params: &mut ParamSet<f32>, grads: &[Option<Vec<f32>>]) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let step_size = (self.cfg.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.cfg.eps as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        for (k, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let data = params.tensors_mut()[k].data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                data[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut set = ParamSet::<f32>::default();
        let id = set.push("x", Tensor::new(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(AdamConfig { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, &set);
        for _ in 0..2000 {
            let g: Vec<f32> = set.get(id).data().iter().map(|&x| 2.0 * (x - 1.0)).collect();
            opt.update(&mut set, &[Some(g)]);
        }
        for &x in set.get(id).data() {
            assert!((x - 1.0).abs() < 1e-2, "{x}");
        }
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut set = ParamSet::<f32>::default();
        set.push("x", Tensor::new(&[1], vec![0.0]).unwrap());
        let mut opt = Adam::new(AdamConfig::default(), &set);
        opt.update(&mut set, &[Some(vec![123.0])]);
        let x = set.get(ParamId(0)).data()[0];
        assert!((x + 1e-4).abs() < 1e-7, "{x}");
    }

    #[test]
    fn dropout_mask_rescales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m: Vec<f64> = dropout_mask(&mut rng, 20_000, 0.5);
        let kept = m.iter().filter(|&&v| v > 0.0).count() as f64 / m.len() as f64;
        assert!((kept - 0.5).abs() < 0.02);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn embedding_rejects_unknown_speaker() {
        let mut set = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = Embedding::new(&mut ParamBuilder::new(&mut set, &mut rng), "emb", 2, 3);
        let mut t = Tape::<f32>::new();
        let p = set.bind(&mut t, true);
        let x = t.constant(Tensor::zeros(&[1, 3, 4]));
        assert!(matches!(emb.condition(&mut t, &p, x, &[2]), Err(Error::InvalidArgument(_))));
    }
}
