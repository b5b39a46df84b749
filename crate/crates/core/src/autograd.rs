//! Reverse-mode tape. Every op records its inputs and whatever it needs for
//! the backward pass; [`Tape::backward`] walks the tape once in reverse.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims, ConvGeom, GruCache, GruDims, GruWeights};
use crate::real::{MatMut, MatRef, Real};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    /// `b` is `[C]` (shared over batch) or `[B, C]`; broadcast over trailing dims.
    AddChannel { x: Var, b: Var },
    Gather { table: Var, idx: Vec<usize> },
    Conv { x: Var, w: Var, b: Option<Var>, dims: ConvDims, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    LeakyRelu { x: Var, slope: f64 },
    InstanceNorm { x: Var, rstd: Vec<S>, len: usize },
    PixelShuffle { x: Var, r: usize },
    AvgPool2 { x: Var },
    Upsample2 { x: Var },
    Concat { xs: Vec<Var> },
    Dropout { x: Var, mask: Vec<S> },
    Gru { x: Var, w: [Var; 4], dims: GruDims, reverse: bool, cache: GruCache<S> },
    MeanTime { x: Var },
    Reshape { x: Var },
    Mean { x: Var },
    AbsDiffMean { a: Var, b: Var },
    SoftmaxNll { logits: Var, labels: Vec<usize>, probs: Vec<S> },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Grads<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Real> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

fn shape_err(what: &str, detail: String) -> Error {
    Error::InvalidArgument(format!("{what}: {detail}"))
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, shape: &[usize], data: Vec<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.needs(i));
        let value = Tensor::new(shape, data).expect("op produced inconsistent shape");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(what, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Vec<S> {
        self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let d = self.zip(a, b, |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(&shape, d, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let d = self.zip(a, b, |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(&shape, d, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let d = self.zip(a, b, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(&shape, d, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = S::from_f64(s);
        let d = self.value(a).data().iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(&shape, d, Op::Scale(a, s), &[a])
    }

    /// Adds a per-channel vector (`[C]`) or per-item-per-channel matrix (`[B, C]`)
    /// to `x: [B, C, ...]`, broadcasting over the trailing axes.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() < 2 {
            return Err(shape_err("add_channel", format!("x must be at least 2-d, got {xs:?}")));
        }
        let ok = bs == [xs[1]] || bs == [xs[0], xs[1]];
        if !ok {
            return Err(shape_err("add_channel", format!("bias {bs:?} does not fit {xs:?}")));
        }
        let per_batch = bs.len() == 2;
        let inner: usize = xs[2..].iter().product();
        let (bsz, c) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(xv.len());
        for bi in 0..bsz {
            for ci in 0..c {
                let add = if per_batch { bv[bi * c + ci] } else { bv[ci] };
                out.extend(xv[(bi * c + ci) * inner..][..inner].iter().map(|&v| v + add));
            }
        }
        Ok(self.push(&xs, out, Op::AddChannel { x, b }, &[x, b]))
    }

    /// Row lookup: `table [N, D]`, one index per batch item → `[B, D]`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(shape_err("gather", format!("table must be 2-d, got {ts:?}")));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= ts[0]) {
            return Err(shape_err("gather", format!("index {bad} out of range for {} rows", ts[0])));
        }
        let tv = self.value(table).data();
        let out: Vec<S> = idx.iter().flat_map(|&i| tv[i * ts[1]..][..ts[1]].iter().copied()).collect();
        Ok(self.push(&[idx.len(), ts[1]], out, Op::Gather { table, idx: idx.to_vec() }, &[table]))
    }

    /// 1-d convolution: `x [B, Ci, T]`, `w [Co, Ci, K]`, `b [Co]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || ws[2] != geom.kw || geom.kh != 1 {
            return Err(shape_err("conv1d", format!("x {xs:?} w {ws:?} k {}", geom.kw)));
        }
        let (_, to) = geom
            .out_dims(1, xs[2])
            .ok_or_else(|| shape_err("conv1d", format!("input length {} shorter than kernel", xs[2])))?;
        let dims = ConvDims { batch: xs[0], c_in: xs[1], h: 1, w: xs[2], c_out: ws[0], ho: 1, wo: to };
        self.conv(x, w, b, dims, geom, vec![xs[0], ws[0], to])
    }

    /// 2-d convolution: `x [B, Ci, H, W]`, `w [Co, Ci, KH, KW]`, `b [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != geom.kh || ws[3] != geom.kw {
            return Err(shape_err("conv2d", format!("x {xs:?} w {ws:?}")));
        }
        let (ho, wo) =
            geom.out_dims(xs[2], xs[3]).ok_or_else(|| shape_err("conv2d", format!("input {xs:?} smaller than kernel")))?;
        let dims = ConvDims { batch: xs[0], c_in: xs[1], h: xs[2], w: xs[3], c_out: ws[0], ho, wo };
        self.conv(x, w, b, dims, geom, vec![xs[0], ws[0], ho, wo])
    }

    fn conv(&mut self, x: Var, w: Var, b: Option<Var>, dims: ConvDims, geom: ConvGeom, shape: Vec<usize>) -> Result<Var> {
        if let Some(bv) = b {
            if self.shape(bv) != [dims.c_out] {
                return Err(shape_err("conv", format!("bias {:?} for {} channels", self.shape(bv), dims.c_out)));
            }
        }
        let out = kernels::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|bv| self.value(bv).data()),
            &dims,
            &geom,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(&shape, out, Op::Conv { x, w, b, dims, geom }, &inputs))
    }

    /// `x [B, In]`, `w [Out, In]`, `b [Out]` → `[B, Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", format!("x {xs:?} w {ws:?}")));
        }
        if let Some(bv) = b {
            if self.shape(bv) != [ws[0]] {
                return Err(shape_err("linear", format!("bias {:?}", self.shape(bv))));
            }
        }
        let mut out = vec![S::zero(); xs[0] * ws[0]];
        S::gemm(
            MatRef::new(self.value(x).data(), xs[0], xs[1]),
            MatRef::new(self.value(w).data(), ws[0], ws[1]).t(),
            MatMut::new(&mut out, xs[0], ws[0]),
            false,
        );
        if let Some(bv) = b {
            let bd = self.value(bv).data();
            for row in out.chunks_exact_mut(ws[0]) {
                for (o, &bb) in row.iter_mut().zip(bd) {
                    *o += bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(&[xs[0], ws[0]], out, Op::Linear { x, w, b }, &inputs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = S::from_f64(slope);
        let d = self.value(x).data().iter().map(|&v| if v.value() > 0.0 { v } else { v * s }).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, d, Op::LeakyRelu { x, slope }, &[x])
    }

    /// Normalizes every `(item, channel)` slice of `x [B, C, ...]` to zero mean
    /// and unit (population) variance; no affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let len: usize = xs.get(2..).map_or(0, |r| r.iter().product());
        if xs.len() < 3 || len < 2 {
            return Err(shape_err("instance_norm", format!("needs [B, C, >=2 positions], got {xs:?}")));
        }
        let (y, rstd) = kernels::instance_norm_forward(self.value(x).data(), len, eps);
        Ok(self.push(&xs, y, Op::InstanceNorm { x, rstd, len }, &[x]))
    }

    /// `[B, C, T] -> [B, C/r, T·r]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || r == 0 || xs[1] % r != 0 {
            return Err(shape_err("pixel_shuffle", format!("{xs:?} with factor {r}")));
        }
        let y = kernels::pixel_shuffle_forward(self.value(x).data(), xs[0], xs[1], xs[2], r);
        Ok(self.push(&[xs[0], xs[1] / r, xs[2] * r], y, Op::PixelShuffle { x, r }, &[x]))
    }

    /// Pairwise time average: `[B, C, T] -> [B, C, T/2]`, T even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[2] % 2 != 0 {
            return Err(shape_err("avg_pool2", format!("{xs:?} needs an even time axis")));
        }
        let half = S::from_f64(0.5);
        let d = self.value(x).data().chunks_exact(2).map(|p| (p[0] + p[1]) * half).collect();
        Ok(self.push(&[xs[0], xs[1], xs[2] / 2], d, Op::AvgPool2 { x }, &[x]))
    }

    /// Nearest-neighbour ×2 along time.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(shape_err("upsample2", format!("{xs:?}")));
        }
        let d = self.value(x).data().iter().flat_map(|&v| [v, v]).collect();
        Ok(self.push(&[xs[0], xs[1], xs[2] * 2], d, Op::Upsample2 { x }, &[x]))
    }

    /// Concatenate along the channel axis (axis 1).
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        let inner: usize = first[2..].iter().product();
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(shape_err("concat", format!("{s:?} vs {first:?}")));
            }
        }
        let c_total: usize = xs.iter().map(|&v| self.shape(v)[1]).sum();
        let mut out = Vec::with_capacity(first[0] * c_total * inner);
        for b in 0..first[0] {
            for &v in xs {
                let c = self.shape(v)[1];
                out.extend_from_slice(&self.value(v).data()[b * c * inner..][..c * inner]);
            }
        }
        let mut shape = first;
        shape[1] = c_total;
        Ok(self.push(&shape, out, Op::Concat { xs: xs.to_vec() }, xs))
    }

    /// Multiplies by a precomputed (already rescaled) keep-mask.
    pub fn dropout(&mut self, x: Var, mask: Vec<S>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(shape_err("dropout", "mask length mismatch".into()));
        }
        let d = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(&shape, d, Op::Dropout { x, mask }, &[x]))
    }

    /// Single-direction GRU over `x [B, Ci, T]`; weights `[w_ih, w_hh, b_ih, b_hh]`
    /// shaped `[3H, Ci]`, `[3H, H]`, `[3H]`, `[3H]`. Returns all hidden states `[B, H, T]`.
    pub fn gru(&mut self, x: Var, w: [Var; 4], reverse: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let wih = self.shape(w[0]).to_vec();
        if xs.len() != 3 || wih.len() != 2 || wih[1] != xs[1] || wih[0] % 3 != 0 {
            return Err(shape_err("gru", format!("x {xs:?} w_ih {wih:?}")));
        }
        let hidden = wih[0] / 3;
        if self.shape(w[1]) != [3 * hidden, hidden] || self.shape(w[2]) != [3 * hidden] || self.shape(w[3]) != [3 * hidden] {
            return Err(shape_err("gru", "recurrent weight shapes".into()));
        }
        let dims = GruDims { batch: xs[0], c_in: xs[1], t: xs[2], hidden };
        let wt = GruWeights {
            w_ih: self.value(w[0]).data(),
            w_hh: self.value(w[1]).data(),
            b_ih: self.value(w[2]).data(),
            b_hh: self.value(w[3]).data(),
        };
        let (out, cache) = kernels::gru_forward(self.value(x).data(), &wt, &dims, reverse);
        let mut inputs = vec![x];
        inputs.extend(w);
        Ok(self.push(&[xs[0], hidden, xs[2]], out, Op::Gru { x, w, dims, reverse, cache }, &inputs))
    }

    /// `[B, C, T] -> [B, C]` time average.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[2] == 0 {
            return Err(shape_err("mean_time", format!("{xs:?}")));
        }
        let n = S::from_f64(xs[2] as f64);
        let d = self.value(x).data().chunks_exact(xs[2]).map(|c| kernels::sum(c) / n).collect();
        Ok(self.push(&[xs[0], xs[1]], d, Op::MeanTime { x }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let needs_grad = self.needs(x);
        self.nodes.push(Node { value: t, op: Op::Reshape { x }, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Mean of all elements → scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = kernels::sum(v.data()) / S::from_f64(v.len() as f64);
        self.push(&[], vec![m], Op::Mean { x }, &[x])
    }

    /// Mean absolute difference → scalar.
    pub fn abs_diff_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("abs_diff_mean", a, b)?;
        let n = S::from_f64(self.value(a).len() as f64);
        let total = self.zip(a, b, |x, y| (x - y).abs()).into_iter().fold(S::zero(), |acc, v| acc + v);
        Ok(self.push(&[], vec![total / n], Op::AbsDiffMean { a, b }, &[a, b]))
    }

    /// Mean over the batch of `-log softmax(logits)[label]` → scalar.
    pub fn softmax_nll(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(shape_err("softmax_nll", format!("logits {ls:?} for {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= ls[1]) {
            return Err(shape_err("softmax_nll", format!("label {bad} out of range for {} classes", ls[1])));
        }
        let (probs, loss) = softmax_nll_values(self.value(logits).data(), ls[1], labels);
        Ok(self.push(&[], vec![loss], Op::SoftmaxNll { logits, labels: labels.to_vec(), probs }, &[logits]))
    }

    pub fn backward(&self, out: Var) -> Grads<S> {
        let n = self.value(out).len();
        self.backward_seeded(out, vec![S::one(); n])
    }

    /// Vector-Jacobian product with an explicit seed for `out`.
    pub fn backward_seeded(&self, out: Var, seed: Vec<S>) -> Grads<S> {
        assert_eq!(seed.len(), self.value(out).len(), "seed length must match output");
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, g: Vec<S>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = g.iter().zip(self.value(*b).data()).map(|(&gv, &bv)| gv * bv).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = g.iter().zip(self.value(*a).data()).map(|(&gv, &av)| gv * av).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.iter().map(|&v| v * *s).collect()),
            Op::AddChannel { x, b } => {
                self.accumulate(grads, *x, g.to_vec());
                if self.needs(*b) {
                    let xs = self.shape(*x);
                    let (bsz, c) = (xs[0], xs[1]);
                    let inner: usize = xs[2..].iter().product();
                    let per_batch = self.shape(*b).len() == 2;
                    let mut db = vec![S::zero(); self.value(*b).len()];
                    for bi in 0..bsz {
                        for ci in 0..c {
                            let s = kernels::sum(&g[(bi * c + ci) * inner..][..inner]);
                            db[if per_batch { bi * c + ci } else { ci }] += s;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Gather { table, idx } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![S::zero(); self.value(*table).len()];
                for (row, &ti) in idx.iter().enumerate() {
                    for k in 0..d {
                        dt[ti * d + k] += g[row * d + k];
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::Conv { x, w, b, dims, geom } => {
                let need = (self.needs(*x), self.needs(*w), b.is_some_and(|bv| self.needs(bv)));
                let cg = kernels::conv_backward(self.value(*x).data(), self.value(*w).data(), g, dims, geom, need);
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = cg.dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(bv), Some(db)) = (b, cg.db) {
                    self.accumulate(grads, *bv, db);
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (bsz, din, dout) = (xs[0], xs[1], ws[0]);
                if self.needs(*x) {
                    let mut dx = vec![S::zero(); bsz * din];
                    S::gemm(
                        MatRef::new(g, bsz, dout),
                        MatRef::new(self.value(*w).data(), dout, din),
                        MatMut::new(&mut dx, bsz, din),
                        false,
                    );
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![S::zero(); dout * din];
                    S::gemm(
                        MatRef::new(g, bsz, dout).t(),
                        MatRef::new(self.value(*x).data(), bsz, din),
                        MatMut::new(&mut dw, dout, din),
                        false,
                    );
                    self.accumulate(grads, *w, dw);
                }
                if let Some(bv) = b {
                    let mut db = vec![S::zero(); dout];
                    for row in g.chunks_exact(dout) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    self.accumulate(grads, *bv, db);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let s = S::from_f64(*slope);
                let d = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| if xv.value() > 0.0 { gv } else { gv * s })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::InstanceNorm { x, rstd, len } => {
                let dx = kernels::instance_norm_backward(node.value.data(), rstd, g, *len);
                self.accumulate(grads, *x, dx);
            }
            Op::PixelShuffle { x, r } => {
                let xs = self.shape(*x);
                self.accumulate(grads, *x, kernels::pixel_unshuffle(g, xs[0], xs[1], xs[2], *r));
            }
            Op::AvgPool2 { x } => {
                let half = S::from_f64(0.5);
                self.accumulate(grads, *x, g.iter().flat_map(|&v| [v * half, v * half]).collect());
            }
            Op::Upsample2 { x } => {
                self.accumulate(grads, *x, g.chunks_exact(2).map(|p| p[0] + p[1]).collect());
            }
            Op::Concat { xs } => {
                let shape = &node.value.shape();
                let inner: usize = shape[2..].iter().product();
                let c_total = shape[1];
                let mut offset = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(shape[0] * c * inner);
                        for b in 0..shape[0] {
                            d.extend_from_slice(&g[(b * c_total + offset) * inner..][..c * inner]);
                        }
                        self.accumulate(grads, v, d);
                    }
                    offset += c;
                }
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect());
            }
            Op::Gru { x, w, dims, reverse, cache } => {
                let wt = GruWeights {
                    w_ih: self.value(w[0]).data(),
                    w_hh: self.value(w[1]).data(),
                    b_ih: self.value(w[2]).data(),
                    b_hh: self.value(w[3]).data(),
                };
                let gg = kernels::gru_backward(self.value(*x).data(), &wt, dims, *reverse, cache, g);
                self.accumulate(grads, *x, gg.dx);
                self.accumulate(grads, w[0], gg.dw_ih);
                self.accumulate(grads, w[1], gg.dw_hh);
                self.accumulate(grads, w[2], gg.db_ih);
                self.accumulate(grads, w[3], gg.db_hh);
            }
            Op::MeanTime { x } => {
                let t = self.shape(*x)[2];
                let inv = S::one() / S::from_f64(t as f64);
                self.accumulate(grads, *x, g.iter().flat_map(|&v| std::iter::repeat(v * inv).take(t)).collect());
            }
            Op::Reshape { x } => self.accumulate(grads, *x, g.to_vec()),
            Op::Mean { x } => {
                let n = self.value(*x).len();
                let v = g[0] / S::from_f64(n as f64);
                self.accumulate(grads, *x, vec![v; n]);
            }
            Op::AbsDiffMean { a, b } => {
                let n = S::from_f64(self.value(*a).len() as f64);
                let scale = g[0] / n;
                // subgradient 0 at equality
                let sign: Vec<S> = self
                    .zip(*a, *b, |x, y| {
                        let d = (x - y).value();
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            S::zero()
                        }
                    })
                    .into_iter()
                    .collect();
                if self.needs(*b) {
                    self.accumulate(grads, *b, sign.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, sign);
            }
            Op::SoftmaxNll { logits, labels, probs } => {
                let n = self.shape(*logits)[1];
                let scale = g[0] / S::from_f64(labels.len() as f64);
                let mut d: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                for (row, &l) in labels.iter().enumerate() {
                    d[row * n + l] -= scale;
                }
                self.accumulate(grads, *logits, d);
            }
        }
    }
}

/// Row-wise softmax probabilities and the mean negative log-likelihood of `labels`.
pub(crate) fn softmax_nll_values<S: Real>(logits: &[S], n: usize, labels: &[usize]) -> (Vec<S>, S) {
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = S::zero();
    for (row, &l) in logits.chunks_exact(n).zip(labels) {
        let mut m = row[0];
        for &v in row {
            if v.value() > m.value() {
                m = v;
            }
        }
        let z = row.iter().fold(S::zero(), |a, &v| a + (v - m).exp());
        let lse = m + z.ln();
        total += lse - row[l];
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    (probs, total / S::from_f64(labels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Compares tape gradients of `sum(out ⊙ probe)` against central differences.
    fn check(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |ins: &[Tensor<f64>], probe: Option<&Tensor<f64>>| -> (Tape<f64>, Vec<Var>, Var, Tensor<f64>) {
            let mut t = Tape::new();
            let vars: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone(), true)).collect();
            let out = build(&mut t, &vars);
            let shape = t.shape(out).to_vec();
            let probe = probe.cloned().unwrap_or_else(|| Tensor::from_fn(&shape, |i| ((i * 7919) % 13) as f64 / 6.0 - 1.0));
            (t, vars, out, probe)
        };
        let (tape, vars, out, probe) = eval(&inputs, None);
        let grads = tape.backward_seeded(out, probe.data().to_vec());
        let objective = |ins: &[Tensor<f64>]| {
            let (t, _, o, _) = eval(ins, Some(&probe));
            t.value(o).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).expect("gradient present");
            for _ in 0..12.min(x.len()) {
                let i = rng.gen_range(0..x.len());
                let h = 1e-6;
                let mut plus = inputs.clone();
                let mut d = plus[k].clone().into_vec();
                d[i] += h;
                plus[k] = Tensor::new(x.shape(), d.clone()).unwrap();
                let mut minus = inputs.clone();
                d[i] -= 2.0 * h;
                minus[k] = Tensor::new(x.shape(), d).unwrap();
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let err = (fd - analytic[i]).abs() / (fd.abs().max(analytic[i].abs()).max(1e-3));
                assert!(err < 1e-5, "input {k} elem {i}: fd {fd} vs analytic {}", analytic[i]);
            }
        }
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[2, 3, 4]);
        let b = rand_tensor(&mut rng, &[2, 3, 4]);
        check(vec![a.clone(), b.clone()], |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let m = t.mul(s, v[1]).unwrap();
            let d = t.sub(m, v[0]).unwrap();
            let r = t.leaky_relu(d, 0.2);
            t.scale(r, 1.5)
        });
    }

    #[test]
    fn conv1d_strided_and_same() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for geom in [ConvGeom::same_1d(4), ConvGeom::strided_1d(5, 2), ConvGeom::same_1d(1)] {
            let x = rand_tensor(&mut rng, &[2, 3, 8]);
            let w = rand_tensor(&mut rng, &[4, 3, geom.kw]);
            let b = rand_tensor(&mut rng, &[4]);
            check(vec![x, w, b], |t, v| t.conv1d(v[0], v[1], Some(v[2]), geom).unwrap());
        }
    }

    #[test]
    fn conv2d_stride2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 2, 7, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 5, 5]);
        let b = rand_tensor(&mut rng, &[3]);
        let geom = ConvGeom::square_2d(5, 2, 2);
        check(vec![x, w, b], |t, v| t.conv2d(v[0], v[1], Some(v[2]), geom).unwrap());
    }

    #[test]
    fn norm_shuffle_pool_upsample_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[2, 4, 6]);
        let y = rand_tensor(&mut rng, &[2, 2, 6]);
        check(vec![x, y], |t, v| {
            let n = t.instance_norm(v[0], 1e-5).unwrap();
            let c = t.concat(&[n, v[1]]).unwrap();
            let p = t.pixel_shuffle(c, 2).unwrap();
            let a = t.avg_pool2(p).unwrap();
            let u = t.upsample2(a).unwrap();
            t.mean_time(u).unwrap()
        });
    }

    #[test]
    fn gather_channel_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[3, 4, 5]);
        let table = rand_tensor(&mut rng, &[2, 4]);
        let bias = rand_tensor(&mut rng, &[4]);
        let w = rand_tensor(&mut rng, &[3, 20]);
        let lb = rand_tensor(&mut rng, &[3]);
        check(vec![x, table, bias, w, lb], |t, v| {
            let e = t.gather(v[1], &[1, 0, 1]).unwrap();
            let h = t.add_channel(v[0], e).unwrap();
            let h = t.add_channel(h, v[2]).unwrap();
            let f = t.reshape(h, &[3, 20]).unwrap();
            t.linear(f, v[3], Some(v[4])).unwrap()
        });
    }

    #[test]
    fn gru_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for reverse in [false, true] {
            let x = rand_tensor(&mut rng, &[2, 3, 5]);
            let ws = vec![
                x,
                rand_tensor(&mut rng, &[12, 3]),
                rand_tensor(&mut rng, &[12, 4]),
                rand_tensor(&mut rng, &[12]),
                rand_tensor(&mut rng, &[12]),
            ];
            check(ws, |t, v| t.gru(v[0], [v[1], v[2], v[3], v[4]], reverse).unwrap());
        }
    }

    #[test]
    fn losses_and_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[3, 4]);
        check(vec![a.clone(), b.clone()], |t, v| {
            let l1 = t.abs_diff_mean(v[0], v[1]).unwrap();
            let ce = t.softmax_nll(v[0], &[0, 3, 2]).unwrap();
            let s = t.add(l1, ce).unwrap();
            let dm = t.dropout(v[1], vec![2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
            let m = t.mean(dm);
            t.sub(s, m).unwrap()
        });
    }

    #[test]
    fn softmax_nll_values_match_hand_computation() {
        let (_, l) = softmax_nll_values(&[0.0f64, 3f64.ln()], 2, &[1]);
        assert!((l - (-(0.75f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Tensor::full(&[2, 2], 1.0));
        let p = t.leaf(Tensor::full(&[2, 2], 2.0), true);
        let m = t.mul(c, p).unwrap();
        let l = t.mean(m);
        let g = t.backward(l);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &[0.25; 4]);
    }
}
