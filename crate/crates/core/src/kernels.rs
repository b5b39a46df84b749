//! Forward/backward kernels on raw slices. Layouts are row-major:
//! sequences are `[B, C, T]`, images `[B, C, H, W]`.

use crate::real::{MatMut, MatRef, Real};

/// 2-d convolution geometry; 1-d convolutions use `H = 1`, `kh = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    /// (before, after) padding along H
    pub pad_h: (usize, usize),
    /// (before, after) padding along W
    pub pad_w: (usize, usize),
}

impl ConvGeom {
    /// 1-d "same" convolution (asymmetric for even kernels: extra pad on the right).
    pub fn same_1d(k: usize) -> Self {
        Self { kh: 1, kw: k, stride_h: 1, stride_w: 1, pad_h: (0, 0), pad_w: ((k - 1) / 2, k / 2) }
    }

    pub fn strided_1d(k: usize, stride: usize) -> Self {
        Self { stride_w: stride, ..Self::same_1d(k) }
    }

    pub fn square_2d(k: usize, stride: usize, pad: usize) -> Self {
        Self { kh: k, kw: k, stride_h: stride, stride_w: stride, pad_h: (pad, pad), pad_w: (pad, pad) }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let hp = h + self.pad_h.0 + self.pad_h.1;
        let wp = w + self.pad_w.0 + self.pad_w.1;
        if hp < self.kh || wp < self.kw {
            return None;
        }
        Some(((hp - self.kh) / self.stride_h + 1, (wp - self.kw) / self.stride_w + 1))
    }
}

/// Input dims of a convolution call.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    fn patch(&self, g: &ConvGeom) -> usize {
        self.c_in * g.kh * g.kw
    }
    fn cols(&self) -> usize {
        self.batch * self.ho * self.wo
    }
}

fn im2col<S: Real>(x: &[S], d: &ConvDims, g: &ConvGeom) -> Vec<S> {
    let ncols = d.cols();
    let plane = d.ho * d.wo;
    let mut cols = vec![S::zero(); d.patch(g) * ncols];
    for b in 0..d.batch {
        for ci in 0..d.c_in {
            let xin = &x[(b * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
            for kh in 0..g.kh {
                for kw in 0..g.kw {
                    let row = (ci * g.kh + kh) * g.kw + kw;
                    let dst = &mut cols[row * ncols + b * plane..][..plane];
                    for oh in 0..d.ho {
                        let ih = (oh * g.stride_h + kh) as isize - g.pad_h.0 as isize;
                        if ih < 0 || ih as usize >= d.h {
                            continue;
                        }
                        let src = &xin[ih as usize * d.w..][..d.w];
                        let drow = &mut dst[oh * d.wo..][..d.wo];
                        for (ow, slot) in drow.iter_mut().enumerate() {
                            let iw = (ow * g.stride_w + kw) as isize - g.pad_w.0 as isize;
                            if iw >= 0 && (iw as usize) < d.w {
                                *slot = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<S: Real>(cols: &[S], d: &ConvDims, g: &ConvGeom, dx: &mut [S]) {
    let ncols = d.cols();
    let plane = d.ho * d.wo;
    for b in 0..d.batch {
        for ci in 0..d.c_in {
            let xin = &mut dx[(b * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
            for kh in 0..g.kh {
                for kw in 0..g.kw {
                    let row = (ci * g.kh + kh) * g.kw + kw;
                    let src = &cols[row * ncols + b * plane..][..plane];
                    for oh in 0..d.ho {
                        let ih = (oh * g.stride_h + kh) as isize - g.pad_h.0 as isize;
                        if ih < 0 || ih as usize >= d.h {
                            continue;
                        }
                        for ow in 0..d.wo {
                            let iw = (ow * g.stride_w + kw) as isize - g.pad_w.0 as isize;
                            if iw >= 0 && (iw as usize) < d.w {
                                xin[ih as usize * d.w + iw as usize] += src[oh * d.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_forward<S: Real>(x: &[S], w: &[S], bias: Option<&[S]>, d: &ConvDims, g: &ConvGeom) -> Vec<S> {
    let cols = im2col(x, d, g);
    let ncols = d.cols();
    let plane = d.ho * d.wo;
    let mut tmp = vec![S::zero(); d.c_out * ncols];
    S::gemm(
        MatRef::new(w, d.c_out, d.patch(g)),
        MatRef::new(&cols, d.patch(g), ncols),
        MatMut::new(&mut tmp, d.c_out, ncols),
        false,
    );
    let mut out = vec![S::zero(); d.batch * d.c_out * plane];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let bv = bias.map_or(S::zero(), |bb| bb[co]);
            let src = &tmp[co * ncols + b * plane..][..plane];
            let dst = &mut out[(b * d.c_out + co) * plane..][..plane];
            for (o, &s) in dst.iter_mut().zip(src) {
                *o = s + bv;
            }
        }
    }
    out
}

pub struct ConvGrads<S> {
    pub dx: Option<Vec<S>>,
    pub dw: Option<Vec<S>>,
    pub db: Option<Vec<S>>,
}

pub fn conv_backward<S: Real>(
    x: &[S],
    w: &[S],
    dout: &[S],
    d: &ConvDims,
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<S> {
    let ncols = d.cols();
    let plane = d.ho * d.wo;
    let patch = d.patch(g);
    let mut dtmp = vec![S::zero(); d.c_out * ncols];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            dtmp[co * ncols + b * plane..][..plane].copy_from_slice(&dout[(b * d.c_out + co) * plane..][..plane]);
        }
    }
    let dw = need.1.then(|| {
        let cols = im2col(x, d, g);
        let mut dw = vec![S::zero(); d.c_out * patch];
        S::gemm(
            MatRef::new(&dtmp, d.c_out, ncols),
            MatRef::new(&cols, patch, ncols).t(),
            MatMut::new(&mut dw, d.c_out, patch),
            false,
        );
        dw
    });
    let db = need.2.then(|| (0..d.c_out).map(|co| sum(&dtmp[co * ncols..][..ncols])).collect());
    let dx = need.0.then(|| {
        let mut dcols = vec![S::zero(); patch * ncols];
        S::gemm(
            MatRef::new(w, d.c_out, patch).t(),
            MatRef::new(&dtmp, d.c_out, ncols),
            MatMut::new(&mut dcols, patch, ncols),
            false,
        );
        let mut dx = vec![S::zero(); d.batch * d.c_in * d.h * d.w];
        col2im(&dcols, d, g, &mut dx);
        dx
    });
    ConvGrads { dx, dw, db }
}

pub fn sum<S: Real>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |a, &b| a + b)
}

/// Instance normalization over each contiguous group of `len` values.
/// Returns the normalized values and each group's reciprocal standard deviation.
pub fn instance_norm_forward<S: Real>(x: &[S], len: usize, eps: f64) -> (Vec<S>, Vec<S>) {
    let n = S::from_f64(len as f64);
    let eps = S::from_f64(eps);
    let mut y = vec![S::zero(); x.len()];
    let mut rstds = Vec::with_capacity(x.len() / len);
    for (xs, ys) in x.chunks_exact(len).zip(y.chunks_exact_mut(len)) {
        let mean = sum(xs) / n;
        let var = xs.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let rstd = S::one() / (var + eps).sqrt();
        for (o, &v) in ys.iter_mut().zip(xs) {
            *o = (v - mean) * rstd;
        }
        rstds.push(rstd);
    }
    (y, rstds)
}

pub fn instance_norm_backward<S: Real>(y: &[S], rstd: &[S], dy: &[S], len: usize) -> Vec<S> {
    let n = S::from_f64(len as f64);
    let mut dx = vec![S::zero(); y.len()];
    for (g, ((ys, dys), dxs)) in y.chunks_exact(len).zip(dy.chunks_exact(len)).zip(dx.chunks_exact_mut(len)).enumerate() {
        let mean_dy = sum(dys) / n;
        let mean_dyy = ys.iter().zip(dys).fold(S::zero(), |a, (&yv, &d)| a + yv * d) / n;
        for ((o, &yv), &d) in dxs.iter_mut().zip(ys).zip(dys) {
            *o = rstd[g] * (d - mean_dy - yv * mean_dyy);
        }
    }
    dx
}

/// `[B, C, T] -> [B, C/r, T·r]` with `out[c, t·r + j] = x[c·r + j, t]`.
pub fn pixel_shuffle_forward<S: Copy + Default>(x: &[S], batch: usize, c: usize, t: usize, r: usize) -> Vec<S> {
    let co = c / r;
    let mut out = vec![S::default(); x.len()];
    for b in 0..batch {
        for oc in 0..co {
            for j in 0..r {
                let src = &x[(b * c + oc * r + j) * t..][..t];
                let dst = &mut out[(b * co + oc) * t * r..][..t * r];
                for (ti, &v) in src.iter().enumerate() {
                    dst[ti * r + j] = v;
                }
            }
        }
    }
    out
}

/// Inverse rearrangement of [`pixel_shuffle_forward`]; also its backward pass.
pub fn pixel_unshuffle<S: Copy + Default>(y: &[S], batch: usize, c: usize, t: usize, r: usize) -> Vec<S> {
    let co = c / r;
    let mut out = vec![S::default(); y.len()];
    for b in 0..batch {
        for oc in 0..co {
            for j in 0..r {
                let src = &y[(b * co + oc) * t * r..][..t * r];
                let dst = &mut out[(b * c + oc * r + j) * t..][..t];
                for (ti, o) in dst.iter_mut().enumerate() {
                    *o = src[ti * r + j];
                }
            }
        }
    }
    out
}

/// GRU weights for one direction; gate order is (reset, update, new).
pub struct GruWeights<'a, S> {
    pub w_ih: &'a [S],
    pub w_hh: &'a [S],
    pub b_ih: &'a [S],
    pub b_hh: &'a [S],
}

/// Saved activations for the backward pass, each `[T][3H or H, B]` in processing order.
#[derive(Clone, Debug, Default)]
pub struct GruCache<S> {
    gates: Vec<Vec<S>>,
    gh_n: Vec<Vec<S>>,
    h_prev: Vec<Vec<S>>,
}

#[derive(Clone, Copy, Debug)]
pub struct GruDims {
    pub batch: usize,
    pub c_in: usize,
    pub t: usize,
    pub hidden: usize,
}

/// `[B, C, T] -> [C, B·T]`
fn to_channel_major<S: Copy + Default>(x: &[S], batch: usize, c: usize, t: usize) -> Vec<S> {
    let mut out = vec![S::default(); x.len()];
    for b in 0..batch {
        for ci in 0..c {
            out[ci * batch * t + b * t..][..t].copy_from_slice(&x[(b * c + ci) * t..][..t]);
        }
    }
    out
}

fn from_channel_major<S: Copy + Default>(x: &[S], batch: usize, c: usize, t: usize) -> Vec<S> {
    let mut out = vec![S::default(); x.len()];
    for b in 0..batch {
        for ci in 0..c {
            out[(b * c + ci) * t..][..t].copy_from_slice(&x[ci * batch * t + b * t..][..t]);
        }
    }
    out
}

fn time_order(t: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    }
}

pub fn gru_forward<S: Real>(x: &[S], wt: &GruWeights<'_, S>, d: &GruDims, reverse: bool) -> (Vec<S>, GruCache<S>) {
    let (bsz, h, t) = (d.batch, d.hidden, d.t);
    let bt = bsz * t;
    let xc = to_channel_major(x, bsz, d.c_in, t);
    let mut gi = vec![S::zero(); 3 * h * bt];
    S::gemm(MatRef::new(wt.w_ih, 3 * h, d.c_in), MatRef::new(&xc, d.c_in, bt), MatMut::new(&mut gi, 3 * h, bt), false);
    let mut out = vec![S::zero(); h * bt];
    let mut cache = GruCache::default();
    let mut hp = vec![S::zero(); h * bsz];
    for &ti in &time_order(t, reverse) {
        let mut gh = vec![S::zero(); 3 * h * bsz];
        S::gemm(MatRef::new(wt.w_hh, 3 * h, h), MatRef::new(&hp, h, bsz), MatMut::new(&mut gh, 3 * h, bsz), false);
        let mut gates = vec![S::zero(); 3 * h * bsz];
        let mut ghn = vec![S::zero(); h * bsz];
        let mut hn = vec![S::zero(); h * bsz];
        for j in 0..h {
            for b in 0..bsz {
                let gi_at = |g: usize| gi[(g * h + j) * bt + b * t + ti] + wt.b_ih[g * h + j];
                let gh_at = |g: usize| gh[(g * h + j) * bsz + b] + wt.b_hh[g * h + j];
                let r = (gi_at(0) + gh_at(0)).sigmoid();
                let z = (gi_at(1) + gh_at(1)).sigmoid();
                let ghn_v = gh_at(2);
                let n = (gi_at(2) + r * ghn_v).tanh();
                let hprev = hp[j * bsz + b];
                let hv = (S::one() - z) * n + z * hprev;
                gates[j * bsz + b] = r;
                gates[(h + j) * bsz + b] = z;
                gates[(2 * h + j) * bsz + b] = n;
                ghn[j * bsz + b] = ghn_v;
                hn[j * bsz + b] = hv;
                out[j * bt + b * t + ti] = hv;
            }
        }
        cache.gates.push(gates);
        cache.gh_n.push(ghn);
        cache.h_prev.push(std::mem::replace(&mut hp, hn));
    }
    (from_channel_major(&out, bsz, h, t), cache)
}

pub struct GruGrads<S> {
    pub dx: Vec<S>,
    pub dw_ih: Vec<S>,
    pub dw_hh: Vec<S>,
    pub db_ih: Vec<S>,
    pub db_hh: Vec<S>,
}

pub fn gru_backward<S: Real>(
    x: &[S],
    wt: &GruWeights<'_, S>,
    d: &GruDims,
    reverse: bool,
    cache: &GruCache<S>,
    dout: &[S],
) -> GruGrads<S> {
    let (bsz, h, t) = (d.batch, d.hidden, d.t);
    let bt = bsz * t;
    let doc = to_channel_major(dout, bsz, h, t);
    let mut dgi = vec![S::zero(); 3 * h * bt];
    let mut dw_hh = vec![S::zero(); 3 * h * h];
    let mut db_hh = vec![S::zero(); 3 * h];
    let mut dh_next = vec![S::zero(); h * bsz];
    let order = time_order(t, reverse);
    for (step, &ti) in order.iter().enumerate().rev() {
        let gates = &cache.gates[step];
        let ghn = &cache.gh_n[step];
        let hprev = &cache.h_prev[step];
        let mut dgh = vec![S::zero(); 3 * h * bsz];
        let mut dh_prev = vec![S::zero(); h * bsz];
        for j in 0..h {
            for b in 0..bsz {
                let k = j * bsz + b;
                let (r, z, n) = (gates[k], gates[(h + j) * bsz + b], gates[(2 * h + j) * bsz + b]);
                let dh = doc[j * bt + b * t + ti] + dh_next[k];
                let dn = dh * (S::one() - z);
                let dz = dh * (hprev[k] - n);
                dh_prev[k] = dh * z;
                let da_n = dn * (S::one() - n * n);
                let dr = da_n * ghn[k];
                let da_r = dr * r * (S::one() - r);
                let da_z = dz * z * (S::one() - z);
                dgi[j * bt + b * t + ti] = da_r;
                dgi[(h + j) * bt + b * t + ti] = da_z;
                dgi[(2 * h + j) * bt + b * t + ti] = da_n;
                dgh[j * bsz + b] = da_r;
                dgh[(h + j) * bsz + b] = da_z;
                dgh[(2 * h + j) * bsz + b] = da_n * r;
            }
        }
        S::gemm(MatRef::new(&dgh, 3 * h, bsz), MatRef::new(hprev, h, bsz).t(), MatMut::new(&mut dw_hh, 3 * h, h), true);
        for (g, acc) in db_hh.iter_mut().enumerate() {
            *acc += sum(&dgh[g * bsz..][..bsz]);
        }
        S::gemm(MatRef::new(wt.w_hh, 3 * h, h).t(), MatRef::new(&dgh, 3 * h, bsz), MatMut::new(&mut dh_prev, h, bsz), true);
        dh_next = dh_prev;
    }
    let xc = to_channel_major(x, bsz, d.c_in, t);
    let mut dw_ih = vec![S::zero(); 3 * h * d.c_in];
    S::gemm(MatRef::new(&dgi, 3 * h, bt), MatRef::new(&xc, d.c_in, bt).t(), MatMut::new(&mut dw_ih, 3 * h, d.c_in), false);
    let db_ih = (0..3 * h).map(|g| sum(&dgi[g * bt..][..bt])).collect();
    let mut dxc = vec![S::zero(); d.c_in * bt];
    S::gemm(MatRef::new(wt.w_ih, 3 * h, d.c_in).t(), MatRef::new(&dgi, 3 * h, bt), MatMut::new(&mut dxc, d.c_in, bt), false);
    GruGrads { dx: from_channel_major(&dxc, bsz, d.c_in, t), dw_ih, dw_hh, db_ih, db_hh }
}
