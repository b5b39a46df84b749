//! Scalar abstraction shared by every numeric kernel.
//!
//! All forward and backward kernels are written once against [`Real`]. Running
//! them with `f64` gives high-precision gradients for finite-difference checks;
//! running them with [`Dual`] numbers differentiates the backward pass itself
//! (forward-over-reverse), which is how the gradient-penalty parameter
//! gradient is obtained exactly.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

/// Mutable strided matrix view.
pub struct MatMut<'a, S> {
    pub data: &'a mut [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

impl<'a, S> MatRef<'a, S> {
    /// Row-major contiguous `rows x cols` view.
    pub fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    /// Transposed view (no copy).
    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn check(&self) {
        assert!(span(self.rows, self.cols, self.rs, self.cs) <= self.data.len(), "matrix view out of bounds");
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S
    where
        S: Copy,
    {
        self.data[r * self.rs as usize + c * self.cs as usize]
    }
}

impl<'a, S> MatMut<'a, S> {
    pub fn new(data: &'a mut [S], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    fn check(&self) {
        assert!(span(self.rows, self.cols, self.rs, self.cs) <= self.data.len(), "matrix view out of bounds");
    }
}

pub trait Real:
    Copy
    + Default
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn from_f64(v: f64) -> Self;
    /// Primal value; used for branching (ReLU masks, max-shifts) and reporting.
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;

    /// `c = a·b` (or `c += a·b` when `accumulate`).
    fn gemm(a: MatRef<'_, Self>, b: MatRef<'_, Self>, c: MatMut<'_, Self>, accumulate: bool);

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    #[inline]
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }
    #[inline]
    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.value().is_finite()
    }
}

fn check_dims<S>(a: &MatRef<'_, S>, b: &MatRef<'_, S>, c: &MatMut<'_, S>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    assert_eq!(a.rows, c.rows, "gemm row mismatch");
    assert_eq!(b.cols, c.cols, "gemm column mismatch");
    a.check();
    b.check();
    c.check();
}

macro_rules! impl_float_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn value(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }

            fn gemm(a: MatRef<'_, Self>, b: MatRef<'_, Self>, c: MatMut<'_, Self>, accumulate: bool) {
                check_dims(&a, &b, &c);
                if c.rows == 0 || c.cols == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                if a.cols == 0 {
                    if !accumulate {
                        for r in 0..c.rows {
                            for k in 0..c.cols {
                                c.data[r * c.rs as usize + k * c.cs as usize] = 0.0;
                            }
                        }
                    }
                    return;
                }
                // SAFETY: all three views were bounds-checked against their slices above,
                // and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        a.rows, a.cols, b.cols, 1.0, a.data.as_ptr(), a.rs, a.cs, b.data.as_ptr(), b.rs, b.cs,
                        beta, c.data.as_mut_ptr(), c.rs, c.cs,
                    );
                }
            }
        }
    };
}

impl_float_real!(f32, matrixmultiply::sgemm);
impl_float_real!(f64, matrixmultiply::dgemm);

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Self { re, eps: T::zero() }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.re;
        let re = self.re * inv;
        Self { re, eps: (self.eps - re * o.eps) * inv }
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { re: -self.re, eps: -self.eps }
    }
}

impl<T: Real> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Real> DivAssign for Dual<T> {
    #[inline]
    fn div_assign(&mut self, o: Self) {
        *self = *self / o;
    }
}

fn split<T: Real>(m: &MatRef<'_, Dual<T>>) -> (Vec<T>, Vec<T>) {
    let mut re = Vec::with_capacity(m.rows * m.cols);
    let mut eps = Vec::with_capacity(m.rows * m.cols);
    for r in 0..m.rows {
        for c in 0..m.cols {
            let v = m.at(r, c);
            re.push(v.re);
            eps.push(v.eps);
        }
    }
    (re, eps)
}

impl<T: Real> Real for Dual<T> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    #[inline]
    fn value(self) -> f64 {
        self.re.value()
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self { re: e, eps: self.eps * e }
    }
    #[inline]
    fn ln(self) -> Self {
        Self { re: self.re.ln(), eps: self.eps / self.re }
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self { re: s, eps: self.eps / (T::from_f64(2.0) * s) }
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self { re: t, eps: self.eps * (T::one() - t * t) }
    }

    /// Three real products: `re = Ar·Br`, `eps = Ar·Be + Ae·Br`.
    fn gemm(a: MatRef<'_, Self>, b: MatRef<'_, Self>, c: MatMut<'_, Self>, accumulate: bool) {
        check_dims(&a, &b, &c);
        let (m, k, n) = (a.rows, a.cols, b.cols);
        let (ar, ae) = split(&a);
        let (br, be) = split(&b);
        let mut cr = vec![T::zero(); m * n];
        let mut ce = vec![T::zero(); m * n];
        T::gemm(MatRef::new(&ar, m, k), MatRef::new(&br, k, n), MatMut::new(&mut cr, m, n), false);
        T::gemm(MatRef::new(&ar, m, k), MatRef::new(&be, k, n), MatMut::new(&mut ce, m, n), false);
        T::gemm(MatRef::new(&ae, m, k), MatRef::new(&br, k, n), MatMut::new(&mut ce, m, n), true);
        for r in 0..m {
            for col in 0..n {
                let idx = r * c.rs as usize + col * c.cs as usize;
                let v = Dual { re: cr[r * n + col], eps: ce[r * n + col] };
                if accumulate {
                    c.data[idx] += v;
                } else {
                    c.data[idx] = v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_including_transposed_views() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|v| (v as f64).sin()).collect();
        let mut c = vec![0.0; 15];
        f64::gemm(MatRef::new(&a, 3, 4), MatRef::new(&b, 4, 5), MatMut::new(&mut c, 3, 5), false);
        for (x, y) in c.iter().zip(naive(&a, &b, 3, 4, 5)) {
            assert!((x - y).abs() < 1e-12);
        }

        // (Bᵀ)ᵀ through a transposed view of a column-major copy
        let mut bt = vec![0.0; 20];
        for r in 0..4 {
            for col in 0..5 {
                bt[col * 4 + r] = b[r * 5 + col];
            }
        }
        let mut c2 = vec![1.0; 15];
        f64::gemm(MatRef::new(&a, 3, 4), MatRef::new(&bt, 5, 4).t(), MatMut::new(&mut c2, 3, 5), true);
        for (x, y) in c2.iter().zip(c.iter()) {
            assert!((x - y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_arithmetic_derivatives() {
        let x = Dual::new(0.7f64, 1.0);
        let y = (x * x).exp() / x.sqrt() + x.tanh() - x.ln();
        let f = |v: f64| (v * v).exp() / v.sqrt() + v.tanh() - v.ln();
        let h = 1e-6;
        let fd = (f(0.7 + h) - f(0.7 - h)) / (2.0 * h);
        assert!((y.eps - fd).abs() < 1e-7);
        assert!((y.re - f(0.7)).abs() < 1e-15);
    }

    #[test]
    fn dual_gemm_is_product_rule() {
        let a: Vec<Dual<f64>> = (0..6).map(|i| Dual::new(i as f64, 1.0 - i as f64)).collect();
        let b: Vec<Dual<f64>> = (0..6).map(|i| Dual::new(0.5 * i as f64, 2.0)).collect();
        let mut c = vec![Dual::default(); 4];
        Dual::gemm(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 2), MatMut::new(&mut c, 2, 2), false);
        for i in 0..2 {
            for j in 0..2 {
                let mut want = Dual::default();
                for p in 0..3 {
                    want += a[i * 3 + p] * b[p * 2 + j];
                }
                assert!((c[i * 2 + j].re - want.re).abs() < 1e-12);
                assert!((c[i * 2 + j].eps - want.eps).abs() < 1e-12);
            }
        }
    }
}
