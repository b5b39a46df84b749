use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major array with shared, immutable storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Copy> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data: Arc::new(data) })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new((0..n).map(&mut f).collect()) }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        Self::from_fn(shape, |_| v)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Copy-on-write mutable access.
    pub fn data_mut(&mut self) -> &mut [S]
    where
        S: Clone,
    {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_vec(self) -> Vec<S>
    where
        S: Clone,
    {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }

    /// Same storage, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::invalid(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        Ok(Self { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    pub fn map<T: Copy>(&self, f: impl Fn(S) -> T) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: Arc::new(self.data.iter().map(|&v| f(v)).collect()) }
    }
}

impl<S: Real> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn scalar(v: S) -> Self {
        Self { shape: vec![], data: Arc::new(vec![v]) }
    }

    /// Converts through the primal value; dual parts are dropped.
    pub fn cast<T: Real>(&self) -> Tensor<T> {
        self.map(|v| T::from_f64(v.value()))
    }

    pub fn item(&self) -> f64 {
        self.data[0].value()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
