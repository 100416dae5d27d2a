//! Dense NCHW tensors, the kernels the network needs, and a reverse-mode
//! gradient tape over them.

mod conv;
pub mod dft;
mod graph;
pub mod kernels;
mod par;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use graph::{Gradients, Graph, Var};

/// Scalar type a tensor can hold. `f32` is the working precision; `f64` is the
/// shadow precision used for tight gradient checks.
pub trait Element:
    Float + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Element for f32 {}
impl Element for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape4::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(d: [usize; 4]) -> Self {
        Shape4::new(d[0], d[1], d[2], d[3])
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape4 { c, ..self }
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Shape4 { h, w, ..self }
    }
}

impl Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Row-major 4-D array in (batch, channel, height, width) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Element> Tensor4<T> {
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        ensure_dim("Tensor4::from_vec", "data length", shape.numel(), data.len())?;
        Ok(Tensor4 { shape, data })
    }

    pub fn full(shape: Shape4, v: T) -> Self {
        Tensor4 {
            shape,
            data: vec![v; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape4) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape4::scalar(), v)
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape4, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64_lossy(z * std)
            })
            .collect();
        Tensor4 { shape, data }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: Shape4, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(rng.gen_range(lo..hi)))
            .collect();
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: Shape4) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other, op)?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.ensure_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Element>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn ensure_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        ensure_dim(op, "batch", self.shape.n, other.shape.n)?;
        ensure_dim(op, "channels", self.shape.c, other.shape.c)?;
        ensure_dim(op, "height", self.shape.h, other.shape.h)?;
        ensure_dim(op, "width", self.shape.w, other.shape.w)
    }

    /// Channels `[start, start + len)` as a new tensor.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if start + len > s.c {
            return Err(Error::Shape {
                op: "channel_slice",
                dim: "channels",
                expected: s.c,
                actual: start + len,
            });
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Ok(Tensor4 {
            shape: s.with_c(len),
            data,
        })
    }

    pub fn split_channels(&self, parts: usize) -> Result<Vec<Self>> {
        if parts == 0 || !self.shape.c.is_multiple_of(parts) {
            return Err(Error::Config(format!(
                "cannot split {} channels into {} equal parts",
                self.shape.c, parts
            )));
        }
        let len = self.shape.c / parts;
        (0..parts).map(|i| self.channel_slice(i * len, len)).collect()
    }

    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?
            .shape;
        for t in parts {
            ensure_dim("concat_channels", "batch", first.n, t.shape.n)?;
            ensure_dim("concat_channels", "height", first.h, t.shape.h)?;
            ensure_dim("concat_channels", "width", first.w, t.shape.w)?;
        }
        let c: usize = parts.iter().map(|t| t.shape.c).sum();
        let p = first.plane();
        let mut data = Vec::with_capacity(first.n * c * p);
        for n in 0..first.n {
            for t in parts {
                let len = t.shape.c * p;
                data.extend_from_slice(&t.data[n * len..(n + 1) * len]);
            }
        }
        Ok(Tensor4 {
            shape: first.with_c(c),
            data,
        })
    }
}
