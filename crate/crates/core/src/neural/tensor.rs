use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type of the runtime (`f32` for inference, `f64` for training).
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major `[time, channels]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor2D<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(Error::shape("ragged rows"));
            }
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.data[t * self.cols..(t + 1) * self.cols]
    }

    /// Concatenates along channels: `[a_t ++ b_t]` for each row.
    pub fn concat_cols(a: &Self, b: &Self) -> Result<Self> {
        if a.rows != b.rows {
            return Err(Error::shape(format!("row mismatch {} vs {}", a.rows, b.rows)));
        }
        let mut out = Self::zeros(a.rows, a.cols + b.cols);
        for t in 0..a.rows {
            let row = out.row_mut(t);
            row[..a.cols].copy_from_slice(a.row(t));
            row[a.cols..].copy_from_slice(b.row(t));
        }
        Ok(out)
    }

    /// Splits channels at `at` into two tensors.
    pub fn split_cols(&self, at: usize) -> (Self, Self) {
        let mut a = Self::zeros(self.rows, at);
        let mut b = Self::zeros(self.rows, self.cols - at);
        for t in 0..self.rows {
            a.row_mut(t).copy_from_slice(&self.row(t)[..at]);
            b.row_mut(t).copy_from_slice(&self.row(t)[at..]);
        }
        (a, b)
    }

    pub fn cast<U: Real>(&self) -> Tensor2D<U> {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += a · x`.
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y[i] = bias[i] + dot(w[i, ..], x)` for a row-major `rows × x.len()` matrix.
#[inline]
pub fn matvec<T: Real>(w: &[T], bias: Option<&[T]>, x: &[T], y: &mut [T]) {
    let cols = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        let d = dot(&w[i * cols..(i + 1) * cols], x);
        *yi = match bias {
            Some(b) => d + b[i],
            None => d,
        };
    }
}

/// `y += Wᵀ · d` for a row-major `d.len() × y.len()` matrix.
#[inline]
pub fn matvec_transposed_acc<T: Real>(w: &[T], d: &[T], y: &mut [T]) {
    let cols = y.len();
    for (i, &di) in d.iter().enumerate() {
        if di != T::zero() {
            axpy(di, &w[i * cols..(i + 1) * cols], y);
        }
    }
}

/// `G += d ⊗ x` for a row-major `d.len() × x.len()` gradient matrix.
#[inline]
pub fn outer_acc<T: Real>(d: &[T], x: &[T], g: &mut [T]) {
    let cols = x.len();
    for (i, &di) in d.iter().enumerate() {
        if di != T::zero() {
            axpy(di, x, &mut g[i * cols..(i + 1) * cols]);
        }
    }
}
