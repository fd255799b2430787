use ecgtl_core::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::float::Float;

/// Feature maps stored channel-major: `[C, N, H, W]`.
///
/// With this layout a convolution's GEMM output is already the next
/// layer's input and each batch-norm channel is one contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Feat<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Float> Feat<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Feat {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    /// Converts a row-major `[N, C, H, W]` batch.
    pub fn from_nchw(n: usize, c: usize, h: usize, w: usize, src: &[f32]) -> Result<Self> {
        if src.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "batch of {} values is not {n}x{c}x{h}x{w}",
                src.len()
            )));
        }
        let hw = h * w;
        let mut out = Self::zeros(c, n, h, w);
        for ni in 0..n {
            for ci in 0..c {
                let s = &src[(ni * c + ci) * hw..][..hw];
                let d = &mut out.data[(ci * n + ni) * hw..][..hw];
                for (d, s) in d.iter_mut().zip(s) {
                    *d = T::of(*s as f64);
                }
            }
        }
        Ok(out)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Values of one channel across the batch.
    pub fn channel(&self, c: usize) -> &[T] {
        let m = self.n * self.plane();
        &self.data[c * m..(c + 1) * m]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }
}

/// Row-major matrix, used for `[batch, features]` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Float> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Row-wise softmax, computed in f64.
    pub fn softmax(&self) -> Mat<f64> {
        let mut out = Mat::<f64>::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let dst = &mut out.data[r * self.cols..(r + 1) * self.cols];
            let mut sum = 0.0;
            for (d, v) in dst.iter_mut().zip(row) {
                *d = (v.f64() - max).exp();
                sum += *d;
            }
            dst.iter_mut().for_each(|d| *d /= sum);
        }
        out
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                (0..self.cols).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect()
    }
}

/// A learnable tensor or a persistent buffer (which keeps an empty `grad`).
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Float> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        let n = value.len();
        debug_assert_eq!(shape.iter().product::<usize>(), n);
        Param {
            shape,
            value,
            grad: vec![T::zero(); n],
        }
    }

    pub fn buffer(shape: Vec<usize>, value: Vec<T>) -> Self {
        Param {
            shape,
            value,
            grad: Vec::new(),
        }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n])
    }

    pub fn he_normal<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        Self::normal(shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
    }

    pub fn normal<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let value = (0..n).map(|_| T::of(dist.sample(rng))).collect();
        Self::new(shape, value)
    }

    pub fn is_buffer(&self) -> bool {
        self.grad.is_empty() && !self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nchw_to_cnhw() {
        // n=2, c=2, h=1, w=2
        let src = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let f = Feat::<f32>::from_nchw(2, 2, 1, 2, &src).unwrap();
        assert_eq!(f.data, vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        assert!(Feat::<f32>::from_nchw(2, 2, 1, 3, &src).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = Mat {
            rows: 2,
            cols: 3,
            data: vec![1000.0f32, 0.0, -1000.0, 0.1, 0.2, 0.3],
        };
        let s = m.softmax();
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.argmax_rows(), vec![0, 2]);
    }
}
