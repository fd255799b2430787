//! Layers with explicit backward passes.
//!
//! Training-mode `forward` calls keep what the matching `backward` needs;
//! `infer` is the cache-free path used for evaluation and frozen layers.
//! Gradients accumulate into [`Param::grad`].

use ecgtl_core::{Error, Result};
use rand::Rng;

use crate::float::{gemm, Float};
use crate::tensor::{Feat, Mat, Param};

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D convolution without bias (every convolution here feeds a batch norm).
/// Weight shape `[cout, cin, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    input: Option<Feat<T>>,
}

impl<T: Float> Conv2d<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        Conv2d {
            cin,
            cout,
            k,
            stride,
            pad,
            weight: Param::he_normal(vec![cout, cin, k, k], cin * k * k, rng),
            input: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h + 2 * self.pad < self.k || w + 2 * self.pad < self.k {
            return Err(Error::Shape(format!("{h}x{w} input is smaller than a {}x{} kernel", self.k, self.k)));
        }
        Ok((
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        ))
    }

    fn check(&self, x: &Feat<T>) -> Result<(usize, usize)> {
        if x.c != self.cin {
            return Err(Error::Shape(format!("convolution expects {} channels, got {}", self.cin, x.c)));
        }
        self.out_hw(x.h, x.w)
    }

    fn direct(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Rows `(ci, ky, kx)`, columns `(n, oy, ox)`.
    fn im2col(&self, x: &Feat<T>, ho: usize, wo: usize) -> Vec<T> {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let np = x.n * ho * wo;
        let mut cols = vec![T::zero(); x.c * k * k * np];
        for ci in 0..x.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * np..][..np];
                    for ni in 0..x.n {
                        let src = &x.data[(ci * x.n + ni) * x.h * x.w..][..x.h * x.w];
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let srow = &src[iy as usize * x.w..][..x.w];
                            let drow = &mut row[(ni * ho + oy) * wo..][..wo];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < x.w as isize {
                                    *d = srow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of `im2col`.
    fn col2im(&self, cols: &[T], dx: &mut Feat<T>, ho: usize, wo: usize) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let np = dx.n * ho * wo;
        let (h, w) = (dx.h, dx.w);
        for ci in 0..dx.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * np..][..np];
                    for ni in 0..dx.n {
                        let dst = &mut dx.data[(ci * dx.n + ni) * h * w..][..h * w];
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let drow = &mut dst[iy as usize * w..][..w];
                            let srow = &row[(ni * ho + oy) * wo..][..wo];
                            for (ox, v) in srow.iter().enumerate() {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    drow[ix as usize] += *v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn infer(&self, x: &Feat<T>) -> Result<Feat<T>> {
        let (ho, wo) = self.check(x)?;
        let np = x.n * ho * wo;
        let ckk = self.cin * self.k * self.k;
        let mut y = Feat::zeros(self.cout, x.n, ho, wo);
        if self.direct() {
            gemm(self.cout, ckk, np, T::one(), &self.weight.value, false, &x.data, false, T::zero(), &mut y.data);
        } else {
            let cols = self.im2col(x, ho, wo);
            gemm(self.cout, ckk, np, T::one(), &self.weight.value, false, &cols, false, T::zero(), &mut y.data);
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Feat<T>) -> Result<Feat<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates the weight gradient; returns the input gradient when asked.
    pub fn backward(&mut self, dy: &Feat<T>, need_dx: bool) -> Option<Feat<T>> {
        let x = self.input.take().expect("backward without a training forward");
        let (ho, wo) = (dy.h, dy.w);
        let np = x.n * ho * wo;
        let ckk = self.cin * self.k * self.k;
        let direct = self.direct();
        let cols = if direct { None } else { Some(self.im2col(&x, ho, wo)) };
        let cols_ref: &[T] = cols.as_deref().unwrap_or(&x.data);
        gemm(self.cout, np, ckk, T::one(), &dy.data, false, cols_ref, true, T::one(), &mut self.weight.grad);
        if !need_dx {
            return None;
        }
        let mut dx = Feat::zeros(x.c, x.n, x.h, x.w);
        if direct {
            gemm(ckk, self.cout, np, T::one(), &self.weight.value, true, &dy.data, false, T::zero(), &mut dx.data);
        } else {
            let mut dcols = cols.expect("lowered input");
            gemm(ckk, self.cout, np, T::one(), &self.weight.value, true, &dy.data, false, T::zero(), &mut dcols);
            self.col2im(&dcols, &mut dx, ho, wo);
        }
        Some(dx)
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum BnCache<T> {
    Train { xhat: Vec<T>, inv_std: Vec<f64> },
    Eval { scale: Vec<T> },
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub c: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(c: usize) -> Self {
        BatchNorm2d {
            c,
            gamma: Param::filled(vec![c], T::one()),
            beta: Param::filled(vec![c], T::zero()),
            running_mean: Param::buffer(vec![c], vec![T::zero(); c]),
            running_var: Param::buffer(vec![c], vec![T::one(); c]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn check(&self, x: &Feat<T>) -> Result<()> {
        if x.c != self.c {
            return Err(Error::Shape(format!("batch norm expects {} channels, got {}", self.c, x.c)));
        }
        Ok(())
    }

    fn eval_scale(&self) -> Vec<T> {
        (0..self.c)
            .map(|c| T::of(self.gamma.value[c].f64() / (self.running_var.value[c].f64() + self.eps).sqrt()))
            .collect()
    }

    pub fn infer(&self, x: &Feat<T>) -> Result<Feat<T>> {
        self.check(x)?;
        let scale = self.eval_scale();
        let mut y = x.clone();
        let m = x.n * x.plane();
        for c in 0..self.c {
            let shift = T::of(self.beta.value[c].f64() - scale[c].f64() * self.running_mean.value[c].f64());
            for v in &mut y.data[c * m..(c + 1) * m] {
                *v = *v * scale[c] + shift;
            }
        }
        Ok(y)
    }

    /// `train` uses batch statistics and updates the running ones.
    pub fn forward(&mut self, x: &Feat<T>, train: bool) -> Result<Feat<T>> {
        if !train {
            let y = self.infer(x)?;
            self.cache = Some(BnCache::Eval { scale: self.eval_scale() });
            return Ok(y);
        }
        self.check(x)?;
        let m = x.n * x.plane();
        if m < 2 {
            return Err(Error::Shape("batch norm needs more than one value per channel".into()));
        }
        let mut y = x.clone();
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = vec![0.0; self.c];
        for c in 0..self.c {
            let xs = x.channel(c);
            let mean = xs.iter().map(|v| v.f64()).sum::<f64>() / m as f64;
            let var = xs.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = is;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for ((yv, xh), xv) in y.data[c * m..(c + 1) * m]
                .iter_mut()
                .zip(&mut xhat[c * m..(c + 1) * m])
                .zip(xs)
            {
                *xh = T::of((xv.f64() - mean) * is);
                *yv = g * *xh + b;
            }
            let mom = self.momentum;
            let rm = &mut self.running_mean.value[c];
            *rm = T::of((1.0 - mom) * rm.f64() + mom * mean);
            let rv = &mut self.running_var.value[c];
            *rv = T::of((1.0 - mom) * rv.f64() + mom * var * m as f64 / (m - 1) as f64);
        }
        self.cache = Some(BnCache::Train { xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Feat<T>) -> Feat<T> {
        let cache = self.cache.take().expect("backward without a forward");
        let m = dy.n * dy.plane();
        let mut dx = dy.clone();
        match cache {
            BnCache::Eval { scale } => {
                for c in 0..self.c {
                    for v in &mut dx.data[c * m..(c + 1) * m] {
                        *v *= scale[c];
                    }
                }
            }
            BnCache::Train { xhat, inv_std } => {
                for c in 0..self.c {
                    let d = &dy.data[c * m..(c + 1) * m];
                    let xh = &xhat[c * m..(c + 1) * m];
                    let dbeta: f64 = d.iter().map(|v| v.f64()).sum();
                    let dgamma: f64 = d.iter().zip(xh).map(|(a, b)| a.f64() * b.f64()).sum();
                    self.gamma.grad[c] += T::of(dgamma);
                    self.beta.grad[c] += T::of(dbeta);
                    let k = self.gamma.value[c].f64() * inv_std[c] / m as f64;
                    for ((o, dv), x) in dx.data[c * m..(c + 1) * m].iter_mut().zip(d).zip(xh) {
                        *o = T::of(k * (m as f64 * dv.f64() - dbeta - x.f64() * dgamma));
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Activations and pooling
// ---------------------------------------------------------------------------

pub fn relu_inplace<T: Float>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` by the positive entries of the ReLU output `y`.
pub fn relu_backward<T: Float>(dy: &mut [T], y: &[T]) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Max pooling with -inf padding.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<((usize, usize, usize, usize), Vec<u32>)>,
}

impl MaxPool2d {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        MaxPool2d {
            k,
            stride,
            pad,
            cache: None,
        }
    }

    fn run<T: Float>(&self, x: &Feat<T>) -> Result<(Feat<T>, Vec<u32>)> {
        if x.h + 2 * self.pad < self.k || x.w + 2 * self.pad < self.k {
            return Err(Error::Shape(format!("{}x{} input too small for pooling", x.h, x.w)));
        }
        let ho = (x.h + 2 * self.pad - self.k) / self.stride + 1;
        let wo = (x.w + 2 * self.pad - self.k) / self.stride + 1;
        let mut y = Feat::zeros(x.c, x.n, ho, wo);
        let mut arg = vec![0u32; y.data.len()];
        let plane = x.plane();
        for img in 0..x.c * x.n {
            let src = &x.data[img * plane..][..plane];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut at = 0usize;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let i = iy as usize * x.w + ix as usize;
                            if src[i] > best {
                                best = src[i];
                                at = i;
                            }
                        }
                    }
                    let o = img * ho * wo + oy * wo + ox;
                    y.data[o] = best;
                    arg[o] = (img * plane + at) as u32;
                }
            }
        }
        Ok((y, arg))
    }

    pub fn infer<T: Float>(&self, x: &Feat<T>) -> Result<Feat<T>> {
        Ok(self.run(x)?.0)
    }

    pub fn forward<T: Float>(&mut self, x: &Feat<T>) -> Result<Feat<T>> {
        let (y, arg) = self.run(x)?;
        self.cache = Some(((x.c, x.n, x.h, x.w), arg));
        Ok(y)
    }

    pub fn backward<T: Float>(&mut self, dy: &Feat<T>) -> Feat<T> {
        let ((c, n, h, w), arg) = self.cache.take().expect("backward without a forward");
        let mut dx = Feat::zeros(c, n, h, w);
        for (d, &i) in dy.data.iter().zip(&arg) {
            dx.data[i as usize] += *d;
        }
        dx
    }
}

/// Spatial mean, producing `[N, C]`.
pub fn global_avg_pool<T: Float>(x: &Feat<T>) -> Mat<T> {
    let plane = x.plane();
    let mut out = Mat::zeros(x.n, x.c);
    for c in 0..x.c {
        for n in 0..x.n {
            let s: f64 = x.data[(c * x.n + n) * plane..][..plane].iter().map(|v| v.f64()).sum();
            out.data[n * x.c + c] = T::of(s / plane as f64);
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Float>(dy: &Mat<T>, h: usize, w: usize) -> Feat<T> {
    let (n, c) = (dy.rows, dy.cols);
    let plane = h * w;
    let mut dx = Feat::zeros(c, n, h, w);
    let inv = T::of(1.0 / plane as f64);
    for ci in 0..c {
        for ni in 0..n {
            let g = dy.data[ni * c + ci] * inv;
            dx.data[(ci * n + ni) * plane..][..plane].iter_mut().for_each(|v| *v = g);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Linear layer and loss
// ---------------------------------------------------------------------------

/// `y = x W^T + b`, weight `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub inp: usize,
    pub out: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Mat<T>>,
}

impl<T: Float> Linear<T> {
    /// Small-normal weights so that initial logits are close to uniform.
    pub fn new<R: Rng>(inp: usize, out: usize, rng: &mut R) -> Self {
        Linear {
            inp,
            out,
            weight: Param::normal(vec![out, inp], 0.01, rng),
            bias: Param::filled(vec![out], T::zero()),
            input: None,
        }
    }

    pub fn infer(&self, x: &Mat<T>) -> Result<Mat<T>> {
        if x.cols != self.inp {
            return Err(Error::Shape(format!("linear layer expects {} features, got {}", self.inp, x.cols)));
        }
        let mut y = Mat::zeros(x.rows, self.out);
        for r in 0..x.rows {
            y.data[r * self.out..(r + 1) * self.out].copy_from_slice(&self.bias.value);
        }
        gemm(x.rows, self.inp, self.out, T::one(), &x.data, false, &self.weight.value, true, T::one(), &mut y.data);
        Ok(y)
    }

    pub fn forward(&mut self, x: &Mat<T>) -> Result<Mat<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Mat<T>) -> Mat<T> {
        let x = self.input.take().expect("backward without a forward");
        gemm(self.out, dy.rows, self.inp, T::one(), &dy.data, true, &x.data, false, T::one(), &mut self.weight.grad);
        for r in 0..dy.rows {
            for (g, d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += *d;
            }
        }
        let mut dx = Mat::zeros(dy.rows, self.inp);
        gemm(dy.rows, self.out, self.inp, T::one(), &dy.data, false, &self.weight.value, false, T::zero(), &mut dx.data);
        dx
    }
}

/// Mean (optionally class-weighted) softmax cross-entropy and its gradient
/// with respect to the logits.
///
/// With weights the loss is `sum_i w[y_i] * -ln p_i[y_i] / sum_i w[y_i]`.
pub fn softmax_cross_entropy<T: Float>(
    logits: &Mat<T>,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Mat<T>)> {
    if labels.len() != logits.rows {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), logits.rows)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols) {
        return Err(Error::Data(format!("label {bad} out of range for {} classes", logits.cols)));
    }
    if let Some(w) = class_weights {
        if w.len() != logits.cols {
            return Err(Error::Config(format!("{} class weights for {} classes", w.len(), logits.cols)));
        }
    }
    let p = logits.softmax();
    let weight = |l: usize| class_weights.map_or(1.0, |w| w[l]);
    let total: f64 = labels.iter().map(|&l| weight(l)).sum();
    if total <= 0.0 {
        return Err(Error::Data("empty or zero-weight batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    for (r, &l) in labels.iter().enumerate() {
        let w = weight(l) / total;
        loss -= w * p.row(r)[l].max(1e-300).ln();
        for j in 0..logits.cols {
            let t = if j == l { 1.0 } else { 0.0 };
            grad.data[r * logits.cols + j] = T::of(w * (p.row(r)[j] - t));
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    fn random_feat(c: usize, n: usize, h: usize, w: usize, seed: u64) -> Feat<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Feat::zeros(c, n, h, w);
        f.data.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        f
    }

    /// Direct nested-loop convolution.
    fn naive_conv(conv: &Conv2d<f64>, x: &Feat<f64>) -> Feat<f64> {
        let (ho, wo) = conv.out_hw(x.h, x.w).unwrap();
        let mut y = Feat::zeros(conv.cout, x.n, ho, wo);
        for co in 0..conv.cout {
            for n in 0..x.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..conv.cin {
                            for ky in 0..conv.k {
                                for kx in 0..conv.k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        let xv = x.data[((ci * x.n + n) * x.h + iy as usize) * x.w + ix as usize];
                                        let wv = conv.weight.value[((co * conv.cin + ci) * conv.k + ky) * conv.k + kx];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        y.data[((co * x.n + n) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive() {
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (7, 2, 3), (1, 1, 0), (1, 2, 0)] {
            let conv = Conv2d::<f64>::new(3, 4, k, s, p, &mut rng());
            let x = random_feat(3, 2, 9, 7, 2);
            let got = conv.infer(&x).unwrap();
            let want = naive_conv(&conv, &x);
            assert!(got.same_shape(&want));
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), dy> = <x, conv^T(dy)> for the input gradient
        for (k, s, p) in [(3, 2, 1), (1, 1, 0)] {
            let mut conv = Conv2d::<f64>::new(2, 3, k, s, p, &mut rng());
            let x = random_feat(2, 2, 6, 6, 3);
            let y = conv.forward(&x).unwrap();
            let dy = random_feat(y.c, y.n, y.h, y.w, 4);
            let dx = conv.backward(&dy, true).unwrap();
            let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            // and for the weights, since the map is also linear in W
            let wl: f64 = conv.weight.value.iter().zip(&conv.weight.grad).map(|(a, b)| a * b).sum();
            assert!((lhs - wl).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let conv = Conv2d::<f32>::new(2, 3, 3, 1, 1, &mut rng());
        assert!(conv.infer(&Feat::zeros(1, 1, 4, 4)).is_err());
        assert!(conv.infer(&Feat::zeros(2, 1, 1, 1)).is_ok());
        let big = Conv2d::<f32>::new(1, 1, 7, 1, 0, &mut rng());
        assert!(big.infer(&Feat::zeros(1, 1, 4, 4)).is_err());
    }

    #[test]
    fn batchnorm_normalizes_and_tracks() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = random_feat(2, 4, 3, 3, 5);
        let y = bn.forward(&x, true).unwrap();
        for c in 0..2 {
            let ch = y.channel(c);
            let mean = ch.iter().sum::<f64>() / ch.len() as f64;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        let xm = x.channel(0).iter().sum::<f64>() / 36.0;
        assert!((bn.running_mean.value[0] - 0.1 * xm).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.running_mean.value[0] = 2.0;
        bn.running_var.value[0] = 4.0 - bn.eps;
        let x = Feat {
            c: 1,
            n: 1,
            h: 1,
            w: 2,
            data: vec![2.0, 6.0],
        };
        let y = bn.infer(&x).unwrap();
        assert!((y.data[0]).abs() < 1e-12 && (y.data[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let mut mp = MaxPool2d::new(3, 2, 1);
        let x = Feat {
            c: 1,
            n: 1,
            h: 4,
            w: 4,
            data: (0..16).map(|v| v as f64).collect(),
        };
        let y = mp.forward(&x).unwrap();
        assert_eq!((y.h, y.w), (2, 2));
        assert_eq!(y.data, vec![5.0, 7.0, 13.0, 15.0]);
        let dx = mp.backward(&Feat { data: vec![1.0; 4], ..y });
        assert_eq!(dx.data.iter().sum::<f64>(), 4.0);
        assert_eq!(dx.data[15], 1.0);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let logits = Mat::<f64>::zeros(4, 5);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 1, 2, 3], None).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        for r in 0..4 {
            assert!(grad.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(softmax_cross_entropy(&logits, &[0, 1, 2, 5], None).is_err());
    }

    #[test]
    fn weighted_cross_entropy_matches_definition() {
        let logits = Mat {
            rows: 3,
            cols: 2,
            data: vec![0.3, -0.2, 1.0, 0.5, -1.0, 2.0],
        };
        let labels = [0, 1, 1];
        let w = [2.0, 0.5];
        let (loss, _) = softmax_cross_entropy(&logits, &labels, Some(&w)).unwrap();
        let p = logits.softmax();
        let want = (2.0 * -p.row(0)[0].ln() + 0.5 * -p.row(1)[1].ln() + 0.5 * -p.row(2)[1].ln()) / 3.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn linear_gradients_by_finite_differences() {
        let mut lin = Linear::<f64>::new(3, 2, &mut rng());
        lin.weight.value.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.7).sin());
        let x = Mat {
            rows: 2,
            cols: 3,
            data: vec![0.1, -0.4, 0.9, 0.3, 0.2, -0.5],
        };
        let labels = [1, 0];
        let y = lin.forward(&x).unwrap();
        let (_, dy) = softmax_cross_entropy(&y, &labels, None).unwrap();
        lin.backward(&dy);
        let h = 1e-6;
        for i in 0..lin.weight.value.len() {
            let mut p = lin.clone();
            p.weight.value[i] += h;
            let lp = softmax_cross_entropy(&p.infer(&x).unwrap(), &labels, None).unwrap().0;
            p.weight.value[i] -= 2.0 * h;
            let lm = softmax_cross_entropy(&p.infer(&x).unwrap(), &labels, None).unwrap().0;
            assert!(((lp - lm) / (2.0 * h) - lin.weight.grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn gap_round_trip_shapes() {
        let x = random_feat(3, 2, 2, 2, 9);
        let m = global_avg_pool(&x);
        assert_eq!((m.rows, m.cols), (2, 3));
        let mean: f64 = x.data[..4].iter().sum::<f64>() / 4.0;
        assert!((m.data[0] - mean).abs() < 1e-12);
        let dx = global_avg_pool_backward(&m, 2, 2);
        assert!(dx.same_shape(&x));
    }
}
