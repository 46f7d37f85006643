//! Numeric primitives shared by every other module: seeded random streams,
//! the rank-3 feature tensor, a small row-major matrix, and the scalar
//! functions (softmax, log-sum-exp, quantiles, cross-entropy) used throughout.
//!
//! All arithmetic is `f64`.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SharcError};

/// Seeded, platform-independent random stream.
///
/// Streams derived from the same seed with different ids are independent;
/// the same `(seed, id)` pair always yields the same sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream keyed by `id`. Does not advance `self`.
    pub fn derive(&self, id: u64) -> Self {
        // Stream 0 is the parent; shift ids so derived streams never alias it.
        Self::with_stream(self.seed, id.wrapping_add(1))
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Dense `H x W x K` tensor, channels-last, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    h: usize,
    w: usize,
    k: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(h: usize, w: usize, k: usize) -> Self {
        Self {
            h,
            w,
            k,
            data: vec![0.0; h * w * k],
        }
    }

    pub fn from_vec(h: usize, w: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * k {
            return Err(SharcError::shape(
                format!("{} values for {h}x{w}x{k}", h * w * k),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SharcError::NonFinite("Tensor3::from_vec"));
        }
        Ok(Self { h, w, k, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.k)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        debug_assert!(i < self.h && j < self.w && c < self.k);
        (i * self.w + j) * self.k + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let idx = self.index(i, j, c);
        self.data[idx] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SharcError::shape(
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self^T * y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            axpy(yr, self.row(r), &mut out);
        }
        out
    }

    /// `self += alpha * u v^T`
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let s = alpha * ur;
            if s == 0.0 {
                continue;
            }
            axpy(s, v, self.row_mut(r));
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

pub fn softmax(v: &[f64], beta: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(SharcError::EmptyInput);
    }
    if !(beta > 0.0) {
        return Err(SharcError::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (beta * (x - max)).exp()).collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    Ok(out)
}

/// `beta^-1 * log(sum_i exp(beta * v_i))`, evaluated with max-subtraction.
pub fn lse(beta: f64, v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(SharcError::EmptyInput);
    }
    if !(beta > 0.0) {
        return Err(SharcError::InvalidArgument(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|x| (beta * (x - max)).exp()).sum();
    Ok(max + s.ln() / beta)
}

/// Nearest-rank lower quantile: element `floor(mu * (len - 1))` of the sorted values.
pub fn quantile_threshold(v: &[f64], mu: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(SharcError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(SharcError::InvalidArgument(format!(
            "quantile {mu} outside [0, 1]"
        )));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let idx = (mu * (sorted.len() - 1) as f64).floor() as usize;
    Ok(sorted[idx])
}

/// `-log softmax(logits)[label]`
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(SharcError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    Ok(lse(1.0, logits)? - logits[label])
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
