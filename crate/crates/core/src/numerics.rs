//! Dense row-major matrices and the handful of kernels the toy model needs,
//! each with an explicit backward.
//!
//! Every reduction runs in a fixed loop order so repeated runs produce
//! bit-identical results.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{dim_err, Error, Result};

/// Element type of a [`Matrix`]. Implemented for `f64` (the default) and `f32`.
pub trait Scalar: Float + Debug + Default + Sum + Send + Sync + 'static {
    fn of(v: f64) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
}

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T: Scalar = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return dim_err(format!("row {i} has {} columns, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: T, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + k * b;
        }
        Ok(())
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&mut self, v: &[T]) -> Result<()> {
        if v.len() != self.cols {
            return dim_err(format!("row vector of {} for {} columns", v.len(), self.cols));
        }
        for r in 0..self.rows {
            for (a, &b) in self.row_mut(r).iter_mut().zip(v) {
                *a = *a + b;
            }
        }
        Ok(())
    }

    /// Sum over rows, one value per column.
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o = *o + v;
            }
        }
        out
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return dim_err(format!("vstack of {} and {} columns", self.cols, other.cols));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return dim_err(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// A parameter tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradPair<T: Scalar = f64> {
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

impl<T: Scalar> GradPair<T> {
    pub fn new(value: Matrix<T>) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// `a · b`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return dim_err(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ`, the shape of a linear layer applied to row vectors.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return dim_err(format!(
            "matmul_nt {}x{} by ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    // The row-broadcast form of `matmul` vectorizes far better than
    // per-entry dot products.
    matmul(a, &b.transpose())
}

/// `aᵀ · b`, used to assemble weight gradients.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows != b.rows {
        return dim_err(format!(
            "matmul_tn ({}x{})ᵀ by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for t in 0..a.rows {
        let b_row = b.row(t);
        for i in 0..a.cols {
            let ati = a.data[t * a.cols + i];
            if ati == T::zero() {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &v) in out_row.iter_mut().zip(b_row) {
                *o = *o + ati * v;
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // Fixed 8-lane accumulation order: vectorizes and stays deterministic.
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |t, (&x, &y)| t + x * y);
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Saved statistics from a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T: Scalar = f64> {
    /// Normalized input before gain and bias.
    pub normalized: Matrix<T>,
    /// `1 / sqrt(var + eps)` per row.
    pub inv_std: Vec<T>,
}

pub fn layer_norm<T: Scalar>(
    x: &Matrix<T>,
    gain: &[T],
    bias: &[T],
    eps: T,
) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return dim_err(format!(
            "layer norm over {} columns with gain {} and bias {}",
            x.cols,
            gain.len(),
            bias.len()
        ));
    }
    if eps <= T::zero() {
        return Err(Error::Config("layer norm eps must be positive".into()));
    }
    let n = T::of(x.cols as f64);
    let mut normalized = Matrix::zeros(x.rows, x.cols);
    let mut out = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for c in 0..x.cols {
            let xh = (row[c] - mean) * is;
            normalized[(r, c)] = xh;
            out[(r, c)] = xh * gain[c] + bias[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(grad_x, grad_gain, grad_bias)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    grad_out: &Matrix<T>,
) -> Result<(Matrix<T>, Vec<T>, Vec<T>)> {
    let xh = &cache.normalized;
    if grad_out.shape() != xh.shape() || gain.len() != xh.cols {
        return dim_err("layer norm backward shape mismatch");
    }
    let n = T::of(xh.cols as f64);
    let mut grad_x = Matrix::zeros(xh.rows, xh.cols);
    let mut grad_gain = vec![T::zero(); xh.cols];
    let mut grad_bias = vec![T::zero(); xh.cols];
    let mut dxh = vec![T::zero(); xh.cols];
    for r in 0..xh.rows {
        let g = grad_out.row(r);
        let xr = xh.row(r);
        for c in 0..xh.cols {
            grad_gain[c] = grad_gain[c] + g[c] * xr[c];
            grad_bias[c] = grad_bias[c] + g[c];
            dxh[c] = g[c] * gain[c];
        }
        let mean_dxh = dxh.iter().copied().sum::<T>() / n;
        let mean_dxh_xh = dot(&dxh, xr) / n;
        let is = cache.inv_std[r];
        for c in 0..xh.cols {
            grad_x[(r, c)] = is * (dxh[c] - mean_dxh - xr[c] * mean_dxh_xh);
        }
    }
    Ok((grad_x, grad_gain, grad_bias))
}

/// Softmax along each row, stabilized by subtracting the row maximum.
pub fn row_softmax<T: Scalar>(x: &Matrix<T>) -> Result<Matrix<T>> {
    if !x.all_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let o = out.row_mut(r);
        let mut sum = T::zero();
        for (oc, &v) in o.iter_mut().zip(row) {
            *oc = (v - max).exp();
            sum = sum + *oc;
        }
        for oc in o.iter_mut() {
            *oc = *oc / sum;
        }
    }
    Ok(out)
}

/// Gradient of a loss w.r.t. softmax inputs given the softmax output `p`
/// and the gradient w.r.t. `p`.
pub fn row_softmax_backward<T: Scalar>(p: &Matrix<T>, grad_p: &Matrix<T>) -> Result<Matrix<T>> {
    if p.shape() != grad_p.shape() {
        return dim_err("softmax backward shape mismatch");
    }
    let mut out = Matrix::zeros(p.rows, p.cols);
    for r in 0..p.rows {
        let pr = p.row(r);
        let gr = grad_p.row(r);
        let inner = dot(pr, gr);
        for c in 0..p.cols {
            out[(r, c)] = pr[c] * (gr[c] - inner);
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood over the rows whose target is `Some`.
pub fn cross_entropy_loss<T: Scalar>(p: &Matrix<T>, targets: &[Option<usize>]) -> Result<T> {
    let count = check_targets(p, targets)?;
    let mut total = T::zero();
    for (r, t) in targets.iter().enumerate() {
        if let Some(j) = *t {
            total = total - p[(r, j)].ln();
        }
    }
    Ok(total / T::of(count as f64))
}

/// Gradient of [`cross_entropy_loss`] with respect to the pre-softmax logits.
pub fn cross_entropy_backward<T: Scalar>(
    p: &Matrix<T>,
    targets: &[Option<usize>],
) -> Result<Matrix<T>> {
    let count = check_targets(p, targets)?;
    let inv = T::one() / T::of(count as f64);
    let mut grad = Matrix::zeros(p.rows, p.cols);
    for (r, t) in targets.iter().enumerate() {
        if let Some(j) = *t {
            for c in 0..p.cols {
                grad[(r, c)] = p[(r, c)] * inv;
            }
            grad[(r, j)] = grad[(r, j)] - inv;
        }
    }
    Ok(grad)
}

fn check_targets<T: Scalar>(p: &Matrix<T>, targets: &[Option<usize>]) -> Result<usize> {
    if targets.len() != p.rows {
        return dim_err(format!(
            "{} targets for {} distribution rows",
            targets.len(),
            p.rows
        ));
    }
    let mut count = 0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(j) = *t {
            if j >= p.cols {
                return Err(Error::Index(format!(
                    "target {j} at row {r} outside vocabulary of {}",
                    p.cols
                )));
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("no unmasked target positions".into()));
    }
    Ok(count)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(0.044715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + T::of(3.0) * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn matmul_examples() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
        assert_eq!(matmul(&Matrix::zeros(2, 2), &m).unwrap(), Matrix::zeros(2, 2));
        let v = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        assert_eq!(matmul(&m, &v).unwrap().data(), &[17.0, 39.0]);
        assert!(matches!(matmul(&v, &v), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(3, 5, &mut rng);
        let b = random(4, 5, &mut rng);
        let c = random(3, 4, &mut rng);
        let nt = matmul_nt(&a, &b).unwrap();
        assert!(nt.max_abs_diff(&matmul(&a, &b.transpose()).unwrap()).unwrap() < 1e-14);
        let tn = matmul_tn(&a, &c).unwrap();
        assert!(tn.max_abs_diff(&matmul(&a.transpose(), &c).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn matmul_identity_and_distributivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random(4, 4, &mut rng);
            let b = random(4, 4, &mut rng);
            let c = random(4, 4, &mut rng);
            let i = Matrix::identity(4);
            assert!(matmul(&a, &i).unwrap().max_abs_diff(&a).unwrap() <= 1e-12);
            assert!(matmul(&i, &a).unwrap().max_abs_diff(&a).unwrap() <= 1e-12);
            let lhs = matmul(&a, &b.add(&c).unwrap()).unwrap();
            let rhs = matmul(&a, &b).unwrap().add(&matmul(&a, &c).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0, 1.0];
        let zeros = [0.0, 0.0];
        let constant = Matrix::from_rows(&[vec![3.0, 3.0]]).unwrap();
        let (y, _) = layer_norm(&constant, &ones, &zeros, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);

        // mean 0, variance 1: output equals input as eps -> 0
        let x = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let (y, _) = layer_norm(&x, &ones, &zeros, 1e-12).unwrap();
        assert!((y[(0, 0)] - 1.0).abs() < 1e-9 && (y[(0, 1)] + 1.0).abs() < 1e-9);

        let (y, _) = layer_norm(&x, &zeros, &[0.7, 0.7], LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.7, 0.7]);

        assert!(matches!(
            layer_norm(&x, &[1.0], &zeros, LAYER_NORM_EPS),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(5, 16, &mut rng).scale(4.0);
        let (_, cache) = layer_norm(&x, &[1.0; 16], &[0.0; 16], 1e-12).unwrap();
        for r in 0..5 {
            let row = cache.normalized.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_examples() {
        let z = row_softmax(&Matrix::<f64>::zeros(1, 5)).unwrap();
        assert!(z.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let big = row_softmax(&Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap()).unwrap();
        assert!(big.all_finite() && (big[(0, 0)] - 1.0).abs() < 1e-12 && big[(0, 1)] < 1e-300);
        let r = row_softmax(&Matrix::from_rows(&[vec![1f64.ln(), 3f64.ln()]]).unwrap()).unwrap();
        assert!((r[(0, 0)] - 0.25).abs() < 1e-12 && (r[(0, 1)] - 0.75).abs() < 1e-12);
        let bad = Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(row_softmax(&bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = random(3, 7, &mut rng).scale(10.0);
            let p = row_softmax(&x).unwrap();
            for r in 0..3 {
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
            let mut shifted = x.clone();
            for r in 0..3 {
                let k = rng.random_range(-5.0..5.0);
                shifted.row_mut(r).iter_mut().for_each(|v| *v += k);
            }
            let q = row_softmax(&shifted).unwrap();
            assert!(p.max_abs_diff(&q).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy_loss(&onehot, &[Some(1), Some(0)]).unwrap(), 0.0);
        let uniform = Matrix::filled(3, 4, 0.25);
        let l = cross_entropy_loss(&uniform, &[Some(0), Some(3), Some(2)]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let p = Matrix::from_rows(&[vec![0.25, 0.75]]).unwrap();
        assert!((cross_entropy_loss(&p, &[Some(1)]).unwrap() + 0.75f64.ln()).abs() < 1e-12);
        assert!(matches!(cross_entropy_loss(&p, &[Some(2)]), Err(Error::Index(_))));
    }

    #[test]
    fn cross_entropy_masks_positions() {
        let p = Matrix::from_rows(&[vec![0.25, 0.75], vec![0.5, 0.5]]).unwrap();
        let l = cross_entropy_loss(&p, &[None, Some(0)]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let g = cross_entropy_backward(&p, &[None, Some(0)]).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    // Central differences of a scalar function of one matrix.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(analytic: &Matrix, numeric: &Matrix) {
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            assert!(
                rel_err(*a, *n) <= 1e-5 || (a - n).abs() < 1e-9,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(3, 6, &mut rng);
        let gain: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..1.5)).collect();
        let bias: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w = random(3, 6, &mut rng);
        let loss = |x: &Matrix, gain: &[f64], bias: &[f64]| {
            let (y, _) = layer_norm(x, gain, bias, LAYER_NORM_EPS).unwrap();
            dot(y.data(), w.data())
        };
        let (_, cache) = layer_norm(&x, &gain, &bias, LAYER_NORM_EPS).unwrap();
        let (gx, gg, gb) = layer_norm_backward(&cache, &gain, &w).unwrap();
        assert_grad_close(&gx, &numeric_grad(&x, |x| loss(x, &gain, &bias)));
        let gain_m = Matrix::from_vec(1, 6, gain.clone()).unwrap();
        let ng = numeric_grad(&gain_m, |g| loss(&x, g.data(), &bias));
        assert_grad_close(&Matrix::from_vec(1, 6, gg).unwrap(), &ng);
        let bias_m = Matrix::from_vec(1, 6, bias.clone()).unwrap();
        let nb = numeric_grad(&bias_m, |b| loss(&x, &gain, b.data()));
        assert_grad_close(&Matrix::from_vec(1, 6, gb).unwrap(), &nb);
    }

    #[test]
    fn softmax_and_cross_entropy_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(4, 5, &mut rng).scale(3.0);
        let w = random(4, 5, &mut rng);
        let p = row_softmax(&x).unwrap();
        let g = row_softmax_backward(&p, &w).unwrap();
        let n = numeric_grad(&x, |x| dot(row_softmax(x).unwrap().data(), w.data()));
        assert_grad_close(&g, &n);

        let targets = [Some(1), None, Some(4), Some(0)];
        let g = cross_entropy_backward(&p, &targets).unwrap();
        let n = numeric_grad(&x, |x| {
            cross_entropy_loss(&row_softmax(x).unwrap(), &targets).unwrap()
        });
        assert_grad_close(&g, &n);
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let n = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(rel_err(gelu_grad(x), n) < 1e-6 || (gelu_grad(x) - n).abs() < 1e-9);
        }
    }

    #[test]
    fn f32_matrices_work() {
        let a: Matrix<f32> = Matrix::identity(3);
        let b = Matrix::<f32>::from_fn(3, 2, |r, c| (r * 2 + c) as f32);
        assert_eq!(matmul(&a, &b).unwrap(), b);
        let p = row_softmax(&Matrix::<f32>::zeros(1, 4)).unwrap();
        assert!((p[(0, 0)] - 0.25).abs() < 1e-7);
    }
}
