//! Dense double-precision linear algebra for the recurrent models.
//!
//! Matrices are row-major. The slice kernels (`gemv_acc`, `gemv_t_acc`,
//! `ger_acc`, ...) are the hot path; [`Tensor`] and [`linear`] are the
//! checked, allocation-friendly surface.

mod gradcheck;
mod params;

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, Objective, ParamCheck};
pub use params::{GradView, ParamId, ParamKind, ParamStore, ParamView};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("target index {target} out of range for {len} logits")]
    TargetOutOfRange { target: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A matrix (`rows x cols`) or a vector (`len x 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                op: "from_vec",
                detail: format!("{} values for shape {rows}x{cols}", data.len()),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::ShapeMismatch {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Ok(Tensor { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.cols == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `y = W x (+ b)`.
pub fn linear(w: &Tensor, x: &Tensor, b: Option<&Tensor>) -> Result<Tensor, NumericsError> {
    if !x.is_vector() || w.cols != x.rows {
        return Err(NumericsError::ShapeMismatch {
            op: "linear",
            detail: format!("W is {}x{}, x is {}x{}", w.rows, w.cols, x.rows, x.cols),
        });
    }
    let mut y = match b {
        Some(b) if b.is_vector() && b.rows == w.rows => b.data.clone(),
        Some(b) => {
            return Err(NumericsError::ShapeMismatch {
                op: "linear",
                detail: format!("bias is {}x{}, expected {}x1", b.rows, b.cols, w.rows),
            })
        }
        None => vec![0.0; w.rows],
    };
    gemv_acc(&w.data, w.cols, &x.data, &mut y);
    Ok(Tensor::vector(y))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `-log softmax(logits)[target]` and its gradient `softmax(logits) - onehot(target)`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), NumericsError> {
    if target >= logits.len() {
        return Err(NumericsError::TargetOutOfRange { target, len: logits.len() });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let loss = sum.ln() + max - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - max).exp() / sum).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    for (x, y) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let n = a.len() / 8 * 8;
    let mut tail = 0.0;
    for (x, y) in a[n..].iter().zip(&b[n..]) {
        tail += x * y;
    }
    acc.iter().sum::<f64>() + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += W x` for row-major `W` with `cols` columns.
pub fn gemv_acc(w: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), cols * y.len());
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi += dot(row, x);
    }
}

/// [`gemv_acc`] for several vectors at once: `y_t += W x_t`.
///
/// Bit-identical to calling [`gemv_acc`] per vector while reading each row
/// of `W` only once.
pub fn gemm_acc(w: &[f64], cols: usize, xs: &[&[f64]], ys: &mut [Vec<f64>]) {
    debug_assert_eq!(xs.len(), ys.len());
    for (r, row) in w.chunks_exact(cols).enumerate() {
        for (x, y) in xs.iter().zip(ys.iter_mut()) {
            y[r] += dot(row, x);
        }
    }
}

/// `x += W^T y` for row-major `W` with `cols` columns.
///
/// Rows are consumed four at a time, which cuts the loads and stores of `x`.
pub fn gemv_t_acc(w: &[f64], cols: usize, y: &[f64], x: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), cols * y.len());
    let mut blocks = w.chunks_exact(4 * cols);
    let mut ys = y.chunks_exact(4);
    for (blk, a) in (&mut blocks).zip(&mut ys) {
        t_block(blk, cols, a, x);
    }
    for (row, &a) in blocks.remainder().chunks_exact(cols).zip(ys.remainder()) {
        axpy(a, row, x);
    }
}

#[inline(always)]
fn t_block(blk: &[f64], cols: usize, a: &[f64], x: &mut [f64]) {
    let (r0, rest) = blk.split_at(cols);
    let (r1, rest) = rest.split_at(cols);
    let (r2, r3) = rest.split_at(cols);
    let x = &mut x[..cols];
    let (r1, r2, r3) = (&r1[..cols], &r2[..cols], &r3[..cols]);
    for j in 0..cols {
        x[j] += (a[0] * r0[j] + a[1] * r1[j]) + (a[2] * r2[j] + a[3] * r3[j]);
    }
}

/// [`gemv_t_acc`] for several vectors at once: `x_t += Wᵀ y_t`.
///
/// Bit-identical to calling [`gemv_t_acc`] per vector.
pub fn gemm_t_acc(w: &[f64], cols: usize, ys: &[&[f64]], xs: &mut [Vec<f64>]) {
    debug_assert_eq!(xs.len(), ys.len());
    let full = w.len() / (4 * cols);
    for (b, blk) in w.chunks_exact(4 * cols).enumerate() {
        for (y, x) in ys.iter().zip(xs.iter_mut()) {
            t_block(blk, cols, &y[4 * b..4 * b + 4], x);
        }
    }
    for (i, row) in w[full * 4 * cols..].chunks_exact(cols).enumerate() {
        for (y, x) in ys.iter().zip(xs.iter_mut()) {
            axpy(y[full * 4 + i], row, x);
        }
    }
}

/// `W += y x^T` (rank-one update).
pub fn ger_acc(w: &mut [f64], cols: usize, y: &[f64], x: &[f64]) {
    debug_assert_eq!(x.len(), cols);
    for (&yi, row) in y.iter().zip(w.chunks_exact_mut(cols)) {
        axpy(yi, x, row);
    }
}

/// `W += Σ_t y_t x_tᵀ`, four steps per pass over each row.
pub fn ger_batch(w: &mut [f64], cols: usize, ys: &[&[f64]], xs: &[&[f64]]) {
    debug_assert_eq!(ys.len(), xs.len());
    let full = xs.len() / 4 * 4;
    for (r, row) in w.chunks_exact_mut(cols).enumerate() {
        let row = &mut row[..cols];
        for t in (0..full).step_by(4) {
            let (g0, g1, g2, g3) = (ys[t][r], ys[t + 1][r], ys[t + 2][r], ys[t + 3][r]);
            let (x0, x1, x2, x3) = (&xs[t][..cols], &xs[t + 1][..cols], &xs[t + 2][..cols], &xs[t + 3][..cols]);
            for j in 0..cols {
                row[j] += (g0 * x0[j] + g1 * x1[j]) + (g2 * x2[j] + g3 * x3[j]);
            }
        }
        for t in full..xs.len() {
            axpy(ys[t][r], xs[t], row);
        }
    }
}

/// Backward of `y = W x`: `dW += dy x^T` and `dx += W^T dy`.
pub fn linear_backward(w: &[f64], dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(dx.len(), cols);
    ger_acc(dw, cols, dy, x);
    gemv_t_acc(w, cols, dy, dx);
}

/// [`linear_backward`] summed over several steps that share `W`:
/// `dW += Σ_t dy_t x_tᵀ` and, when `dxs` is given, `dx_t += Wᵀ dy_t`.
pub fn linear_backward_batch(
    w: &[f64],
    dw: &mut [f64],
    cols: usize,
    dys: &[&[f64]],
    xs: &[&[f64]],
    dxs: Option<&mut [Vec<f64>]>,
) {
    debug_assert_eq!(dys.len(), xs.len());
    ger_batch(dw, cols, dys, xs);
    if let Some(dxs) = dxs {
        gemm_t_acc(w, cols, dys, dxs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn batched_products_match_per_vector_bitwise() {
        let (rows, cols) = (6, 13);
        let w: Vec<f64> = (0..rows * cols).map(|i| ((i * 3 % 11) as f64 - 5.0) / 3.0).collect();
        let xs: Vec<Vec<f64>> = (0..4).map(|t| (0..cols).map(|i| ((i * t) as f64).sin()).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..4).map(|t| (0..rows).map(|i| ((i + t) as f64).cos()).collect()).collect();
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();

        let mut batched = vec![vec![0.5; rows]; 4];
        gemm_acc(&w, cols, &xr, &mut batched);
        let mut batched_t = vec![vec![0.0; cols]; 4];
        gemm_t_acc(&w, cols, &yr, &mut batched_t);
        for t in 0..4 {
            let mut one = vec![0.5; rows];
            gemv_acc(&w, cols, &xs[t], &mut one);
            assert_eq!(one, batched[t]);
            let mut one_t = vec![0.0; cols];
            gemv_t_acc(&w, cols, &ys[t], &mut one_t);
            assert_eq!(one_t, batched_t[t]);
        }
    }

    #[test]
    fn batched_backward_matches_per_step() {
        let (rows, cols) = (4, 11);
        let w: Vec<f64> = (0..rows * cols).map(|i| ((i * 5 % 17) as f64 - 8.0) / 7.0).collect();
        let xs: Vec<Vec<f64>> = (0..3).map(|t| (0..cols).map(|i| ((i + t) as f64).sin()).collect()).collect();
        let dys: Vec<Vec<f64>> = (0..3).map(|t| (0..rows).map(|i| ((i * t) as f64).cos()).collect()).collect();
        let mut dw1 = vec![0.0; rows * cols];
        let mut dx1 = vec![vec![0.0; cols]; 3];
        for t in 0..3 {
            linear_backward(&w, &mut dw1, cols, &dys[t], &xs[t], &mut dx1[t]);
        }
        let mut dw2 = vec![0.0; rows * cols];
        let mut dx2 = vec![vec![0.0; cols]; 3];
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let yr: Vec<&[f64]> = dys.iter().map(Vec::as_slice).collect();
        linear_backward_batch(&w, &mut dw2, cols, &yr, &xr, Some(&mut dx2));
        for (a, b) in dw1.iter().zip(&dw2).chain(dx1.iter().flatten().zip(dx2.iter().flatten())) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let y = linear(&Tensor::identity(3), &x, Some(&Tensor::vector(vec![0.0; 3]))).unwrap();
        assert_eq!(y, x);

        let w = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let y = linear(&w, &Tensor::vector(vec![1.0, 1.0]), None).unwrap();
        assert_eq!(y.data(), [3.0, 7.0]);

        let w = Tensor::zeros(2, 3);
        assert!(matches!(
            linear(&w, &Tensor::vector(vec![1.0, 1.0]), None),
            Err(NumericsError::ShapeMismatch { .. })
        ));
        assert!(linear(&Tensor::identity(2), &Tensor::vector(vec![1.0, 1.0]), Some(&Tensor::vector(vec![0.0]))).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), [0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0]), [0.5, 0.5]);
        let p = softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let v = 46;
        let (loss, grad) = cross_entropy(&vec![0.3; v], 5).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);

        let mut logits = vec![0.0; 10];
        logits[2] = 1000.0;
        let (loss, _) = cross_entropy(&logits, 2).unwrap();
        assert!(loss.abs() < 1e-12);

        assert_eq!(
            cross_entropy(&[0.0, 1.0], 2),
            Err(NumericsError::TargetOutOfRange { target: 2, len: 2 })
        );
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn kernels_match_naive() {
        let (rows, cols) = (5, 19);
        let w: Vec<f64> = (0..rows * cols).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let x: Vec<f64> = (0..cols).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..rows).map(|i| (i as f64).cos()).collect();

        let mut out = vec![0.0; rows];
        gemv_acc(&w, cols, &x, &mut out);
        for r in 0..rows {
            let naive: f64 = (0..cols).map(|c| w[r * cols + c] * x[c]).sum();
            assert!((out[r] - naive).abs() < 1e-12);
        }

        let mut xt = vec![0.0; cols];
        gemv_t_acc(&w, cols, &y, &mut xt);
        let mut dw = vec![0.0; rows * cols];
        let mut dx = vec![0.0; cols];
        linear_backward(&w, &mut dw, cols, &y, &x, &mut dx);
        let mut dw2 = vec![0.0; rows * cols];
        ger_acc(&mut dw2, cols, &y, &x);
        for c in 0..cols {
            let naive: f64 = (0..rows).map(|r| w[r * cols + c] * y[r]).sum();
            assert!((xt[c] - naive).abs() < 1e-12);
            assert!((dx[c] - naive).abs() < 1e-12);
            for r in 0..rows {
                assert!((dw[r * cols + c] - y[r] * x[c]).abs() < 1e-15);
                assert_eq!(dw[r * cols + c], dw2[r * cols + c]);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..40),
            shift in -500.0f64..500.0,
        ) {
            let p = softmax(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cross_entropy_gradient_sums_to_zero(
            v in prop::collection::vec(-30.0f64..30.0, 2..50),
            t in 0usize..50,
        ) {
            let t = t % v.len();
            let (loss, g) = cross_entropy(&v, t).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
