//! Pure transformer primitives.
//!
//! These are the value-level kernels; [`crate::numerics::Graph`] records the
//! same kernels and adds their reverse-mode rules.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

/// Probability floor used by [`cross_entropy`] and the fused loss.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn softmax<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Max-subtracted softmax over a finite, non-empty slice.
pub(crate) fn softmax_in_place<S: Scalar>(v: &mut [S]) {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in v.iter_mut() {
        *x = *x / total;
    }
}

pub fn log_softmax<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    if v.is_empty() {
        return Err(Error::Empty("log_softmax input"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("log_softmax input"));
    }
    let mut out = v.to_vec();
    log_softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn log_softmax_in_place<S: Scalar>(v: &mut [S]) {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = v.iter().map(|&x| (x - max).exp()).sum::<S>().ln() + max;
    for x in v.iter_mut() {
        *x = *x - lse;
    }
}

/// Row-wise log-softmax of a logits matrix.
pub fn log_softmax_rows<S: Scalar>(logits: &Matrix<S>) -> Matrix<S> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        log_softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn layer_norm<S: Scalar>(x: &[S], gain: &[S], bias: &[S], eps: S) -> Result<Vec<S>> {
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(Error::shape(format!(
            "layer_norm lengths {} / {} / {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Empty("layer_norm input"));
    }
    if eps <= S::zero() {
        return Err(Error::Config("layer_norm eps must be positive".into()));
    }
    let mut out = vec![S::zero(); x.len()];
    layer_norm_row(x, gain, bias, eps, &mut out);
    Ok(out)
}

/// Normalizes one row into `out`; returns `(mean, 1/sqrt(var + eps))`.
pub(crate) fn layer_norm_row<S: Scalar>(
    x: &[S],
    gain: &[S],
    bias: &[S],
    eps: S,
    out: &mut [S],
) -> (S, S) {
    let n = S::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<S>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
    let rstd = (var + eps).sqrt().recip();
    for i in 0..x.len() {
        out[i] = gain[i] * (x[i] - mean) * rstd + bias[i];
    }
    (mean, rstd)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64_lossy(GELU_C);
    let a = S::from_f64_lossy(0.044715);
    let half = S::from_f64_lossy(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f64_lossy(GELU_C);
    let a = S::from_f64_lossy(0.044715);
    let half = S::from_f64_lossy(0.5);
    let three = S::from_f64_lossy(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + three * a * x * x)
}

/// `-ln p[true_index]`, clamped at `-ln PROB_FLOOR`.
pub fn cross_entropy<S: Scalar>(p: &[S], true_index: usize) -> Result<S> {
    let &prob = p.get(true_index).ok_or(Error::IndexOutOfRange {
        index: true_index,
        len: p.len(),
    })?;
    let floor = S::from_f64_lossy(PROB_FLOOR);
    Ok(-prob.max(floor).ln())
}

/// Whether query position `query` may attend to key position `key`.
#[inline]
pub(crate) fn attends(query: usize, key: usize, n_prefix: usize) -> bool {
    key <= query || key < n_prefix
}

/// Single-head causal attention. Every position sees itself, earlier
/// positions, and all of the first `n_prefix` positions.
pub fn causal_attention<S: Scalar>(
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    n_prefix: usize,
) -> Result<Matrix<S>> {
    if q.rows() != k.rows() {
        return Err(Error::shape(format!(
            "causal_attention: {} query rows vs {} key rows",
            q.rows(),
            k.rows()
        )));
    }
    Ok(multi_head_attention(q, k, v, 1, n_prefix, 0)?.0)
}

/// Multi-head attention with query rows sitting at absolute positions
/// `q_offset..q_offset + q.rows()`. Keys cover positions `0..k.rows()`.
/// Returns the output and the per-head attention probabilities.
pub(crate) fn multi_head_attention<S: Scalar>(
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
    heads: usize,
    n_prefix: usize,
    q_offset: usize,
) -> Result<(Matrix<S>, Vec<Matrix<S>>)> {
    let d = q.cols();
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::shape(format!(
            "attention q {:?} k {:?} v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::shape(format!("{d} columns not divisible by {heads} heads")));
    }
    if q_offset + q.rows() != k.rows() {
        return Err(Error::shape(format!(
            "attention offset {q_offset} + {} queries != {} keys",
            q.rows(),
            k.rows()
        )));
    }
    let dh = d / heads;
    let scale = S::from_usize(dh).unwrap().sqrt().recip();
    let mut out = Matrix::zeros(q.rows(), d);
    let mut all_probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q.slice_cols(lo, hi);
        let kh = k.slice_cols(lo, hi);
        let vh = v.slice_cols(lo, hi);
        let mut probs = qh.matmul_t(false, &kh, true)?;
        for i in 0..probs.rows() {
            let row = probs.row_mut(i);
            let pos = q_offset + i;
            let mut max = S::neg_infinity();
            for (j, s) in row.iter_mut().enumerate() {
                if attends(pos, j, n_prefix) {
                    *s = *s * scale;
                    max = max.max(*s);
                }
            }
            let mut total = S::zero();
            for (j, s) in row.iter_mut().enumerate() {
                if attends(pos, j, n_prefix) {
                    *s = (*s - max).exp();
                    total = total + *s;
                } else {
                    *s = S::zero();
                }
            }
            for s in row.iter_mut() {
                *s = *s / total;
            }
        }
        let oh = probs.matmul(&vh)?;
        for i in 0..oh.rows() {
            out.row_mut(i)[lo..hi].copy_from_slice(oh.row(i));
        }
        all_probs.push(probs);
    }
    Ok((out, all_probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[0.0f64, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(p[1] < 1e-300);
        assert!((p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax::<f64>(&[]), Err(Error::Empty(_))));
        assert!(matches!(
            softmax(&[1.0f64, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0f64; 3];
        let zeros = [0.0f64; 3];
        let out = layer_norm(&[4.0, 4.0, 4.0], &ones, &zeros, 1e-5).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        let out = layer_norm(&[1.0, -1.0], &ones[..2], &zeros[..2], 1e-12).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-9 && (out[1] + 1.0).abs() < 1e-9);
        let out = layer_norm(&[2.0, 0.0], &ones[..2], &zeros[..2], 1e-12).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-9 && (out[1] + 1.0).abs() < 1e-9);
        assert!(layer_norm(&[1.0, 2.0], &ones, &zeros, 1e-5).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = cross_entropy(&[0.5f64, 0.5], 0).unwrap();
        assert!((ln2 - 2f64.ln()).abs() < 1e-12);
        assert_eq!(cross_entropy(&[0.0f64, 1.0, 0.0], 1).unwrap(), 0.0);
        let uniform = vec![0.2f64; 5];
        assert!((cross_entropy(&uniform, 3).unwrap() - 5f64.ln()).abs() < 1e-12);
        let clamped = cross_entropy(&[1.0f64, 0.0], 1).unwrap();
        assert!((clamped + PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(matches!(
            cross_entropy(&[1.0f64], 1),
            Err(Error::IndexOutOfRange { index: 1, len: 1 })
        ));
    }

    #[test]
    fn attention_single_position_returns_value_row() {
        let q = Matrix::from_rows(&[vec![0.3f64, -2.0]]).unwrap();
        let k = Matrix::from_rows(&[vec![1.0f64, 4.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![7.0f64, -3.0]]).unwrap();
        let out = causal_attention(&q, &k, &v, 0).unwrap();
        assert_eq!(out.row(0), v.row(0));
    }

    #[test]
    fn attention_equal_keys_average_values() {
        let q = Matrix::from_rows(&[vec![1.0f64, 0.0], vec![0.5, 2.0]]).unwrap();
        let k = Matrix::from_rows(&[vec![1.0f64, 1.0], vec![1.0, 1.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![2.0f64, 0.0], vec![4.0, 6.0]]).unwrap();
        let out = causal_attention(&q, &k, &v, 0).unwrap();
        assert!((out[(1, 0)] - 3.0).abs() < 1e-12);
        assert!((out[(1, 1)] - 3.0).abs() < 1e-12);
        assert_eq!(out.row(0), v.row(0));
    }

    #[test]
    fn prefix_rows_attend_to_each_other() {
        // With n_prefix = 2, position 0 also sees position 1.
        let q = Matrix::from_rows(&[vec![0.0f64], vec![0.0], vec![0.0]]).unwrap();
        let k = q.clone();
        let v = Matrix::from_rows(&[vec![1.0f64], vec![3.0], vec![5.0]]).unwrap();
        let out = causal_attention(&q, &k, &v, 2).unwrap();
        assert!((out[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((out[(1, 0)] - 2.0).abs() < 1e-12);
        assert!((out[(2, 0)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn attention_dimension_errors() {
        let a = Matrix::<f64>::zeros(2, 4);
        let b = Matrix::<f64>::zeros(3, 4);
        assert!(causal_attention(&a, &b, &b, 0).is_err());
        let c = Matrix::<f64>::zeros(2, 3);
        assert!(causal_attention(&a, &c, &c, 0).is_err());
    }

    #[test]
    fn gelu_grad_matches_difference_quotient() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x = {x}");
        }
    }
}
