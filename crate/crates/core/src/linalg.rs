//! Dense row-major helpers for the small symmetric matrices used by the
//! mixture model. Dimensions are tiny (two or three), so nothing here tries
//! to be clever about cache behaviour.

use alloc::vec;
use alloc::vec::Vec;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or `None` when a pivot is not strictly positive.
pub(crate) fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sqrt(sum);
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// log |A| from its Cholesky factor.
pub(crate) fn log_det(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| ln(l[i * n + i])).sum::<f64>() * 2.0
}

/// Solves L y = b.
pub(crate) fn forward_sub(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    y
}

/// Solves Lᵀ x = y.
pub(crate) fn back_sub(l: &[f64], n: usize, y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Solves A x = b given the Cholesky factor of A.
pub(crate) fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    back_sub(l, n, &forward_sub(l, n, b))
}

/// eᵀ A⁻¹ e given the Cholesky factor of A.
pub(crate) fn mahalanobis_sq(l: &[f64], n: usize, e: &[f64]) -> f64 {
    forward_sub(l, n, e).iter().map(|v| v * v).sum()
}

/// Log density of N(x; mean, A) from the Cholesky factor of A.
pub(crate) fn log_normal_pdf(l: &[f64], n: usize, x: &[f64], mean: &[f64]) -> f64 {
    let e: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let d2 = mahalanobis_sq(l, n, &e);
    -0.5 * (n as f64 * LN_2PI + log_det(l, n) + d2)
}

/// Copies the principal sub-block of `a` selected by `idx`.
pub(crate) fn sub_block(a: &[f64], n: usize, rows: &[usize], cols: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in rows {
        for &c in cols {
            out.push(a[r * n + c]);
        }
    }
    out
}

/// Numerically stable log(Σ exp(v)).
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + ln(values.iter().map(|v| exp(v - max)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_of_known_matrix() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        assert_eq!(l, vec![2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert!((log_det(&l, 2) - 8f64.ln()).abs() < 1e-15);
        let x = chol_solve(&l, 2, &[1.0, 1.0]);
        // A⁻¹ = 1/8 [3 -2; -2 4]
        assert!((x[0] - 0.125).abs() < 1e-15);
        assert!((x[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
        assert!(cholesky(&[0.0], 1).is_none());
        assert!(cholesky(&[f64::NAN], 1).is_none());
    }

    #[test]
    fn log_sum_exp_handles_underflow() {
        let v = [-1000.0, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
