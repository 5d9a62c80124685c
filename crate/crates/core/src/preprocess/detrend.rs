use crate::error::{Error, Result};

/// Smoothness-priors detrending: returns `x - (I + lambda^2 D2^T D2)^{-1} x`
/// where `D2` is the second-difference operator.
///
/// The system is pentadiagonal and solved with a banded Cholesky
/// factorisation in `O(n)`.
pub fn detrend(x: &[f64], smoothing: f64) -> Result<Vec<f64>> {
    super::require_len(x.len(), 3)?;
    if !(smoothing > 0.0) || !smoothing.is_finite() {
        return Err(Error::InvalidParams(format!("smoothing must be positive, got {smoothing}")));
    }
    let trend = smooth_trend(x, smoothing);
    Ok(x.iter().zip(&trend).map(|(a, b)| a - b).collect())
}

fn smooth_trend(x: &[f64], lambda: f64) -> Vec<f64> {
    let n = x.len();
    let l2 = lambda * lambda;
    // bands of A = I + l2 * D2^T D2: a0 diagonal, a1[i] = A[i][i-1], a2[i] = A[i][i-2]
    let mut a0 = vec![1.0; n];
    let mut a1 = vec![0.0; n];
    let mut a2 = vec![0.0; n];
    const C: [f64; 3] = [1.0, -2.0, 1.0];
    #[allow(clippy::needless_range_loop)]
    for r in 0..n - 2 {
        for p in 0..3 {
            a0[r + p] += l2 * C[p] * C[p];
            for q in 0..p {
                let (i, j) = (r + p, r + q);
                if i - j == 1 {
                    a1[i] += l2 * C[p] * C[q];
                } else {
                    a2[i] += l2 * C[p] * C[q];
                }
            }
        }
    }

    // banded Cholesky: A = L L^T with L bands l0, l1, l2
    let mut l0 = vec![0.0; n];
    let mut l1 = vec![0.0; n];
    let mut lb2 = vec![0.0; n];
    for i in 0..n {
        if i >= 2 {
            lb2[i] = a2[i] / l0[i - 2];
        }
        if i >= 1 {
            let carry = if i >= 2 { lb2[i] * l1[i - 1] } else { 0.0 };
            l1[i] = (a1[i] - carry) / l0[i - 1];
        }
        l0[i] = (a0[i] - l1[i] * l1[i] - lb2[i] * lb2[i]).sqrt();
    }

    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = x[i];
        if i >= 1 {
            s -= l1[i] * y[i - 1];
        }
        if i >= 2 {
            s -= lb2[i] * y[i - 2];
        }
        y[i] = s / l0[i];
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        if i + 1 < n {
            s -= l1[i + 1] * z[i + 1];
        }
        if i + 2 < n {
            s -= lb2[i + 2] * z[i + 2];
        }
        z[i] = s / l0[i];
    }
    z
}
