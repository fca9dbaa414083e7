//! Small dense linear-algebra helpers shared by the Gram-matrix code.
//!
//! The Cholesky factorization is hand-rolled so that a failure can report the
//! offending pivot, which nalgebra's `Cholesky::new` does not expose.

use nalgebra::{DMatrix, DVector};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Relative jitter multipliers (times `tr(A)/n`) tried in order.
pub const JITTER_SCHEDULE: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// possibly of `A + jitter I`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl SpdFactor {
    /// Factor `a + jitter I`. On failure returns the first non-positive pivot.
    pub fn with_jitter(a: &DMatrix<f64>, jitter: f64) -> Result<Self, f64> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "SpdFactor needs a square matrix");
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)] + jitter;
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(diag);
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { lower: l, jitter })
    }

    /// Deterministic escalation over [`JITTER_SCHEDULE`]; first success wins.
    /// On total failure returns `(smallest_pivot, last_jitter)`.
    pub fn escalating(a: &DMatrix<f64>) -> Result<Self, (f64, f64)> {
        let n = a.nrows().max(1) as f64;
        let scale = a.trace() / n;
        let mut last = (f64::NAN, 0.0);
        for rel in JITTER_SCHEDULE {
            let jitter = rel * scale;
            match Self::with_jitter(a, jitter) {
                Ok(f) => return Ok(f),
                Err(pivot) => last = (pivot, jitter),
            }
        }
        Err(last)
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Solve `(A + jitter I) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
///
/// The start vector is fixed, so the result is deterministic.
pub fn spectral_norm_symmetric(a: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let av = a * &v;
        let next = av.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = av / next;
        if (next - estimate).abs() <= rel_tol * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Smallest eigenvalue of a symmetric matrix via a dense eigensolve.
pub fn min_eigenvalue_symmetric(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
