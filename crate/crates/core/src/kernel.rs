//! Infinite-width neural tangent kernel of the bias-augmented ReLU layer.
//!
//! In angle form `K(x̃, ỹ) = x̃ᵀỹ (π − θ) / (2π)` with `θ = ∠(x̃, ỹ)`. On the
//! sphere `‖x̃‖² = d + 1` this is the usual `(d+1)`-normalized arc-cosine
//! expression; off the sphere it is still the expectation of
//! `∇f(x, w(0))ᵀ∇f(y, w(0))` because the activation indicator is scale-free.
//!
//! Expanding `arcsin` gives
//! `K = ρ² [t/4 + Σ_{p≥1} c̄_{2p} t^{2p}]`, `t = x̃ᵀỹ/ρ²`, `ρ² = ‖x̃‖‖ỹ‖`,
//! `c̄_{2p} = (2p−3)!! / (2π (2p−2)!! (2p−1))`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, min_eigenvalue_symmetric, norm_sq, SpdFactor};
use crate::model::{augment, relu_active, LabeledDataset, NetworkParams};

pub const DEFAULT_SERIES_CAP: usize = 400;
pub const DEFAULT_DEGREE_CAP: usize = 40;

/// Cosines that overshoot `[-1, 1]` by more than this are logged.
const CLAMP_WARN: f64 = 1e-9;
/// Slack allowed in the eigenvalue sandwich.
pub const SANDWICH_SLACK: f64 = 1e-9;

fn clamp_cosine(c: f64) -> f64 {
    if c.abs() > 1.0 + CLAMP_WARN {
        log::warn!("arccos argument {c} outside [-1, 1] beyond rounding; clamped");
    }
    c.clamp(-1.0, 1.0)
}

/// `u (π − arccos(u / scale)) / (2π)` for an inner product `u` and a
/// normalization `scale` (`‖x̃‖‖ỹ‖`, or `d+1` in the on-sphere convention).
pub fn arccos_kernel(inner: f64, scale: f64) -> f64 {
    let c = clamp_cosine(inner / scale);
    inner * (PI - c.acos()) / (2.0 * PI)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_dim("kernel argument", x.len(), y.len())?;
    let nx = norm_sq(x);
    let ny = norm_sq(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::invalid("kernel argument", "zero-norm vector"));
    }
    Ok((dot(x, y), (nx * ny).sqrt()))
}

/// Closed-form NTK on augmented vectors.
pub fn ntk(x_aug: &[f64], y_aug: &[f64]) -> Result<f64> {
    let (inner, scale) = check_pair(x_aug, y_aug)?;
    Ok(arccos_kernel(inner, scale))
}

/// `c̄_{2p}` for `p = 0..=p_max` (entry 0 is unused and zero), built by the
/// ratio recurrence `c̄_{2p+2} = c̄_{2p} (2p−1)² / (2p (2p+1))`.
pub fn series_coefficients(p_max: usize) -> Vec<f64> {
    let mut c = vec![0.0; p_max + 1];
    if p_max >= 1 {
        c[1] = 1.0 / (2.0 * PI);
    }
    for p in 1..p_max {
        let q = p as f64;
        c[p + 1] = c[p] * (2.0 * q - 1.0).powi(2) / (2.0 * q * (2.0 * q + 1.0));
    }
    c
}

/// Truncated series form of [`arccos_kernel`].
pub fn arccos_kernel_series(inner: f64, scale: f64, p_max: usize) -> f64 {
    let t = inner / scale;
    let t2 = t * t;
    let coeffs = series_coefficients(p_max);
    // Horner in t², highest power first
    let mut acc = 0.0;
    for p in (1..=p_max).rev() {
        acc = acc * t2 + coeffs[p];
    }
    scale * (t / 4.0 + acc * t2)
}

/// Truncated power-series NTK.
pub fn ntk_series(x_aug: &[f64], y_aug: &[f64], p_max: usize) -> Result<f64> {
    let (inner, scale) = check_pair(x_aug, y_aug)?;
    Ok(arccos_kernel_series(inner, scale, p_max))
}

/// Coefficients of `K(x, y) = Σ_k d_k (xᵀy)^k` for `x̃ = [x, 1]` under the
/// `(d+1)` normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapCoefficients {
    pub dim: usize,
    pub degree_cap: usize,
    pub series_cap: usize,
    pub coeffs: Vec<f64>,
    /// Certified bound on `|Σ_{k≤K} d_k s^k − K|` for `|s| ≤ 1`, covering both
    /// the omitted degrees and the truncated `p`-sum.
    pub tail_bound: f64,
}

impl FeatureMapCoefficients {
    /// `Σ_k d_k s^k` at `s = xᵀy`.
    pub fn evaluate(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &d| acc * s + d)
    }

    /// The on-sphere closed form this expansion reproduces.
    pub fn closed_form(&self, s: f64) -> f64 {
        arccos_kernel(s + 1.0, (self.dim + 1) as f64)
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// `d_0 = ¼ + Σ_p c_{2p}/(d+1)^{2p}`, `d_1 = ¼ + Σ_p 2p c_{2p}/(d+1)^{2p}`,
/// `d_k = Σ_{p ≥ ⌈k/2⌉} c_{2p} C(2p, k)/(d+1)^{2p}` with `c_{2p} = (d+1) c̄_{2p}`.
/// Binomial-times-power terms are accumulated from their logarithms.
pub fn feature_coefficients(
    d: usize,
    k_max: usize,
    p_max: usize,
) -> Result<FeatureMapCoefficients> {
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    if k_max > 2 * p_max {
        return Err(Error::invalid("degree_cap", "K_max may not exceed 2·P_max"));
    }
    let cbar = series_coefficients(p_max);
    let ln_fact = ln_factorials(2 * p_max);
    let ln_d1 = ((d + 1) as f64).ln();
    let full_degree = 2 * p_max;
    let mut all = vec![0.0; full_degree + 1];
    all[0] = 0.25;
    if full_degree >= 1 {
        all[1] = 0.25;
    }
    for p in 1..=p_max {
        let ln_c = cbar[p].ln() + ln_d1 - 2.0 * p as f64 * ln_d1;
        for (k, slot) in all.iter_mut().enumerate().take(2 * p + 1) {
            let ln_binom = ln_fact[2 * p] - ln_fact[k] - ln_fact[2 * p - k];
            *slot += (ln_c + ln_binom).exp();
        }
    }
    let omitted_degrees: f64 = all[k_max + 1..].iter().sum();
    let ratio = 2.0 / (d + 1) as f64;
    let omitted_series = if ratio < 1.0 {
        // c̄ is decreasing, so the tail is dominated by a geometric series
        let next = cbar[p_max] * ((2 * p_max - 1) as f64).powi(2)
            / ((2 * p_max) as f64 * (2 * p_max + 1) as f64);
        let next = if p_max == 0 { 1.0 / (2.0 * PI) } else { next };
        (d + 1) as f64 * next * ratio.powi(2 * (p_max as i32 + 1)) / (1.0 - ratio * ratio)
    } else {
        f64::INFINITY
    };
    all.truncate(k_max + 1);
    Ok(FeatureMapCoefficients {
        dim: d,
        degree_cap: k_max,
        series_cap: p_max,
        coeffs: all,
        tail_bound: omitted_degrees + omitted_series,
    })
}

/// Gram matrix `H_ij = K(x̃_i, x̃_j)` with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct NtkGram {
    matrix: DMatrix<f64>,
    factor: SpdFactor,
}

impl NtkGram {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("H right-hand side", self.matrix.nrows(), b.len())?;
        Ok(self.factor.solve(b))
    }
}

pub fn kernel_matrix(data: &LabeledDataset) -> DMatrix<f64> {
    let n = data.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = data.augmented_row(i);
        let ni = norm_sq(xi);
        for j in i..n {
            let xj = data.augmented_row(j);
            // √(ab) rather than √a·√b: the diagonal cosine must come out exactly 1
            let v = arccos_kernel(dot(xi, xj), (ni * norm_sq(xj)).sqrt());
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

pub fn gram_h(data: &LabeledDataset) -> Result<NtkGram> {
    let matrix = kernel_matrix(data);
    let factor = SpdFactor::with_jitter(&matrix, 0.0).map_err(|pivot| Error::DegenerateKernel {
        smallest_pivot: pivot,
    })?;
    Ok(NtkGram { matrix, factor })
}

/// `K^{(m)}(x̃, ỹ) = (1/m) Σ_k x̃ᵀỹ 1{w_k(0)ᵀx̃ ≥ 0} 1{w_k(0)ᵀỹ ≥ 0}`.
pub fn empirical_ntk(params: &NetworkParams, x_aug: &[f64], y_aug: &[f64]) -> Result<f64> {
    check_dim("augmented input", params.row_len(), x_aug.len())?;
    check_dim("augmented input", params.row_len(), y_aug.len())?;
    let both = params
        .initial_weights()
        .chunks_exact(params.row_len())
        .filter(|w| relu_active(dot(w, x_aug)) && relu_active(dot(w, y_aug)))
        .count();
    Ok(dot(x_aug, y_aug) * both as f64 / params.width() as f64)
}

/// Lower and upper bounds on `λ_min(H)` next to the exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenBoundReport {
    /// `θ_min` with `cos θ_min = max_{i≠j} x̃_iᵀx̃_j / (d+1)`.
    pub theta_min: f64,
    /// `max_{i≠j} |x̃_iᵀx̃_j| / (d+1)`, the cosine the Gershgorin step needs.
    pub gershgorin_cos: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub exact_lambda_min: f64,
    /// Whether `θ_min < 1`, the regime in which the bound's asymptotics are stated.
    pub small_angle_regime: bool,
    pub sandwich_holds: bool,
}

/// `(d+1)/(8π) √(ln(1/c) / ln(2n/c))` with `c` the Gershgorin cosine; the
/// `c → 0` limit is `(d+1)/(8π)`.
pub fn eigen_lower_bound(d: usize, n: usize, gershgorin_cos: f64) -> f64 {
    let scale = (d + 1) as f64 / (8.0 * PI);
    if gershgorin_cos <= 0.0 {
        return scale;
    }
    let c = gershgorin_cos;
    scale * ((1.0 / c).ln() / (2.0 * n as f64 / c).ln()).sqrt()
}

/// `½ (d+1) (1 − (1 − θ/π) cos θ)`: the Rayleigh quotient of `H` at
/// `(e_a − e_b)/√2` for the most aligned pair `(a, b)`.
pub fn eigen_upper_bound(d: usize, theta_min: f64) -> f64 {
    0.5 * (d + 1) as f64 * (1.0 - (1.0 - theta_min / PI) * theta_min.cos())
}

pub fn eigen_bounds(data: &LabeledDataset) -> Result<EigenBoundReport> {
    let n = data.len();
    let d = data.dim();
    if n < 2 {
        return Err(Error::invalid(
            "dataset",
            "eigenvalue bounds need at least two points",
        ));
    }
    let sphere = (d as f64).sqrt();
    if (data.input_radius() - sphere).abs() > 1e-9 * sphere {
        return Err(Error::invalid(
            "input_radius",
            format!(
                "eigenvalue bounds need ‖x‖ = √d = {sphere}, got {}",
                data.input_radius()
            ),
        ));
    }
    let norm = (d + 1) as f64;
    let mut max_cos = f64::NEG_INFINITY;
    let mut max_abs = 0.0f64;
    let mut pair = (0, 1);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = dot(data.augmented_row(i), data.augmented_row(j)) / norm;
            if c > max_cos {
                max_cos = c;
                pair = (i, j);
            }
            max_abs = max_abs.max(c.abs());
        }
    }
    if max_cos >= 1.0 || max_abs >= 1.0 {
        return Err(Error::ParallelPoints {
            i: pair.0,
            j: pair.1,
        });
    }
    let theta_min = max_cos.acos();
    let lower_bound = eigen_lower_bound(d, n, max_abs);
    let upper_bound = eigen_upper_bound(d, theta_min);
    let exact_lambda_min = min_eigenvalue_symmetric(&kernel_matrix(data));
    let sandwich_holds = lower_bound <= exact_lambda_min + SANDWICH_SLACK
        && exact_lambda_min <= upper_bound + SANDWICH_SLACK;
    Ok(EigenBoundReport {
        theta_min,
        gershgorin_cos: max_abs,
        lower_bound,
        upper_bound,
        exact_lambda_min,
        small_angle_regime: theta_min < 1.0,
        sandwich_holds,
    })
}

/// Minimum-RKHS-norm interpolant `f_KR(x) = h(x)ᵀ H⁻¹ Y`.
#[derive(Debug, Clone)]
pub struct KernelRegressor {
    dim: usize,
    points: Vec<f64>,
    /// Squared norms of the augmented training points.
    norms_sq: Vec<f64>,
    coeffs: DVector<f64>,
}

impl KernelRegressor {
    pub fn fit(data: &LabeledDataset) -> Result<Self> {
        let h = gram_h(data)?;
        let coeffs = h.solve(&DVector::from_column_slice(data.labels()))?;
        let row = data.dim() + 1;
        let norms_sq = (0..data.len())
            .map(|i| norm_sq(data.augmented_row(i)))
            .collect();
        Ok(Self {
            dim: data.dim(),
            points: data.augmented()[..data.len() * row].to_vec(),
            norms_sq,
            coeffs,
        })
    }

    /// `H⁻¹ Y`.
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coeffs
    }

    /// Prediction at a raw input `x` of dimension `d`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim("query", self.dim, x.len())?;
        let q = augment(x);
        let nq = norm_sq(&q);
        Ok(self
            .points
            .chunks_exact(self.dim + 1)
            .zip(&self.norms_sq)
            .zip(self.coeffs.iter())
            .map(|((xi, ni), c)| c * arccos_kernel(dot(&q, xi), (nq * ni).sqrt()))
            .sum())
    }
}

pub fn kernel_regression(data: &LabeledDataset, x: &[f64]) -> Result<f64> {
    KernelRegressor::fit(data)?.predict(x)
}
