//! The network linearized around `w(0)`: initialization Jacobian, its Gram
//! matrix, the minimum-norm interpolating weights and the Lyapunov split of
//! `w − w_L*` into column-space and complement parts.
//!
//! All projections go through the `n × n` Gram system; the `m(d+1)`-square
//! projector is never formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm_sq, spectral_norm_symmetric, SpdFactor};
use crate::model::{forward_unchecked, relu_active, LabeledDataset, NetworkParams, WeightSet};

/// Relative threshold below which a negative `V⊥` is treated as rounding.
const CLAMP_FLAG_REL: f64 = 1e-8;

/// `∇f₀ = [∇f(x_1, w(0)) … ∇f(x_n, w(0))]` with its factored Gram matrix.
#[derive(Debug, Clone)]
pub struct GradientFeatures {
    num_weights: usize,
    columns: Vec<f64>,
    gram: DMatrix<f64>,
    factor: SpdFactor,
    f0: DVector<f64>,
}

/// `w_L* = argmin ‖w − w(0)‖` subject to `f_L(x_i, w) = y_i`.
#[derive(Debug, Clone)]
pub struct MinNormSolution {
    pub w_star: Vec<f64>,
    /// `G⁻¹ (Y − f0)`.
    pub dual: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lyapunov {
    /// `‖P₀⊥ (w − w_L*)‖²`
    pub v_perp: f64,
    /// `‖P₀ (w − w_L*)‖²`
    pub v_par: f64,
    /// Set when `V⊥` came out below `−1e-8 ‖w − w_L*‖²` before clamping.
    pub clamp_flagged: bool,
}

/// Activation bitsets: bit `k` of row `i` is `1{w_kᵀx̃_i ≥ 0}`.
pub(crate) fn activation_masks(
    params: &NetworkParams,
    which: WeightSet,
    data: &LabeledDataset,
) -> Vec<Vec<u64>> {
    let row = params.row_len();
    let words = params.width().div_ceil(64);
    let w = params.weight_set(which);
    (0..data.len())
        .map(|i| {
            let x = data.augmented_row(i);
            let mut bits = vec![0u64; words];
            for (k, wk) in w.chunks_exact(row).enumerate() {
                if relu_active(dot(wk, x)) {
                    bits[k / 64] |= 1 << (k % 64);
                }
            }
            bits
        })
        .collect()
}

fn co_active(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

/// `∇ᵀf ∇f` at the chosen weights:
/// `G_ij = x̃_iᵀx̃_j · #{k : both active} / m` (the signs square away).
pub fn empirical_gram(
    params: &NetworkParams,
    which: WeightSet,
    data: &LabeledDataset,
) -> Result<DMatrix<f64>> {
    check_dim("dataset dimension", params.input_dim(), data.dim())?;
    let masks = activation_masks(params, which, data);
    let n = data.len();
    let m = params.width() as f64;
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let ip = dot(data.augmented_row(i), data.augmented_row(j));
            let v = ip * co_active(&masks[i], &masks[j]) as f64 / m;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

impl GradientFeatures {
    pub fn build(params: &NetworkParams, data: &LabeledDataset) -> Result<Self> {
        check_dim("dataset dimension", params.input_dim(), data.dim())?;
        let p = params.num_weights();
        let n = data.len();
        let mut columns = vec![0.0; n * p];
        for (i, col) in columns.chunks_exact_mut(p).enumerate() {
            params.gradient_features_into(WeightSet::Initial, data.augmented_row(i), col);
        }
        let gram = empirical_gram(params, WeightSet::Initial, data)?;
        let factor =
            SpdFactor::escalating(&gram).map_err(|(pivot, jitter)| Error::DegenerateGram {
                smallest_pivot: pivot,
                jitter,
            })?;
        if factor.jitter() > 0.0 {
            log::warn!("Gram factorization needed jitter {:e}", factor.jitter());
        }
        let f0 = DVector::from_fn(n, |i, _| {
            forward_unchecked(
                params.initial_weights(),
                params.signs(),
                params.row_len(),
                data.augmented_row(i),
            )
        });
        Ok(Self {
            num_weights: p,
            columns,
            gram,
            factor,
            f0,
        })
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn num_weights(&self) -> usize {
        self.num_weights
    }

    /// Column `i`, i.e. `∇f(x_i, w(0))`.
    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i * self.num_weights..(i + 1) * self.num_weights]
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn f0(&self) -> &DVector<f64> {
        &self.f0
    }

    /// `∇ᵀf₀ v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<DVector<f64>> {
        check_dim("weight vector", self.num_weights, v.len())?;
        Ok(DVector::from_iterator(
            self.len(),
            self.columns
                .chunks_exact(self.num_weights)
                .map(|c| dot(c, v)),
        ))
    }

    /// `∇f₀ α`.
    pub fn apply(&self, alpha: &DVector<f64>) -> Result<Vec<f64>> {
        check_dim("coefficient vector", self.len(), alpha.len())?;
        let mut out = vec![0.0; self.num_weights];
        for (c, &a) in self
            .columns
            .chunks_exact(self.num_weights)
            .zip(alpha.iter())
        {
            if a == 0.0 {
                continue;
            }
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += a * ci;
            }
        }
        Ok(out)
    }

    /// `G⁻¹ b` through the (possibly jittered) Cholesky factor.
    pub fn solve_gram(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("Gram right-hand side", self.len(), b.len())?;
        Ok(self.factor.solve(b))
    }

    /// `P₀ v = ∇f₀ G⁻¹ ∇ᵀf₀ v`.
    pub fn project_parallel(&self, v: &[f64]) -> Result<Vec<f64>> {
        let coeffs = self.solve_gram(&self.apply_transpose(v)?)?;
        self.apply(&coeffs)
    }

    /// Closed form `w_L* = w(0) + ∇f₀ G⁻¹ (Y − f0)`.
    pub fn min_norm_solution(
        &self,
        params: &NetworkParams,
        labels: &[f64],
    ) -> Result<MinNormSolution> {
        check_dim("labels", self.len(), labels.len())?;
        check_dim("weights", self.num_weights, params.num_weights())?;
        let rhs = DVector::from_iterator(
            self.len(),
            labels.iter().zip(self.f0.iter()).map(|(y, f)| y - f),
        );
        let dual = self.solve_gram(&rhs)?;
        let step = self.apply(&dual)?;
        let w_star = params
            .initial_weights()
            .iter()
            .zip(&step)
            .map(|(w0, s)| w0 + s)
            .collect();
        Ok(MinNormSolution { w_star, dual })
    }

    /// `V⊥`, `V∥` at `w`. `V∥` is computed directly; `V⊥` by Pythagoras.
    pub fn lyapunov(&self, sol: &MinNormSolution, w: &[f64]) -> Result<Lyapunov> {
        check_dim("weights", self.num_weights, w.len())?;
        let diff: Vec<f64> = w.iter().zip(&sol.w_star).map(|(a, b)| a - b).collect();
        let total = norm_sq(&diff);
        let v_par = norm_sq(&self.project_parallel(&diff)?);
        let raw_perp = total - v_par;
        let clamp_flagged = raw_perp < -CLAMP_FLAG_REL * total;
        if clamp_flagged {
            log::warn!("V_perp = {raw_perp:e} below clamp threshold (total {total:e})");
        }
        Ok(Lyapunov {
            v_perp: raw_perp.max(0.0),
            v_par,
            clamp_flagged,
        })
    }
}

/// Free-function forms mirroring the operation list.
pub fn build_features(params: &NetworkParams, data: &LabeledDataset) -> Result<GradientFeatures> {
    GradientFeatures::build(params, data)
}

pub fn min_norm_solution(
    features: &GradientFeatures,
    params: &NetworkParams,
    labels: &[f64],
) -> Result<MinNormSolution> {
    features.min_norm_solution(params, labels)
}

pub fn project_parallel(features: &GradientFeatures, v: &[f64]) -> Result<Vec<f64>> {
    features.project_parallel(v)
}

pub fn lyapunov(features: &GradientFeatures, sol: &MinNormSolution, w: &[f64]) -> Result<Lyapunov> {
    features.lyapunov(sol, w)
}

/// Concentration diagnostics comparing current, initial and infinite-width
/// Jacobian quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationReport {
    /// `‖∇f − ∇f₀‖_F`
    pub jacobian_drift_fro: f64,
    /// `‖∇ᵀf ∇f − ∇ᵀf₀ ∇f₀‖` (spectral)
    pub gram_drift: f64,
    /// `‖f₀‖`
    pub init_output_norm: f64,
    /// `‖∇ᵀf₀ ∇f₀ − H‖` (spectral)
    pub gram_vs_kernel: f64,
}

pub fn concentration_diagnostics(
    params: &NetworkParams,
    data: &LabeledDataset,
    features: &GradientFeatures,
    kernel_gram: &DMatrix<f64>,
) -> Result<ConcentrationReport> {
    let n = data.len();
    check_dim("kernel Gram", n, kernel_gram.nrows())?;
    let m = params.width() as f64;
    let mut fro_sq = 0.0;
    for i in 0..n {
        let flips = params.sign_flip_count(data.augmented_row(i))? as f64;
        fro_sq += norm_sq(data.augmented_row(i)) * flips / m;
    }
    let current = empirical_gram(params, WeightSet::Current, data)?;
    Ok(ConcentrationReport {
        jacobian_drift_fro: fro_sq.sqrt(),
        gram_drift: spectral_norm_symmetric(&(current - features.gram()), 1e-10, 20_000),
        init_output_norm: features.f0().norm(),
        gram_vs_kernel: spectral_norm_symmetric(&(features.gram() - kernel_gram), 1e-10, 20_000),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::augment;

    fn circle_data(n: usize, seed: u64) -> LabeledDataset {
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let t = 0.37 + i as f64 * 2.1 / n as f64 + seed as f64 * 0.01;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let labels = (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        LabeledDataset::new(inputs, labels).unwrap()
    }

    #[test]
    fn single_point_gram() {
        let data = LabeledDataset::new(vec![vec![0.6, 0.8]], vec![1.0]).unwrap();
        let p = NetworkParams::initialize(40, 2, 1.0, 3).unwrap();
        let feat = GradientFeatures::build(&p, &data).unwrap();
        let x = augment(&[0.6, 0.8]);
        let active = p
            .initial_weights()
            .chunks_exact(3)
            .filter(|w| relu_active(dot(w, &x)))
            .count() as f64;
        let expected = norm_sq(&x) * active / 40.0;
        assert!((feat.gram()[(0, 0)] - expected).abs() < 1e-14);
    }

    #[test]
    fn gram_matches_column_inner_products() {
        let data = circle_data(6, 0);
        let p = NetworkParams::initialize(80, 2, 1.0, 4).unwrap();
        let feat = GradientFeatures::build(&p, &data).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let direct = dot(feat.column(i), feat.column(j));
                assert!((direct - feat.gram()[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f0_matches_homogeneity() {
        let data = circle_data(5, 1);
        let p = NetworkParams::initialize(100, 2, 1.0, 5).unwrap();
        let feat = GradientFeatures::build(&p, &data).unwrap();
        let via_jacobian = feat.apply_transpose(p.initial_weights()).unwrap();
        for i in 0..5 {
            let fwd = p.forward(data.augmented_row(i)).unwrap();
            assert!((feat.f0()[i] - fwd).abs() <= 1e-13 * fwd.abs().max(1.0));
            assert!((via_jacobian[i] - fwd).abs() <= 1e-12 * fwd.abs().max(1.0));
        }
    }

    #[test]
    fn already_interpolating_labels_keep_w0() {
        let data = circle_data(5, 2);
        let p = NetworkParams::initialize(60, 2, 1.0, 6).unwrap();
        let feat = GradientFeatures::build(&p, &data).unwrap();
        let f0: Vec<f64> = feat.f0().iter().copied().collect();
        let sol = feat.min_norm_solution(&p, &f0).unwrap();
        assert_eq!(sol.w_star, p.initial_weights());
    }

    #[test]
    fn lyapunov_at_solution_and_init() {
        let data = circle_data(5, 3);
        let p = NetworkParams::initialize(60, 2, 1.0, 7).unwrap();
        let feat = GradientFeatures::build(&p, &data).unwrap();
        let sol = feat.min_norm_solution(&p, data.labels()).unwrap();
        let at_star = feat.lyapunov(&sol, &sol.w_star).unwrap();
        assert_eq!((at_star.v_perp, at_star.v_par), (0.0, 0.0));
        let at_init = feat.lyapunov(&sol, p.initial_weights()).unwrap();
        let total = crate::linalg::dist_sq(p.initial_weights(), &sol.w_star);
        assert!(at_init.v_perp <= 1e-10 * total);
        assert!(!at_init.clamp_flagged);
    }

    #[test]
    fn dimension_checks() {
        let data = circle_data(4, 4);
        let p = NetworkParams::initialize(20, 2, 1.0, 8).unwrap();
        let feat = GradientFeatures::build(&p, &data).unwrap();
        assert!(feat.project_parallel(&[0.0; 3]).is_err());
        assert!(feat.min_norm_solution(&p, &[0.0; 3]).is_err());
        let wrong = NetworkParams::initialize(20, 3, 1.0, 8).unwrap();
        assert!(GradientFeatures::build(&wrong, &data).is_err());
    }

    #[test]
    fn degenerate_gram_reported() {
        // the only unit is inactive everywhere, so G = 0
        let data = circle_data(3, 5);
        let p = NetworkParams::from_parts(vec![0.0, 0.0, -1.0], vec![1.0], 2, 1.0).unwrap();
        let err = GradientFeatures::build(&p, &data).unwrap_err();
        assert!(matches!(err, Error::DegenerateGram { .. }), "{err:?}");
        assert!(err.is_numerical());
    }
}
