//! The shallow ReLU network `f(x, w) = m^{-1/2} Σ_k a_k max(w_kᵀx̃, 0)` with
//! bias absorbed into the last weight coordinate (`x̃ = [x, 1]`).
//!
//! Weights are stored flattened unit-major: coordinates `k(d+1)..(k+1)(d+1)`
//! belong to hidden unit `k`. The projection algebra in `linearized` relies on
//! this layout.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist_sq, dot, norm_sq};

/// Append the bias coordinate: `x̃ = [x, 1]`.
pub fn augment(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    v
}

/// ReLU derivative with the tie convention `σ'(0) = 1`.
#[inline]
pub fn relu_active(z: f64) -> bool {
    z >= 0.0
}

const RADIUS_REL_TOL: f64 = 1e-9;
const PARALLEL_SLACK: f64 = 1e-12;

/// Training inputs on a common sphere, their augmentations and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    n: usize,
    d: usize,
    inputs: Vec<f64>,
    augmented: Vec<f64>,
    labels: Vec<f64>,
    input_radius: f64,
    label_bound: f64,
}

impl LabeledDataset {
    /// Validates the common-radius and non-parallel invariants. `C_y` is
    /// recorded as `max_i |y_i|`.
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::invalid("inputs", "dataset needs at least one point"));
        }
        let d = inputs[0].len();
        let mut flat = Vec::with_capacity(n * d);
        for row in &inputs {
            check_dim("input row", d, row.len())?;
            flat.extend_from_slice(row);
        }
        Self::from_flat(d, flat, labels)
    }

    pub fn from_flat(d: usize, inputs: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "input dimension must be at least 1"));
        }
        if !inputs.len().is_multiple_of(d) {
            return Err(Error::invalid("inputs", "length is not a multiple of d"));
        }
        let n = inputs.len() / d;
        if n == 0 {
            return Err(Error::invalid("inputs", "dataset needs at least one point"));
        }
        check_dim("labels", n, labels.len())?;
        if let Some(bad) = labels.iter().position(|y| !y.is_finite()) {
            return Err(Error::invalid(
                "labels",
                format!("label {bad} is not finite"),
            ));
        }

        let norms: Vec<f64> = inputs.chunks_exact(d).map(|r| norm_sq(r).sqrt()).collect();
        let radius = norms[0];
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(
                "inputs",
                "input radius must be positive and finite",
            ));
        }
        for (index, &norm) in norms.iter().enumerate() {
            if (norm - radius).abs() > RADIUS_REL_TOL * radius {
                return Err(Error::RadiusMismatch {
                    index,
                    norm,
                    radius,
                });
            }
        }
        let rows: Vec<&[f64]> = inputs.chunks_exact(d).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let ip = dot(rows[i], rows[j]).abs();
                if !(ip < norms[i] * norms[j] - PARALLEL_SLACK) {
                    return Err(Error::ParallelPoints { i, j });
                }
            }
        }

        let augmented = rows.iter().flat_map(|r| augment(r)).collect();
        let label_bound = labels.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        Ok(Self {
            n,
            d,
            inputs,
            augmented,
            labels,
            input_radius: radius,
            label_bound,
        })
    }

    /// Same inputs, new labels.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        check_dim("labels", self.n, labels.len())?;
        let label_bound = labels.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        Ok(Self {
            labels,
            label_bound,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    pub fn augmented_row(&self, i: usize) -> &[f64] {
        let w = self.d + 1;
        &self.augmented[i * w..(i + 1) * w]
    }

    pub fn augmented(&self) -> &[f64] {
        &self.augmented
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn input_radius(&self) -> f64 {
        self.input_radius
    }

    /// `C_y = max_i |y_i|`.
    pub fn label_bound(&self) -> f64 {
        self.label_bound
    }
}

/// Which weight snapshot an evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSet {
    Initial,
    Current,
}

/// Hidden weights, frozen output signs and the retained initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    width: usize,
    input_dim: usize,
    init_scale: f64,
    weights: Vec<f64>,
    initial: Arc<[f64]>,
    signs: Arc<[f64]>,
}

impl NetworkParams {
    /// Draws every one of the `m(d+1)` weight coordinates (bias included) from
    /// `N(0, κ²)` and each sign uniformly from `{±1}`.
    pub fn initialize(width: usize, input_dim: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("width", "must be at least 1"));
        }
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if !(init_scale > 0.0) || !init_scale.is_finite() {
            return Err(Error::invalid("init_scale", "must be positive and finite"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = (0..width * (input_dim + 1))
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                init_scale * z
            })
            .collect();
        let coin = Bernoulli::new(0.5).expect("valid probability");
        let signs: Vec<f64> = (0..width)
            .map(|_| if coin.sample(&mut rng) { 1.0 } else { -1.0 })
            .collect();
        Ok(Self {
            width,
            input_dim,
            init_scale,
            initial: weights.clone().into(),
            weights,
            signs: signs.into(),
        })
    }

    /// Build from explicit weights; these also become `w(0)`.
    pub fn from_parts(
        weights: Vec<f64>,
        signs: Vec<f64>,
        input_dim: usize,
        init_scale: f64,
    ) -> Result<Self> {
        let width = signs.len();
        if width == 0 {
            return Err(Error::invalid("width", "must be at least 1"));
        }
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        check_dim("weights", width * (input_dim + 1), weights.len())?;
        if signs.iter().any(|&a| a != 1.0 && a != -1.0) {
            return Err(Error::invalid("signs", "entries must be exactly +1 or -1"));
        }
        Ok(Self {
            width,
            input_dim,
            init_scale,
            initial: weights.clone().into(),
            weights,
            signs: signs.into(),
        })
    }

    /// Copy of these params with different current weights; `w(0)` and the
    /// signs are shared.
    pub fn with_current_weights(&self, weights: Vec<f64>) -> Result<Self> {
        check_dim("weights", self.num_weights(), weights.len())?;
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Length of a unit's weight row, `d + 1`.
    pub fn row_len(&self) -> usize {
        self.input_dim + 1
    }

    pub fn num_weights(&self) -> usize {
        self.width * self.row_len()
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn initial_weights(&self) -> &[f64] {
        &self.initial
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub(crate) fn signs_shared(&self) -> Arc<[f64]> {
        Arc::clone(&self.signs)
    }

    pub fn weight_set(&self, which: WeightSet) -> &[f64] {
        match which {
            WeightSet::Initial => &self.initial,
            WeightSet::Current => &self.weights,
        }
    }

    /// `1/√m`.
    pub fn output_scale(&self) -> f64 {
        1.0 / (self.width as f64).sqrt()
    }

    fn check_point(&self, x_aug: &[f64]) -> Result<()> {
        check_dim("augmented input", self.row_len(), x_aug.len())
    }

    pub fn forward(&self, x_aug: &[f64]) -> Result<f64> {
        self.forward_with(WeightSet::Current, x_aug)
    }

    pub fn forward_with(&self, which: WeightSet, x_aug: &[f64]) -> Result<f64> {
        self.check_point(x_aug)?;
        Ok(forward_unchecked(
            self.weight_set(which),
            &self.signs,
            self.row_len(),
            x_aug,
        ))
    }

    /// Network output at a raw (non-augmented) input.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim("input", self.input_dim, x.len())?;
        self.forward(&augment(x))
    }

    /// `∇_w f(x̃, w)`: block `k` is `(a_k/√m) 1{w_kᵀx̃ ≥ 0} x̃`.
    pub fn gradient_features(&self, x_aug: &[f64], which: WeightSet) -> Result<Vec<f64>> {
        self.check_point(x_aug)?;
        let mut out = vec![0.0; self.num_weights()];
        self.gradient_features_into(which, x_aug, &mut out);
        Ok(out)
    }

    pub(crate) fn gradient_features_into(&self, which: WeightSet, x_aug: &[f64], out: &mut [f64]) {
        let row = self.row_len();
        let scale = self.output_scale();
        let w = self.weight_set(which);
        for ((wk, &ak), block) in w
            .chunks_exact(row)
            .zip(self.signs.iter())
            .zip(out.chunks_exact_mut(row))
        {
            if relu_active(dot(wk, x_aug)) {
                let c = ak * scale;
                for (o, &x) in block.iter_mut().zip(x_aug) {
                    *o = c * x;
                }
            } else {
                block.fill(0.0);
            }
        }
    }

    /// First-order expansion around `w(0)`:
    /// `m^{-1/2} Σ_k a_k 1{w_k(0)ᵀx̃ ≥ 0} (w_query)_kᵀ x̃`.
    pub fn linearized_forward(&self, w_query: &[f64], x_aug: &[f64]) -> Result<f64> {
        check_dim("query weights", self.num_weights(), w_query.len())?;
        self.check_point(x_aug)?;
        let row = self.row_len();
        let mut acc = 0.0;
        for ((w0, wq), &ak) in self
            .initial
            .chunks_exact(row)
            .zip(w_query.chunks_exact(row))
            .zip(self.signs.iter())
        {
            if relu_active(dot(w0, x_aug)) {
                acc += ak * dot(wq, x_aug);
            }
        }
        Ok(acc * self.output_scale())
    }

    /// Units whose activation at `x̃` differs between `w(0)` and the current `w`.
    pub fn sign_flip_count(&self, x_aug: &[f64]) -> Result<usize> {
        self.check_point(x_aug)?;
        let row = self.row_len();
        Ok(self
            .initial
            .chunks_exact(row)
            .zip(self.weights.chunks_exact(row))
            .filter(|(w0, w)| relu_active(dot(w0, x_aug)) != relu_active(dot(w, x_aug)))
            .count())
    }

    /// `‖w − w(0)‖²`.
    pub fn dist_to_init_sq(&self) -> f64 {
        dist_sq(&self.weights, &self.initial)
    }

    /// `max_k ‖w_k − w_k(0)‖`.
    pub fn max_unit_drift(&self) -> f64 {
        let row = self.row_len();
        self.weights
            .chunks_exact(row)
            .zip(self.initial.chunks_exact(row))
            .map(|(w, w0)| dist_sq(w, w0))
            .fold(0.0f64, f64::max)
            .sqrt()
    }
}

pub(crate) fn forward_unchecked(weights: &[f64], signs: &[f64], row: usize, x_aug: &[f64]) -> f64 {
    let acc: f64 = weights
        .chunks_exact(row)
        .zip(signs)
        .map(|(wk, &ak)| ak * dot(wk, x_aug).max(0.0))
        .sum();
    acc / (signs.len() as f64).sqrt()
}
