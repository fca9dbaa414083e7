//! Full-batch gradient descent on `L(w) = Σ_i (y_i − f(x_i, w))²` with the
//! update `w ← w − η ∇f (f − Y)` and the frozen output layer.
//!
//! The hot loop keeps the augmented inputs transposed (one contiguous row per
//! coordinate) so preactivations for a unit against every training point are
//! a handful of axpys. Reductions use fixed 4-lane accumulators, so results are
//! bitwise reproducible for a given build.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{check_dim, Error, Result};
use crate::linalg::dist_sq;
use crate::linearized::{GradientFeatures, MinNormSolution};
use crate::model::{LabeledDataset, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    #[default]
    Discrete,
    /// Euler discretization of `dw/dt = −∇f (f − Y)` with step `η`.
    FineStepFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once `‖f − Y‖² ≤ loss_tol`.
    pub loss_tol: f64,
    pub record_every: usize,
    pub mode: StepMode,
    /// When false every record's `wall_ms` is 0 and trajectories are a pure
    /// function of their inputs.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            max_iters: 50_000,
            loss_tol: 1e-3,
            record_every: 10,
            mode: StepMode::Discrete,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    /// Step size `η = c / (d n)²` from the discrete-time convergence analysis,
    /// with `c` estimated by `λ_min(G)`.
    pub fn conservative_schedule(lambda_min: f64, d: usize, n: usize) -> Self {
        let dn = (d * n) as f64;
        Self {
            step_size: lambda_min / (dn * dn),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid("step_size", "must be positive and finite"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        if !(self.loss_tol >= 0.0) {
            return Err(Error::invalid("loss_tol", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iter: usize,
    pub loss: f64,
    pub v_perp: f64,
    pub v_par: f64,
    pub dist_minnorm_sq: f64,
    pub dist_init_sq: f64,
    pub max_unit_drift: f64,
    pub sign_flips: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    /// `‖f_k − Y‖²` at every iterate `k = 0..=final_iter`.
    pub losses: Vec<f64>,
    /// `‖w_{k+1} − w_k‖` for every step taken.
    pub step_norms: Vec<f64>,
    pub converged: bool,
    pub step_size: f64,
    pub mode: StepMode,
    /// Number of records whose `V⊥` needed a flagged clamp.
    pub clamp_flags: usize,
}

impl Trajectory {
    pub fn final_iter(&self) -> usize {
        self.losses.len().saturating_sub(1)
    }

    pub fn terminal(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn terminal_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    /// Continuous time of iterate `k` in flow mode.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step_size
    }

    /// Steps `k` at which the loss went up: `L(w_{k+1}) > L(w_k)`.
    pub fn loss_increases(&self) -> Vec<usize> {
        self.losses
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0])
            .map(|(k, _)| k)
            .collect()
    }

    /// Path length `Σ_{k=from}^{to−1} ‖w_{k+1} − w_k‖`.
    pub fn movement_between(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.step_norms.len());
        if from >= to {
            return 0.0;
        }
        self.step_norms[from..to].iter().sum()
    }
}

#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct TrainFailure {
    pub error: Error,
    pub partial: Trajectory,
}

/// Scratch space for repeated gradient steps on one dataset.
#[derive(Debug, Clone)]
pub struct GdStepper {
    n: usize,
    row: usize,
    /// `row × n`, coordinate-major.
    columns: Vec<f64>,
    labels: Vec<f64>,
    pre: Vec<f64>,
    /// Words per unit in the activation bitsets.
    words: usize,
    /// Activation pattern at the initial weights, filled on first use.
    mask_init: Vec<u64>,
    /// Activation pattern from the last evaluation.
    mask: Vec<u64>,
    mask_fresh: bool,
    out: Vec<f64>,
    residual: Vec<f64>,
    gated: Vec<f64>,
    grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Loss at the weights before the step.
    pub loss: f64,
    /// `‖w_{k+1} − w_k‖`; zero when the step was skipped.
    pub step_norm: f64,
}

#[inline]
fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn pack_active(pre: &[f64], bits: &mut [u64]) {
    for (word, chunk) in bits.iter_mut().zip(pre.chunks(64)) {
        *word = chunk
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &z)| acc | (u64::from(z >= 0.0) << j));
    }
}

impl GdStepper {
    pub fn new(params: &NetworkParams, data: &LabeledDataset) -> Result<Self> {
        check_dim("dataset dimension", params.input_dim(), data.dim())?;
        let n = data.len();
        let row = params.row_len();
        let mut columns = vec![0.0; row * n];
        for i in 0..n {
            for (c, &v) in data.augmented_row(i).iter().enumerate() {
                columns[c * n + i] = v;
            }
        }
        Ok(Self {
            n,
            row,
            columns,
            labels: data.labels().to_vec(),
            pre: vec![0.0; n],
            words: n.div_ceil(64),
            mask_init: Vec::new(),
            mask: Vec::new(),
            mask_fresh: false,
            out: vec![0.0; n],
            residual: vec![0.0; n],
            gated: vec![0.0; n],
            grad: vec![0.0; row],
        })
    }

    fn preactivations(columns: &[f64], n: usize, wk: &[f64], pre: &mut [f64]) {
        pre.fill(0.0);
        for (c, &wc) in wk.iter().enumerate() {
            let col = &columns[c * n..(c + 1) * n];
            for (p, &x) in pre.iter_mut().zip(col) {
                *p += wc * x;
            }
        }
    }

    /// Network outputs at every training point into `self.out`; returns the loss.
    fn evaluate(&mut self, params: &NetworkParams) -> f64 {
        self.out.fill(0.0);
        self.mask.resize(params.width() * self.words, 0);
        for ((wk, &ak), bits) in params
            .weights()
            .chunks_exact(self.row)
            .zip(params.signs())
            .zip(self.mask.chunks_exact_mut(self.words))
        {
            Self::preactivations(&self.columns, self.n, wk, &mut self.pre);
            for (o, &z) in self.out.iter_mut().zip(&self.pre) {
                *o += ak * z.max(0.0);
            }
            pack_active(&self.pre, bits);
        }
        self.mask_fresh = true;
        let scale = params.output_scale();
        let mut loss = 0.0;
        for ((r, o), y) in self
            .residual
            .iter_mut()
            .zip(&mut self.out)
            .zip(&self.labels)
        {
            *o *= scale;
            *r = *o - y;
            loss += *r * *r;
        }
        loss
    }

    pub fn loss(&mut self, params: &NetworkParams) -> f64 {
        self.evaluate(params)
    }

    /// Current outputs `f(x_i, w)` after the last evaluation.
    pub fn outputs(&self) -> &[f64] {
        &self.out
    }

    /// Evaluates the network at the current weights and caches the residual
    /// for [`GdStepper::apply_update`]. Returns the loss.
    pub fn evaluate_loss(&mut self, params: &NetworkParams, iteration: usize) -> Result<f64> {
        let loss = self.evaluate(params);
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::Divergence { iteration })
        }
    }

    /// `w ← w − η Σ_i ∇f(x_i, w)(f(x_i, w) − y_i)` with the residual cached by
    /// the last evaluation and the activation pattern of the current weights.
    /// Returns `‖w_{k+1} − w_k‖`.
    pub fn apply_update(
        &mut self,
        params: &mut NetworkParams,
        eta: f64,
        iteration: usize,
    ) -> Result<f64> {
        if eta == 0.0 {
            return Ok(0.0);
        }
        let scale = params.output_scale();
        let row = self.row;
        let n = self.n;
        let signs = params.signs_shared();
        let mut moved_sq = 0.0;
        let words = self.words;
        let fresh = self.mask_fresh && self.mask.len() == signs.len() * words;
        self.mask_fresh = false;
        for (k, (wk, &ak)) in params
            .weights_mut()
            .chunks_exact_mut(row)
            .zip(signs.iter())
            .enumerate()
        {
            if fresh {
                let bits = &self.mask[k * words..(k + 1) * words];
                for ((gs, rs), &word) in self
                    .gated
                    .chunks_mut(64)
                    .zip(self.residual.chunks(64))
                    .zip(bits)
                {
                    for (j, (g, &r)) in gs.iter_mut().zip(rs).enumerate() {
                        *g = if word >> j & 1 == 1 { r } else { 0.0 };
                    }
                }
            } else {
                Self::preactivations(&self.columns, n, wk, &mut self.pre);
                for ((g, &z), &r) in self.gated.iter_mut().zip(&self.pre).zip(&self.residual) {
                    *g = if z >= 0.0 { r } else { 0.0 };
                }
            }
            for c in 0..row {
                self.grad[c] = lane_dot(&self.gated, &self.columns[c * n..(c + 1) * n]);
            }
            let coef = eta * ak * scale;
            for (w, g) in wk.iter_mut().zip(&self.grad) {
                let delta = coef * g;
                *w -= delta;
                moved_sq += delta * delta;
            }
        }
        if moved_sq.is_finite() {
            Ok(moved_sq.sqrt())
        } else {
            Err(Error::Divergence { iteration })
        }
    }

    /// Evaluate then update.
    pub fn step(
        &mut self,
        params: &mut NetworkParams,
        eta: f64,
        iteration: usize,
    ) -> Result<StepOutcome> {
        let loss = self.evaluate_loss(params, iteration)?;
        let step_norm = self.apply_update(params, eta, iteration)?;
        Ok(StepOutcome { loss, step_norm })
    }

    /// `Σ_i #{k : 1{w_k(0)ᵀx̃_i ≥ 0} ≠ 1{w_kᵀx̃_i ≥ 0}}`.
    pub fn sign_flip_total(&mut self, params: &NetworkParams) -> usize {
        let (row, n, words) = (self.row, self.n, self.words);
        if self.mask_init.len() != params.width() * words {
            self.mask_init.resize(params.width() * words, 0);
            for (w0, bits) in params
                .initial_weights()
                .chunks_exact(row)
                .zip(self.mask_init.chunks_exact_mut(words))
            {
                Self::preactivations(&self.columns, n, w0, &mut self.pre);
                pack_active(&self.pre, bits);
            }
        }
        if !(self.mask_fresh && self.mask.len() == self.mask_init.len()) {
            self.mask.resize(params.width() * words, 0);
            for (wk, bits) in params
                .weights()
                .chunks_exact(row)
                .zip(self.mask.chunks_exact_mut(words))
            {
                Self::preactivations(&self.columns, n, wk, &mut self.pre);
                pack_active(&self.pre, bits);
            }
        }
        self.mask
            .iter()
            .zip(&self.mask_init)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

/// Single gradient-descent step; returns the loss before the step.
pub fn gd_step(params: &mut NetworkParams, data: &LabeledDataset, eta: f64) -> Result<f64> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::invalid(
            "step_size",
            "must be non-negative and finite",
        ));
    }
    let mut stepper = GdStepper::new(params, data)?;
    Ok(stepper.step(params, eta, 0)?.loss)
}

fn make_record(
    stepper: &mut GdStepper,
    params: &NetworkParams,
    features: &GradientFeatures,
    sol: &MinNormSolution,
    iter: usize,
    loss: f64,
    wall_ms: u64,
) -> Result<(TrajectoryRecord, bool)> {
    let lyap = features.lyapunov(sol, params.weights())?;
    Ok((
        TrajectoryRecord {
            iter,
            loss,
            v_perp: lyap.v_perp,
            v_par: lyap.v_par,
            dist_minnorm_sq: dist_sq(params.weights(), &sol.w_star),
            dist_init_sq: params.dist_to_init_sq(),
            max_unit_drift: params.max_unit_drift(),
            sign_flips: stepper.sign_flip_total(params),
            wall_ms,
        },
        lyap.clamp_flagged,
    ))
}

/// Runs gradient descent until `loss ≤ loss_tol` or `max_iters`, recording
/// diagnostics at iteration 0, every `record_every` iterations and at the end.
/// The terminal weights stay in `params`.
#[allow(clippy::result_large_err)]
pub fn train(
    params: &mut NetworkParams,
    data: &LabeledDataset,
    config: &TrainConfig,
    features: &GradientFeatures,
    sol: &MinNormSolution,
) -> std::result::Result<Trajectory, TrainFailure> {
    let mut traj = Trajectory {
        step_size: config.step_size,
        mode: config.mode,
        ..Trajectory::default()
    };
    let fail = |error: Error, partial: Trajectory| TrainFailure { error, partial };
    if let Err(e) = config.validate() {
        return Err(fail(e, traj));
    }
    if let Err(e) = check_dim("min-norm solution", params.num_weights(), sol.w_star.len()) {
        return Err(fail(e, traj));
    }
    if config.mode == StepMode::FineStepFlow {
        let guide = 1e-3 / (data.dim() * data.len()) as f64;
        if config.step_size > guide {
            log::warn!(
                "flow mode step {} exceeds the Euler guidance {guide:e}",
                config.step_size
            );
        }
    }
    let mut stepper = match GdStepper::new(params, data) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, traj)),
    };
    let start = Instant::now();
    let clock = |start: &Instant| {
        if config.record_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    };

    let mut k = 0;
    loop {
        let loss = match stepper.evaluate_loss(params, k) {
            Ok(l) => l,
            Err(e) => return Err(fail(e, traj)),
        };
        traj.losses.push(loss);
        let done = loss <= config.loss_tol || k >= config.max_iters;
        if k % config.record_every == 0 || done {
            match make_record(&mut stepper, params, features, sol, k, loss, clock(&start)) {
                Ok((rec, flagged)) => {
                    traj.records.push(rec);
                    traj.clamp_flags += flagged as usize;
                }
                Err(e) => return Err(fail(e, traj)),
            }
        }
        if done {
            traj.converged = loss <= config.loss_tol;
            break;
        }
        match stepper.apply_update(params, config.step_size, k) {
            Ok(norm) => traj.step_norms.push(norm),
            Err(e) => return Err(fail(e, traj)),
        }
        k += 1;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::augment;

    fn toy() -> (NetworkParams, LabeledDataset) {
        let data = LabeledDataset::new(
            vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![-0.6, 0.8],
                vec![0.8, -0.6],
            ],
            vec![0.5, -0.3, 0.2, 0.1],
        )
        .unwrap();
        (NetworkParams::initialize(40, 2, 1.0, 9).unwrap(), data)
    }

    fn loss_at(params: &NetworkParams, data: &LabeledDataset) -> f64 {
        (0..data.len())
            .map(|i| {
                let r = params.forward(data.augmented_row(i)).unwrap() - data.labels()[i];
                r * r
            })
            .sum()
    }

    #[test]
    fn zero_step_keeps_weights() {
        let (mut p, data) = toy();
        let before = p.weights().to_vec();
        let loss = gd_step(&mut p, &data, 0.0).unwrap();
        assert_eq!(p.weights(), &before[..]);
        assert!((loss - loss_at(&p, &data)).abs() < 1e-12);
        assert!(gd_step(&mut p, &data, -1.0).is_err());
        assert!(gd_step(&mut p, &data, f64::NAN).is_err());
    }

    #[test]
    fn zero_residual_keeps_weights() {
        let (p, data) = toy();
        let mut st = GdStepper::new(&p, &data).unwrap();
        st.loss(&p);
        let outputs = st.outputs().to_vec();
        let fitted = data.with_labels(outputs).unwrap();
        let mut q = p.clone();
        let loss = gd_step(&mut q, &fitted, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(q.weights(), p.weights());
    }

    #[test]
    fn update_matches_finite_difference_gradient() {
        let (p, data) = toy();
        let eta = 1e-3;
        let mut q = p.clone();
        gd_step(&mut q, &data, eta).unwrap();
        let h = 1e-6;
        let w = p.weights().to_vec();
        for j in 0..w.len() {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[j] += h;
            minus[j] -= h;
            let lp = loss_at(&p.with_current_weights(plus).unwrap(), &data);
            let lm = loss_at(&p.with_current_weights(minus).unwrap(), &data);
            let grad = (lp - lm) / (2.0 * h);
            let expected = w[j] - 0.5 * eta * grad;
            assert!(
                (q.weights()[j] - expected).abs() < 1e-8,
                "coordinate {j}: {} vs {expected}",
                q.weights()[j]
            );
        }
    }

    #[test]
    fn stepper_outputs_match_forward() {
        let (p, data) = toy();
        let mut st = GdStepper::new(&p, &data).unwrap();
        let loss = st.loss(&p);
        for i in 0..data.len() {
            let f = p.forward(&augment(data.input(i))).unwrap();
            assert!((st.outputs()[i] - f).abs() < 1e-12);
        }
        assert!((loss - loss_at(&p, &data)).abs() < 1e-12);
    }

    #[test]
    fn flip_count_matches_pointwise_count() {
        let (mut p, data) = toy();
        let mut st = GdStepper::new(&p, &data).unwrap();
        for k in 0..50 {
            st.step(&mut p, 0.5, k).unwrap();
        }
        let direct: usize = (0..data.len())
            .map(|i| p.sign_flip_count(data.augmented_row(i)).unwrap())
            .sum();
        assert_eq!(st.sign_flip_total(&p), direct);
        st.loss(&p);
        assert_eq!(st.sign_flip_total(&p), direct);
    }

    #[test]
    fn training_is_deterministic_and_records_schedule() {
        let (p, data) = toy();
        let features = GradientFeatures::build(&p, &data).unwrap();
        let sol = features.min_norm_solution(&p, data.labels()).unwrap();
        let config = TrainConfig {
            step_size: 0.2,
            max_iters: 95,
            loss_tol: 0.0,
            record_every: 10,
            ..TrainConfig::default()
        };
        let mut a = p.clone();
        let mut b = p.clone();
        let ta = train(&mut a, &data, &config, &features, &sol).unwrap();
        let tb = train(&mut b, &data, &config, &features, &sol).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.weights(), b.weights());
        let iters: Vec<usize> = ta.records.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]);
        assert!(!ta.converged);
        assert_eq!(ta.losses.len(), 96);
        assert_eq!(ta.step_norms.len(), 95);
        assert!(ta.records.iter().all(|r| r.wall_ms == 0));
        assert_eq!(ta.records[0].dist_init_sq, 0.0);
    }

    #[test]
    fn stops_at_tolerance() {
        let (p, data) = toy();
        let features = GradientFeatures::build(&p, &data).unwrap();
        let sol = features.min_norm_solution(&p, data.labels()).unwrap();
        let config = TrainConfig {
            step_size: 0.2,
            max_iters: 100_000,
            loss_tol: 1e-6,
            record_every: 1000,
            ..TrainConfig::default()
        };
        let mut q = p.clone();
        let t = train(&mut q, &data, &config, &features, &sol).unwrap();
        assert!(t.converged);
        assert!(t.terminal_loss() <= 1e-6);
        assert!(t.losses[t.losses.len() - 2] > 1e-6);
        assert!((loss_at(&q, &data) - t.terminal_loss()).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_reported_with_partial_trajectory() {
        let (p, data) = toy();
        let features = GradientFeatures::build(&p, &data).unwrap();
        let sol = features.min_norm_solution(&p, data.labels()).unwrap();
        let config = TrainConfig {
            step_size: 1e300,
            max_iters: 10_000,
            loss_tol: 0.0,
            record_every: 1,
            ..TrainConfig::default()
        };
        let mut q = p.clone();
        let err = train(&mut q, &data, &config, &features, &sol).unwrap_err();
        assert!(matches!(err.error, Error::Divergence { .. }));
        assert!(!err.partial.records.is_empty());
    }

    #[test]
    fn invalid_config_names_field() {
        let bad = TrainConfig {
            step_size: -1.0,
            ..TrainConfig::default()
        };
        match bad.validate() {
            Err(Error::InvalidArgument { field, .. }) => assert_eq!(field, "step_size"),
            other => panic!("{other:?}"),
        }
        let bad = TrainConfig {
            record_every: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
