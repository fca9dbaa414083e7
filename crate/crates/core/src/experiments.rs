//! Synthetic data, Monte Carlo risk estimates and the width / sample-size
//! sweeps built on top of the trainer.
//!
//! Seeds: one base seed per problem fans out through [`derive_seed`] into
//! independent streams for the target coefficients, the training inputs, the
//! network initialization and the test sample. Training inputs are drawn
//! sequentially, so a smaller `n` with the same seed is a prefix of a larger one.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{feature_coefficients, kernel_matrix, ntk, ntk_series, KernelRegressor};
use crate::linalg::{dot, norm_sq, spectral_norm_symmetric};
use crate::linearized::{empirical_gram, GradientFeatures};
use crate::model::{augment, LabeledDataset, NetworkParams, WeightSet};
use crate::stats::{self, derive_seed};
use crate::trainer::{train, TrainConfig, Trajectory, TrajectoryRecord};

const STREAM_BETA: u64 = 1;
const STREAM_INPUTS: u64 = 2;
const STREAM_TEST: u64 = 4;
const MAX_POINT_RETRIES: usize = 100;
/// `|cos ∠(x_i, x_j)|` above this counts as a collision when sampling.
const COLLISION_COS: f64 = 1.0 - 1e-9;

pub const DEFAULT_TEST_SIZE: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputRadius {
    #[default]
    Unit,
    SqrtD,
}

impl InputRadius {
    pub fn value(self, d: usize) -> f64 {
        match self {
            InputRadius::Unit => 1.0,
            InputRadius::SqrtD => (d as f64).sqrt(),
        }
    }
}

/// A target function of the input.
pub type TargetFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `y = (xᵀβ)^degree`. `beta` is drawn uniformly from `[−1, 1]^d` (and
    /// rescaled to `‖β‖ ≤ 1`) when not given.
    Poly {
        degree: u32,
        #[serde(default)]
        beta: Option<Vec<f64>>,
    },
    #[serde(skip)]
    Custom(TargetFn),
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Poly { degree, beta } => f
                .debug_struct("Poly")
                .field("degree", degree)
                .field("beta", beta)
                .finish(),
            Target::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub target: Target,
    pub normalize_labels: bool,
    pub input_radius: InputRadius,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `n = 100` points in `d = 5`, unit norm, `y = (xᵀβ)²` standardized.
    pub fn figure1(seed: u64) -> Self {
        Self {
            n: 100,
            d: 5,
            target: Target::Poly {
                degree: 2,
                beta: None,
            },
            normalize_labels: true,
            input_radius: InputRadius::Unit,
            seed,
        }
    }
}

/// The noiseless target as actually used, including label standardization.
#[derive(Clone)]
pub struct FittedTarget {
    raw: TargetFn,
    pub beta: Option<Vec<f64>>,
    pub beta_rescaled: bool,
    pub shift: f64,
    pub scale: f64,
}

impl std::fmt::Debug for FittedTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FittedTarget")
            .field("beta", &self.beta)
            .field("beta_rescaled", &self.beta_rescaled)
            .field("shift", &self.shift)
            .field("scale", &self.scale)
            .finish()
    }
}

impl FittedTarget {
    pub fn eval(&self, x: &[f64]) -> f64 {
        ((self.raw)(x) - self.shift) / self.scale
    }
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    pub data: LabeledDataset,
    pub target: FittedTarget,
    pub d: usize,
    pub radius: f64,
}

/// One draw from the input law: uniform on `[−1, 1]^d`, projected to the
/// sphere of the given radius.
pub fn sample_input<R: Rng>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = norm_sq(&u).sqrt();
        if norm > 1e-12 {
            return u.into_iter().map(|v| radius * v / norm).collect();
        }
    }
}

fn collides(candidate: &[f64], accepted: &[Vec<f64>], radius: f64) -> bool {
    let r2 = radius * radius;
    accepted
        .iter()
        .any(|x| dot(candidate, x).abs() >= COLLISION_COS * r2)
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<Synthesized> {
    if spec.n < 2 {
        return Err(Error::invalid("n", "need at least two points"));
    }
    if spec.d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    let d = spec.d;
    let radius = spec.input_radius.value(d);

    let (raw, beta, beta_rescaled): (TargetFn, Option<Vec<f64>>, bool) = match &spec.target {
        Target::Poly { degree, beta } => {
            let (beta, rescaled) = match beta {
                Some(b) => {
                    if b.len() != d {
                        return Err(Error::DimensionMismatch {
                            what: "beta",
                            expected: d,
                            got: b.len(),
                        });
                    }
                    (b.clone(), false)
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_BETA));
                    let mut b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    let norm = norm_sq(&b).sqrt();
                    let rescale = norm > 1.0;
                    if rescale {
                        b.iter_mut().for_each(|v| *v /= norm);
                    }
                    (b, rescale)
                }
            };
            let degree = *degree as i32;
            let coeffs = beta.clone();
            (
                Arc::new(move |x: &[f64]| dot(x, &coeffs).powi(degree)),
                Some(beta),
                rescaled,
            )
        }
        Target::Custom(f) => (Arc::clone(f), None, false),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_INPUTS));
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(spec.n);
    while inputs.len() < spec.n {
        let mut attempts = 0;
        let x = loop {
            let x = sample_input(&mut rng, d, radius);
            if !collides(&x, &inputs, radius) {
                break x;
            }
            attempts += 1;
            if attempts >= MAX_POINT_RETRIES {
                return Err(Error::RetryExhausted { attempts });
            }
        };
        inputs.push(x);
    }

    let raw_labels: Vec<f64> = inputs.iter().map(|x| raw(x)).collect();
    let (shift, scale) = if spec.normalize_labels {
        let mu = stats::mean(&raw_labels);
        let var =
            raw_labels.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / raw_labels.len() as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mu.abs().max(1.0)) {
            return Err(Error::ZeroVariance);
        }
        (mu, sd)
    } else {
        (0.0, 1.0)
    };
    let labels = raw_labels.iter().map(|y| (y - shift) / scale).collect();
    let data = LabeledDataset::new(inputs, labels)?;
    Ok(Synthesized {
        data,
        target: FittedTarget {
            raw,
            beta,
            beta_rescaled,
            shift,
            scale,
        },
        d,
        radius,
    })
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        Self {
            mean: stats::mean(values),
            std_err: if n > 1 {
                stats::std_dev(values) / (n as f64).sqrt()
            } else {
                0.0
            },
            samples: n,
        }
    }
}

/// Fresh test inputs from the problem's input law.
pub fn test_inputs(d: usize, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TEST));
    (0..count)
        .map(|_| sample_input(&mut rng, d, radius))
        .collect()
}

/// `E_x (y − predictor(x))²` over `n_test` fresh noiseless samples.
pub fn generalization_error<F>(
    predictor: F,
    problem: &Synthesized,
    n_test: usize,
    seed: u64,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64,
{
    if n_test == 0 {
        return Err(Error::invalid("n_test", "must be at least 1"));
    }
    let values: Vec<f64> = test_inputs(problem.d, problem.radius, n_test, seed)
        .iter()
        .map(|x| {
            let r = problem.target.eval(x) - predictor(x);
            r * r
        })
        .collect();
    Ok(Estimate::from_values(&values))
}

/// `E_x (f(x, w) − f_KR(x))²` over fresh inputs from the dataset's sphere.
pub fn f_vs_fkr_gap(
    params: &NetworkParams,
    data: &LabeledDataset,
    n_test: usize,
    seed: u64,
) -> Result<Estimate> {
    let kr = KernelRegressor::fit(data)?;
    f_vs_fkr_gap_with(params, &kr, data, n_test, seed)
}

pub fn f_vs_fkr_gap_with(
    params: &NetworkParams,
    kr: &KernelRegressor,
    data: &LabeledDataset,
    n_test: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_test == 0 {
        return Err(Error::invalid("n_test", "must be at least 1"));
    }
    let mut values = Vec::with_capacity(n_test);
    for x in test_inputs(data.dim(), data.input_radius(), n_test, seed) {
        let r = params.predict(&x)? - kr.predict(&x)?;
        values.push(r * r);
    }
    Ok(Estimate::from_values(&values))
}

/// Grid coordinates of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SweepCell {
    pub width: usize,
    pub n: usize,
    pub degree: u32,
    pub seed: u64,
}

/// How a sweep picks the gradient-descent step size for each cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Use the configured `step_size` as is.
    #[default]
    Fixed,
    /// `η = c / λ_max(G)` with `G` the Gram matrix at initialization.
    GramScaled(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub init_seed: u64,
    pub step_size: f64,
    pub jitter: f64,
    pub terminal_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub loss_increases: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: SweepCell,
    pub terminal: Option<TrajectoryRecord>,
    pub trajectory: Option<Trajectory>,
    pub generalization: Option<Estimate>,
    pub fkr_gap: Option<Estimate>,
    pub manifest: Option<CellManifest>,
    pub error: Option<String>,
}

impl CellOutcome {
    fn failed(cell: SweepCell, error: String) -> Self {
        Self {
            cell,
            terminal: None,
            trajectory: None,
            generalization: None,
            fkr_gap: None,
            manifest: None,
            error: Some(error),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SweepResult {
    /// Sorted by cell coordinates.
    pub cells: Vec<CellOutcome>,
    /// Filled in by callers that canonicalize their configuration.
    pub config_hash: String,
}

impl SweepResult {
    fn from_cells(mut cells: Vec<CellOutcome>) -> Self {
        cells.sort_by_key(|c| c.cell);
        Self {
            cells,
            config_hash: String::new(),
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| !c.ok())
    }

    /// Median over seeds of `metric`, one value per distinct `key`.
    pub fn median_by<K, F>(&self, key: K, metric: F) -> Vec<(usize, f64)>
    where
        K: Fn(&SweepCell) -> usize,
        F: Fn(&CellOutcome) -> Option<f64>,
    {
        let mut keys: Vec<usize> = self.cells.iter().map(|c| key(&c.cell)).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter()
            .map(|k| {
                let vals: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| key(&c.cell) == k)
                    .filter_map(&metric)
                    .collect();
                (k, stats::median(&vals))
            })
            .collect()
    }
}

/// What to measure after training a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Extras {
    generalization: bool,
    fkr_gap: bool,
    keep_trajectory: bool,
}

/// Initialize, linearize, train and measure one cell.
fn run_cell(
    problem: &Synthesized,
    cell: SweepCell,
    init_scale: f64,
    train_config: &TrainConfig,
    step_rule: StepRule,
    n_test: usize,
    extras: Extras,
) -> CellOutcome {
    let start = Instant::now();
    let init_seed = cell.seed;
    let result = (|| -> std::result::Result<CellOutcome, String> {
        let data = &problem.data;
        let mut params = NetworkParams::initialize(cell.width, data.dim(), init_scale, init_seed)
            .map_err(|e| e.to_string())?;
        let features = GradientFeatures::build(&params, data).map_err(|e| e.to_string())?;
        let sol = features
            .min_norm_solution(&params, data.labels())
            .map_err(|e| e.to_string())?;
        let mut config = train_config.clone();
        if let StepRule::GramScaled(c) = step_rule {
            config.step_size = c / spectral_norm_symmetric(features.gram(), 1e-10, 10_000);
        }
        let traj = train(&mut params, data, &config, &features, &sol).map_err(|f| f.to_string())?;
        let jitter = features.jitter();
        drop(features);
        let generalization = if extras.generalization {
            let p = &params;
            Some(
                generalization_error(
                    |x| p.predict(x).unwrap_or(f64::NAN),
                    problem,
                    n_test,
                    cell.seed,
                )
                .map_err(|e| e.to_string())?,
            )
        } else {
            None
        };
        let fkr_gap = if extras.fkr_gap {
            Some(f_vs_fkr_gap(&params, data, n_test, cell.seed).map_err(|e| e.to_string())?)
        } else {
            None
        };
        let manifest = CellManifest {
            init_seed,
            step_size: config.step_size,
            jitter,
            terminal_loss: traj.terminal_loss(),
            iterations: traj.final_iter(),
            converged: traj.converged,
            loss_increases: traj.loss_increases().len(),
            wall_ms: start.elapsed().as_millis() as u64,
        };
        Ok(CellOutcome {
            cell,
            terminal: traj.terminal().copied(),
            trajectory: extras.keep_trajectory.then_some(traj),
            generalization,
            fkr_gap,
            manifest: Some(manifest),
            error: None,
        })
    })();
    result.unwrap_or_else(|e| {
        log::warn!("cell {cell:?} failed: {e}");
        CellOutcome::failed(cell, e)
    })
}

/// Width sweep on the standard synthetic problem: one dataset, several
/// initializations per width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure1Config {
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub init_scale: f64,
    pub train: TrainConfig,
}

impl Default for Figure1Config {
    fn default() -> Self {
        Self {
            widths: vec![1000, 2000, 5000, 10_000],
            seeds: (1..=5).collect(),
            data_seed: 2021,
            init_scale: 1.0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Trends {
    pub widths: Vec<usize>,
    pub median_v_perp: Vec<f64>,
    pub median_dist_minnorm_sq: Vec<f64>,
    pub median_dist_init_sq: Vec<f64>,
    pub median_max_unit_drift: Vec<f64>,
    pub v_perp_non_increasing: bool,
    pub dist_minnorm_non_increasing: bool,
    /// Reported only; no monotonicity is expected.
    pub dist_init_non_increasing: bool,
    pub all_converged: bool,
    pub loss_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Result {
    pub sweep: SweepResult,
    pub trends: Figure1Trends,
}

fn terminal_metric(f: impl Fn(&TrajectoryRecord) -> f64) -> impl Fn(&CellOutcome) -> Option<f64> {
    move |c: &CellOutcome| c.terminal.as_ref().map(&f)
}

pub fn reproduce_figure1(config: &Figure1Config) -> Result<Figure1Result> {
    config.train.validate()?;
    let problem = synthesize(&SyntheticSpec::figure1(config.data_seed))?;
    let cells: Vec<SweepCell> = config
        .widths
        .iter()
        .flat_map(|&width| {
            config.seeds.iter().map(move |&seed| SweepCell {
                width,
                n: 100,
                degree: 2,
                seed,
            })
        })
        .collect();
    let extras = Extras {
        keep_trajectory: true,
        ..Extras::default()
    };
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&cell| {
            run_cell(
                &problem,
                cell,
                config.init_scale,
                &config.train,
                StepRule::Fixed,
                0,
                extras,
            )
        })
        .collect();
    let sweep = SweepResult::from_cells(outcomes);
    let by_width = |f: fn(&TrajectoryRecord) -> f64| -> Vec<f64> {
        sweep
            .median_by(|c| c.width, terminal_metric(f))
            .into_iter()
            .map(|(_, v)| v)
            .collect()
    };
    let mut widths = config.widths.clone();
    widths.sort_unstable();
    widths.dedup();
    let median_v_perp = by_width(|r| r.v_perp);
    let median_dist_minnorm_sq = by_width(|r| r.dist_minnorm_sq);
    let median_dist_init_sq = by_width(|r| r.dist_init_sq);
    let median_max_unit_drift = by_width(|r| r.max_unit_drift);
    let all_ok = sweep.failures().next().is_none();
    let trends = Figure1Trends {
        v_perp_non_increasing: all_ok && stats::is_non_increasing(&median_v_perp),
        dist_minnorm_non_increasing: all_ok && stats::is_non_increasing(&median_dist_minnorm_sq),
        dist_init_non_increasing: stats::is_non_increasing(&median_dist_init_sq),
        all_converged: all_ok
            && sweep
                .cells
                .iter()
                .all(|c| c.manifest.as_ref().is_some_and(|m| m.converged)),
        loss_monotone: all_ok
            && sweep
                .cells
                .iter()
                .all(|c| c.manifest.as_ref().is_some_and(|m| m.loss_increases == 0)),
        widths,
        median_v_perp,
        median_dist_minnorm_sq,
        median_dist_init_sq,
        median_max_unit_drift,
    };
    Ok(Figure1Result { sweep, trends })
}

/// Gap between the trained network and kernel regression across widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapSweepConfig {
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub data_seed: u64,
    pub init_scale: f64,
    pub n_test: usize,
    pub step_rule: StepRule,
    pub train: TrainConfig,
}

impl Default for GapSweepConfig {
    fn default() -> Self {
        Self {
            widths: vec![1000, 10_000],
            seeds: (1..=5).collect(),
            n: 50,
            data_seed: 2021,
            init_scale: 0.01,
            n_test: DEFAULT_TEST_SIZE,
            step_rule: StepRule::GramScaled(1.8),
            train: TrainConfig {
                loss_tol: 1e-8,
                max_iters: 200_000,
                record_every: 1000,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSweepResult {
    pub sweep: SweepResult,
    pub widths: Vec<usize>,
    pub median_gap: Vec<f64>,
    pub strictly_decreasing: bool,
}

pub fn gap_sweep(config: &GapSweepConfig) -> Result<GapSweepResult> {
    config.train.validate()?;
    let problem = synthesize(&SyntheticSpec {
        n: config.n,
        ..SyntheticSpec::figure1(config.data_seed)
    })?;
    let cells: Vec<SweepCell> = config
        .widths
        .iter()
        .flat_map(|&width| {
            config.seeds.iter().map(move |&seed| SweepCell {
                width,
                n: config.n,
                degree: 2,
                seed,
            })
        })
        .collect();
    let extras = Extras {
        fkr_gap: true,
        ..Extras::default()
    };
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&cell| {
            run_cell(
                &problem,
                cell,
                config.init_scale,
                &config.train,
                config.step_rule,
                config.n_test,
                extras,
            )
        })
        .collect();
    let sweep = SweepResult::from_cells(outcomes);
    let medians = sweep.median_by(|c| c.width, |c| c.fkr_gap.map(|g| g.mean));
    let widths: Vec<usize> = medians.iter().map(|(w, _)| *w).collect();
    let median_gap: Vec<f64> = medians.iter().map(|(_, v)| *v).collect();
    let all_ok = sweep.failures().next().is_none();
    Ok(GapSweepResult {
        strictly_decreasing: all_ok && stats::is_strictly_decreasing(&median_gap),
        sweep,
        widths,
        median_gap,
    })
}

/// Test error against sample size for `y = (xᵀβ)^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizationConfig {
    pub degree: u32,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub d: usize,
    pub width: usize,
    pub init_scale: f64,
    pub normalize_labels: bool,
    pub n_test: usize,
    pub step_rule: StepRule,
    pub train: TrainConfig,
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        Self {
            degree: 1,
            sample_sizes: vec![25, 50, 100, 200],
            seeds: (1..=5).collect(),
            d: 5,
            width: 5000,
            init_scale: 0.01,
            normalize_labels: false,
            n_test: DEFAULT_TEST_SIZE,
            step_rule: StepRule::GramScaled(1.0),
            train: TrainConfig {
                loss_tol: 1e-6,
                max_iters: 50_000,
                record_every: 1000,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationResult {
    pub sweep: SweepResult,
    pub sample_sizes: Vec<usize>,
    pub median_error: Vec<f64>,
    /// Least-squares slope of `ln(median error)` against `ln n`.
    pub fitted_slope: f64,
}

pub fn generalization_sweep(config: &GeneralizationConfig) -> Result<GeneralizationResult> {
    config.train.validate()?;
    if config.sample_sizes.len() < 2 {
        return Err(Error::invalid(
            "sample_sizes",
            "need at least two sample sizes",
        ));
    }
    let cells: Vec<SweepCell> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| {
            config.seeds.iter().map(move |&seed| SweepCell {
                width: config.width,
                n,
                degree: config.degree,
                seed,
            })
        })
        .collect();
    // synthesize up front so configuration errors surface before any training
    let problems: Vec<Synthesized> = cells
        .iter()
        .map(|cell| {
            synthesize(&SyntheticSpec {
                n: cell.n,
                d: config.d,
                target: Target::Poly {
                    degree: config.degree,
                    beta: None,
                },
                normalize_labels: config.normalize_labels,
                input_radius: InputRadius::Unit,
                seed: cell.seed,
            })
        })
        .collect::<Result<_>>()?;
    let extras = Extras {
        generalization: true,
        ..Extras::default()
    };
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .zip(problems.par_iter())
        .map(|(&cell, problem)| {
            // the initialization stream is decorrelated from the data stream
            let init_cell = SweepCell {
                seed: derive_seed(cell.seed, 3),
                ..cell
            };
            let mut out = run_cell(
                problem,
                init_cell,
                config.init_scale,
                &config.train,
                config.step_rule,
                config.n_test,
                extras,
            );
            out.cell = cell;
            out
        })
        .collect();
    let sweep = SweepResult::from_cells(outcomes);
    let medians = sweep.median_by(|c| c.n, |c| c.generalization.map(|g| g.mean));
    let sample_sizes: Vec<usize> = medians.iter().map(|(n, _)| *n).collect();
    let median_error: Vec<f64> = medians.iter().map(|(_, v)| *v).collect();
    let xs: Vec<f64> = sample_sizes.iter().map(|&n| n as f64).collect();
    Ok(GeneralizationResult {
        fitted_slope: stats::log_log_slope(&xs, &median_error),
        sweep,
        sample_sizes,
        median_error,
    })
}

/// `d_p` against `1/(10 (p+1)^{3/2} (d+1)^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeBound {
    pub p: usize,
    pub coefficient: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn degree_lower_bound(d: usize, p: usize) -> f64 {
    1.0 / (10.0 * ((p + 1) as f64).powf(1.5) * ((d + 1) as f64).powi(p as i32))
}

/// Agreement of the closed-form kernel with its power series and with the
/// feature-map expansion on random pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelIdentityReport {
    pub d: usize,
    pub pairs: usize,
    pub series_terms: usize,
    /// Max `|series − closed form|` over pairs with `|t| ≤ 0.9`.
    pub series_max_err: f64,
    pub degree_cap: usize,
    pub series_cap: usize,
    /// Max `|Σ_k d_k (xᵀy)^k − K(x̃, ỹ)|` over unit-ball pairs.
    pub feature_map_max_err: f64,
    pub tail_bound: f64,
    pub degree_bounds: Vec<DegreeBound>,
}

pub const SERIES_CHECK_TERMS: usize = 500;
pub const SERIES_CHECK_MAX_COS: f64 = 0.9;

fn sample_ball<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if norm_sq(&u) <= 1.0 {
            return u;
        }
    }
}

pub fn kernel_identity_check(
    d: usize,
    pairs: usize,
    seed: u64,
    degree_cap: usize,
    series_cap: usize,
) -> Result<KernelIdentityReport> {
    if pairs == 0 {
        return Err(Error::invalid("pairs", "must be at least 1"));
    }
    let coeffs = feature_coefficients(d, degree_cap, series_cap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series_max_err: f64 = 0.0;
    let mut feature_map_max_err: f64 = 0.0;
    let mut done = 0;
    while done < pairs {
        // Series pairs: arbitrary directions, rejected outside |t| ≤ 0.9.
        let x = augment(&sample_ball(&mut rng, d));
        let y = augment(&sample_ball(&mut rng, d));
        let t = dot(&x, &y) / (norm_sq(&x) * norm_sq(&y)).sqrt();
        if t.abs() > SERIES_CHECK_MAX_COS {
            continue;
        }
        series_max_err =
            series_max_err.max((ntk_series(&x, &y, SERIES_CHECK_TERMS)? - ntk(&x, &y)?).abs());
        let (u, v) = (&x[..d], &y[..d]);
        let s = dot(u, v);
        feature_map_max_err =
            feature_map_max_err.max((coeffs.evaluate(s) - coeffs.closed_form(s)).abs());
        done += 1;
    }
    let degree_bounds = (2..=8.min(degree_cap))
        .map(|p| {
            let bound = degree_lower_bound(d, p);
            DegreeBound {
                p,
                coefficient: coeffs.coeffs[p],
                bound,
                holds: coeffs.coeffs[p] >= bound,
            }
        })
        .collect();
    Ok(KernelIdentityReport {
        d,
        pairs,
        series_terms: SERIES_CHECK_TERMS,
        series_max_err,
        degree_cap,
        series_cap,
        feature_map_max_err,
        tail_bound: coeffs.tail_bound,
        degree_bounds,
    })
}

/// Convergence of the finite-width Gram matrix at initialization to `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRateReport {
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    /// `max_ij |G_ij − H_ij|`, indexed `[width][seed]`.
    pub max_errors: Vec<Vec<f64>>,
    pub median_max_error: Vec<f64>,
    /// Log-log slope of the median error against width.
    pub slope: f64,
}

pub fn empirical_kernel_rate(
    data: &LabeledDataset,
    widths: &[usize],
    seeds: &[u64],
    init_scale: f64,
) -> Result<KernelRateReport> {
    if widths.len() < 2 {
        return Err(Error::invalid("widths", "need at least two widths"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let h = kernel_matrix(data);
    let cells: Vec<(usize, u64)> = widths
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let errors: Vec<f64> = cells
        .par_iter()
        .map(|&(m, seed)| -> Result<f64> {
            let params = NetworkParams::initialize(m, data.dim(), init_scale, seed)?;
            let g = empirical_gram(&params, WeightSet::Initial, data)?;
            Ok((g - &h).amax())
        })
        .collect::<Result<_>>()?;
    let max_errors: Vec<Vec<f64>> = errors.chunks(seeds.len()).map(|c| c.to_vec()).collect();
    let median_max_error: Vec<f64> = max_errors.iter().map(|e| stats::median(e)).collect();
    let xs: Vec<f64> = widths.iter().map(|&m| m as f64).collect();
    Ok(KernelRateReport {
        widths: widths.to_vec(),
        seeds: seeds.to_vec(),
        slope: stats::log_log_slope(&xs, &median_max_error),
        max_errors,
        median_max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure1_spec_standardizes() {
        let s = synthesize(&SyntheticSpec::figure1(3)).unwrap();
        let y = s.data.labels();
        let mu = stats::mean(y);
        let sd = (y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / y.len() as f64).sqrt();
        assert!(mu.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-9);
        assert_eq!(s.data.len(), 100);
        assert!((s.data.input_radius() - 1.0).abs() < 1e-12);
        let beta = s.target.beta.as_ref().unwrap();
        assert!(norm_sq(beta) <= 1.0 + 1e-12);
    }

    #[test]
    fn constant_target_rejects_standardization() {
        let spec = SyntheticSpec {
            target: Target::Poly {
                degree: 0,
                beta: None,
            },
            ..SyntheticSpec::figure1(1)
        };
        assert!(matches!(synthesize(&spec), Err(Error::ZeroVariance)));
        let raw = synthesize(&SyntheticSpec {
            normalize_labels: false,
            ..spec
        })
        .unwrap();
        assert!(raw.data.labels().iter().all(|&y| y == 1.0));
    }

    #[test]
    fn linear_target_without_standardization() {
        let spec = SyntheticSpec {
            n: 20,
            d: 3,
            target: Target::Poly {
                degree: 1,
                beta: Some(vec![0.5, -0.25, 0.1]),
            },
            normalize_labels: false,
            input_radius: InputRadius::SqrtD,
            seed: 4,
        };
        let s = synthesize(&spec).unwrap();
        for i in 0..20 {
            let x = s.data.input(i);
            assert!((s.data.labels()[i] - dot(x, &[0.5, -0.25, 0.1])).abs() < 1e-15);
            assert!((norm_sq(x).sqrt() - 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn smaller_n_is_prefix() {
        let a = synthesize(&SyntheticSpec {
            n: 10,
            ..SyntheticSpec::figure1(8)
        })
        .unwrap();
        let b = synthesize(&SyntheticSpec {
            n: 30,
            normalize_labels: true,
            ..SyntheticSpec::figure1(8)
        })
        .unwrap();
        for i in 0..10 {
            assert_eq!(a.data.input(i), b.data.input(i));
        }
    }

    #[test]
    fn custom_target() {
        let spec = SyntheticSpec {
            n: 5,
            d: 2,
            target: Target::Custom(Arc::new(|x: &[f64]| x[0] - x[1])),
            normalize_labels: false,
            input_radius: InputRadius::Unit,
            seed: 0,
        };
        let s = synthesize(&spec).unwrap();
        let x = s.data.input(2);
        assert_eq!(s.data.labels()[2], x[0] - x[1]);
    }

    #[test]
    fn kernel_identities_hold_on_default_caps() {
        let r = kernel_identity_check(5, 200, 3, 40, 400).unwrap();
        assert!(r.series_max_err < 1e-10, "{}", r.series_max_err);
        assert!(r.feature_map_max_err < 1e-6, "{}", r.feature_map_max_err);
        assert!(r.tail_bound < 1e-8);
        assert_eq!(r.degree_bounds.len(), 7);
        assert!(r.degree_bounds.iter().all(|b| b.holds));
        assert!(kernel_identity_check(5, 0, 3, 40, 400).is_err());
    }

    #[test]
    fn exact_predictor_has_zero_error() {
        let s = synthesize(&SyntheticSpec::figure1(2)).unwrap();
        let t = s.target.clone();
        let e = generalization_error(|x| t.eval(x), &s, 500, 1).unwrap();
        assert_eq!(e.mean, 0.0);
        assert!(generalization_error(|_| 0.0, &s, 0, 1).is_err());
    }
}
