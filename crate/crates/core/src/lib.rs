//! Numerical laboratory for gradient descent on wide single-hidden-layer ReLU
//! networks: training dynamics, the minimum-norm solution of the linearized
//! network, the neural tangent kernel and kernel regression.

// `!(x > 0.0)` is the NaN-rejecting form used by every argument check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod kernel;
pub mod linalg;
pub mod linearized;
pub mod model;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use experiments::{SweepCell, SweepResult, SyntheticSpec, Target};
pub use kernel::{EigenBoundReport, FeatureMapCoefficients, KernelRegressor, NtkGram};
pub use linearized::{GradientFeatures, Lyapunov, MinNormSolution};
pub use model::{augment, LabeledDataset, NetworkParams, WeightSet};
pub use trainer::{StepMode, TrainConfig, TrainFailure, Trajectory, TrajectoryRecord};
