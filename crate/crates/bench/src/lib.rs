//! Shared fixtures for the criterion benchmarks.

use ntklab_core::experiments::{synthesize, SyntheticSpec};
use ntklab_core::{LabeledDataset, NetworkParams};

/// The standard synthetic problem (n = 100, d = 5) with `n` points.
pub fn standard_data(n: usize) -> LabeledDataset {
    synthesize(&SyntheticSpec {
        n,
        ..SyntheticSpec::figure1(2021)
    })
    .expect("standard problem synthesizes")
    .data
}

pub fn network(width: usize, data: &LabeledDataset) -> NetworkParams {
    NetworkParams::initialize(width, data.dim(), 1.0, 1).expect("valid width")
}
