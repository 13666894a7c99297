//! Shared workloads for the benchmarks.

use dfmvarma::simulate::random_dfm;
use dfmvarma::{DfmModel, Matrix};

/// One-factor model with unit loadings, `φ = 0.5`, `σ²_η = 0.75` and white noise.
pub fn onefactor(d: usize) -> DfmModel {
    DfmModel::new(
        Matrix::from_element(d, 1, 1.0),
        vec![Matrix::from_element(1, 1, 0.5)],
        Matrix::from_element(1, 1, 0.75),
        Matrix::identity(d, d),
    )
}

/// Random stationary model with a fixed seed so runs are comparable.
pub fn workload(d: usize, r: usize, p: usize) -> DfmModel {
    random_dfm(d, r, p, 0x5eed + (d * 131 + r * 17 + p) as u64)
}
