//! One-step-ahead prediction of the observations.
//!
//! The reduced path runs the innovations recursion on
//! `W_t = (1/√d) Λᵀ X_t` (dimension `r`) and uses
//! `Θ^X_{n,j} = (1/d) Λ Θ^W_{n,j} Λᵀ`, `Σ^X_n = I_d + (1/d) Λ (Σ^W_n − I_r) Λᵀ`
//! to lift predictions and error covariances. The full path runs the same
//! recursion on `X_t` directly and serves as a reference.
//!
//! Both accept observations in the original coordinates and whiten them
//! with `Σ_ε^{-1/2}` internally.

use serde::{Serialize, Serializer};

use crate::acvf::{gamma_w, gamma_x};
use crate::error::{Error, Result};
use crate::innovations::predict_series;
use crate::linalg::{self, json, Matrix};
use crate::model::StandardizedDfm;

pub const DEFAULT_WINDOW: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    Exact,
    /// Coefficients past the window are reused; approximate.
    Windowed,
}

#[derive(Debug, Clone, Copy)]
pub struct ForecastOptions {
    /// Maximum recursion depth; `None` never caps it.
    pub window: Option<usize>,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            window: Some(DEFAULT_WINDOW),
        }
    }
}

/// Prediction error covariances `Σ^X_0 … Σ^X_k`, `k = min(n, window)`.
#[derive(Debug, Clone)]
pub enum ErrorCovs {
    /// `C (I_d + (1/d) Λ M Λᵀ) C` from the `r × r` cores `M`, with
    /// `C = Σ_ε^{1/2}`.
    Compressed {
        cores: Vec<Matrix>,
        lambda: Matrix,
        color: Matrix,
    },
    Full(Vec<Matrix>),
}

#[derive(Debug, Clone)]
pub struct ForecastResult {
    /// `(n + 1) × d`; row `t` holds `X̂_{t+1}`, so row 0 is `X̂_1 = 0` and the
    /// last row is the forecast past the data.
    pub predictions: Matrix,
    pub error_covs: ErrorCovs,
    pub mode: ForecastMode,
}

impl ForecastResult {
    pub fn n(&self) -> usize {
        self.predictions.nrows() - 1
    }

    /// Number of distinct stored covariances.
    pub fn stored_covs(&self) -> usize {
        match &self.error_covs {
            ErrorCovs::Compressed { cores, .. } => cores.len(),
            ErrorCovs::Full(covs) => covs.len(),
        }
    }

    /// `Σ^X_t`, the error covariance of `X̂_{t+1}`.
    pub fn error_cov(&self, t: usize) -> Matrix {
        let k = t.min(self.stored_covs() - 1);
        match &self.error_covs {
            ErrorCovs::Compressed { cores, lambda, color } => {
                let d = lambda.nrows();
                let inner = Matrix::identity(d, d) + lambda * &cores[k] * lambda.transpose() / d as f64;
                linalg::symmetrize(&(color * inner * color))
            }
            ErrorCovs::Full(covs) => covs[k].clone(),
        }
    }

    pub fn error_cov_final(&self) -> Matrix {
        self.error_cov(self.n())
    }

    /// `X_t − X̂_t` for `t = 1..=n`, one per row.
    pub fn errors(&self, data: &Matrix) -> Matrix {
        data - self.predictions.rows(0, self.n())
    }

    pub fn summary(&self) -> ForecastSummary {
        ForecastSummary {
            predictions: self.predictions.clone(),
            error_cov_final: self.error_cov_final(),
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastSummary {
    #[serde(serialize_with = "ser_matrix")]
    pub predictions: Matrix,
    #[serde(serialize_with = "ser_matrix")]
    pub error_cov_final: Matrix,
    pub mode: ForecastMode,
}

fn ser_matrix<S: Serializer>(m: &Matrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    json::matrix::serialize(m, s)
}

fn prepare(model: &StandardizedDfm, data: &Matrix, options: ForecastOptions) -> Result<(Matrix, usize, ForecastMode)> {
    let d = model.d();
    if data.ncols() != d {
        return Err(Error::shape(format!("{d} columns"), format!("{}", data.ncols())));
    }
    linalg::check_finite(data)?;
    if options.window == Some(0) {
        return Err(Error::InvalidInput("forecast window must be positive".into()));
    }
    let n = data.nrows();
    let depth = options.window.map_or(n, |w| w.min(n));
    let mode = if depth < n { ForecastMode::Windowed } else { ForecastMode::Exact };
    Ok((model.whiten_rows(data), depth, mode))
}

pub fn forecast_reduced(model: &StandardizedDfm, data: &Matrix, options: ForecastOptions) -> Result<ForecastResult> {
    let (x, depth, mode) = prepare(model, data, options)?;
    let lambda = model.lambda();
    let r = model.r();
    let sd = (model.d() as f64).sqrt();
    let w = &x * lambda / sd;
    let gw = gamma_w(model, depth.max(1))?;
    let path = predict_series(&gw, &w, options.window)?;
    let predictions = model.color_rows(&(&path.predictions * lambda.transpose() / sd));
    let cores = path
        .error_covs
        .iter()
        .map(|s| s - Matrix::identity(r, r))
        .collect();
    Ok(ForecastResult {
        predictions,
        error_covs: ErrorCovs::Compressed {
            cores,
            lambda: lambda.clone(),
            color: model.transform.sigma_eps_half.clone(),
        },
        mode,
    })
}

pub fn forecast_full(model: &StandardizedDfm, data: &Matrix, options: ForecastOptions) -> Result<ForecastResult> {
    let (x, depth, mode) = prepare(model, data, options)?;
    let gx = gamma_x(model, depth.max(1))?;
    let path = predict_series(&gx, &x, options.window)?;
    let c = &model.transform.sigma_eps_half;
    let covs = path
        .error_covs
        .iter()
        .map(|s| linalg::symmetrize(&(c * s * c)))
        .collect();
    Ok(ForecastResult {
        predictions: model.color_rows(&path.predictions),
        error_covs: ErrorCovs::Full(covs),
        mode,
    })
}
