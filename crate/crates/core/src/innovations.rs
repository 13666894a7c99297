//! Multivariate innovations algorithm.
//!
//! Given autocovariances `Γ(h)` of a zero-mean stationary series `Y_t`,
//!
//! ```text
//! Σ_0       = Γ(0)
//! Θ_{n,n−k} = (Γ(n−k) − Σ_{j<k} Θ_{n,n−j} Σ_j Θ_{k,k−j}ᵀ) Σ_k⁻¹,  k = 0..n−1
//! Σ_n       = Γ(0) − Σ_{j<n} Θ_{n,n−j} Σ_j Θ_{n,n−j}ᵀ
//! ```
//!
//! and the one-step predictor is `Ŷ_{n+1} = Σ_j Θ_{n,j} (Y_{n+1−j} − Ŷ_{n+1−j})`.
//! When `Γ(h) = 0` for `h > p` every `Θ_{n,j}` with `j > p` vanishes, so a
//! step only touches the last `p` rows of the table.

use serde::{Deserialize, Serialize};

use crate::acvf::AcvfSequence;
use crate::error::{Error, Result};
use crate::linalg::{self, json, Matrix, Vector};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Root moduli below `1 − INVERTIBILITY_TOL` make a VMA non-invertible.
pub const INVERTIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    /// Keep every row of the coefficient table.
    Full,
    /// Keep only the rows the next step needs (requires a finite support).
    Recent,
}

#[derive(Debug, Clone, Copy)]
pub struct StateOptions {
    /// Skip coefficients known to vanish because of a finite ACVF support.
    pub skip_truncated: bool,
    pub retention: Retention,
}

impl Default for StateOptions {
    fn default() -> Self {
        StateOptions {
            skip_truncated: true,
            retention: Retention::Full,
        }
    }
}

/// State of the recursion after step `n`.
#[derive(Debug, Clone)]
pub struct InnovationsState {
    n: usize,
    support: Option<usize>,
    retention: Retention,
    sigmas: Vec<Matrix>,
    sigma_invs: Vec<Option<Matrix>>,
    /// `thetas[k][j − 1] = Θ_{k,j}`; `None` once pruned.
    thetas: Vec<Option<Vec<Matrix>>>,
}

impl InnovationsState {
    pub fn new(acvf: &AcvfSequence, options: StateOptions) -> Result<Self> {
        let support = if options.skip_truncated { acvf.exact_support } else { None };
        if options.retention == Retention::Recent && support.is_none() {
            return Err(Error::InvalidInput(
                "pruned retention needs a finite autocovariance support".into(),
            ));
        }
        let sigma0 = linalg::symmetrize(&acvf.gammas[0]);
        let inv0 = checked_inverse(&sigma0, 0)?;
        Ok(InnovationsState {
            n: 0,
            support,
            retention: options.retention,
            sigmas: vec![sigma0],
            sigma_invs: vec![Some(inv0)],
            thetas: vec![Some(Vec::new())],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.sigmas[0].nrows()
    }

    /// `Σ_k`.
    pub fn sigma(&self, k: usize) -> &Matrix {
        &self.sigmas[k]
    }

    pub fn sigmas(&self) -> &[Matrix] {
        &self.sigmas
    }

    /// `[Θ_{k,1}, …]`, truncated at the support when skipping is enabled.
    pub fn theta_row(&self, k: usize) -> Option<&[Matrix]> {
        self.thetas.get(k)?.as_deref()
    }

    /// `Θ_{k,j}`, or `None` when it is structurally zero or pruned.
    pub fn theta(&self, k: usize, j: usize) -> Option<&Matrix> {
        if j == 0 {
            return None;
        }
        self.theta_row(k)?.get(j - 1)
    }

    /// Advances from step `n − 1` to step `n`.
    pub fn step(&mut self, acvf: &AcvfSequence) -> Result<()> {
        let n = self.n + 1;
        if !acvf.covers(n) {
            return Err(Error::InvalidInput(format!(
                "autocovariances up to lag {n} are required, sequence covers 0..={}",
                acvf.h_max()
            )));
        }
        let k_start = match self.support {
            Some(p) => n.saturating_sub(p),
            None => 0,
        };
        let len = n - k_start;
        let mut row: Vec<Matrix> = Vec::with_capacity(len);
        // row is filled from Θ_{n,len} down to Θ_{n,1}; reversed at the end
        for k in k_start..n {
            let mut acc = acvf.lag(n - k)?.into_owned();
            for j in k_start..k {
                let left = &row[j - k_start];
                let right = self.stored_theta(k, k - j)?;
                acc -= left * &self.sigmas[j] * right.transpose();
            }
            let inv = self.sigma_invs[k].as_ref().ok_or_else(pruned)?;
            row.push(acc * inv);
        }
        let mut sigma = acvf.gammas[0].clone();
        for j in k_start..n {
            let t = &row[j - k_start];
            sigma -= t * &self.sigmas[j] * t.transpose();
        }
        let sigma = linalg::symmetrize(&sigma);
        let inv = checked_inverse(&sigma, n)?;
        row.reverse();

        self.sigmas.push(sigma);
        self.sigma_invs.push(Some(inv));
        self.thetas.push(Some(row));
        self.n = n;
        if self.retention == Retention::Recent {
            let keep_from = (n + 1).saturating_sub(self.support.unwrap_or(n + 1));
            for k in 0..keep_from {
                self.thetas[k] = None;
                self.sigma_invs[k] = None;
            }
        }
        Ok(())
    }

    fn stored_theta(&self, k: usize, j: usize) -> Result<&Matrix> {
        let row = self.thetas[k].as_ref().ok_or_else(pruned)?;
        row.get(j - 1).ok_or_else(pruned)
    }
}

fn pruned() -> Error {
    Error::InvalidInput("innovations table entry was pruned".into())
}

fn checked_inverse(sigma: &Matrix, step: usize) -> Result<Matrix> {
    let eig = linalg::sym_eig(sigma)?;
    if !linalg::is_pd(sigma) {
        return Err(Error::SingularInnovationCovariance {
            step,
            min_eigenvalue: eig.min(),
        });
    }
    linalg::spd_inverse(sigma).map_err(|_| Error::SingularInnovationCovariance {
        step,
        min_eigenvalue: eig.min(),
    })
}

/// Limits of `Σ_n` and `Θ_{n,1..p}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationsResult {
    #[serde(rename = "sigma", with = "json::matrix")]
    pub sigma_limit: Matrix,
    #[serde(rename = "thetas", with = "json::matrices")]
    pub theta_limits: Vec<Matrix>,
    pub iterations: usize,
    pub final_update: f64,
    pub converged: bool,
}

/// Iterates the recursion on a finitely supported ACVF until the relative
/// change of `(Σ_n, Θ_{n,1..p})` drops below `tol`.
pub fn innovations_run(acvf: &AcvfSequence, tol: f64, n_max: usize) -> Result<InnovationsResult> {
    let p = acvf.exact_support.ok_or_else(|| {
        Error::InvalidInput("innovations_run needs a finitely supported autocovariance".into())
    })?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let mut state = InnovationsState::new(
        acvf,
        StateOptions {
            skip_truncated: true,
            retention: Retention::Recent,
        },
    )?;
    let dim = acvf.dim;
    let padded = |row: &[Matrix]| -> Vec<Matrix> {
        (0..p)
            .map(|j| row.get(j).cloned().unwrap_or_else(|| Matrix::zeros(dim, dim)))
            .collect()
    };
    let mut prev_thetas = padded(&[]);
    let mut update = f64::INFINITY;
    for n in 1..=n_max.max(1) {
        state.step(acvf)?;
        let sigma = state.sigma(n);
        let thetas = padded(state.theta_row(n).unwrap_or(&[]));
        let mut change = (sigma - state.sigma(n - 1)).norm();
        for (a, b) in thetas.iter().zip(&prev_thetas) {
            change = change.max((a - b).norm());
        }
        update = change / (1.0 + sigma.norm());
        prev_thetas = thetas;
        if update < tol && n >= p.max(1) {
            return Ok(InnovationsResult {
                sigma_limit: sigma.clone(),
                theta_limits: prev_thetas,
                iterations: n,
                final_update: update,
                converged: true,
            });
        }
    }
    let partial = InnovationsResult {
        sigma_limit: state.sigma(state.n()).clone(),
        theta_limits: prev_thetas,
        iterations: state.n(),
        final_update: update,
        converged: false,
    };
    Err(Error::NoConvergence {
        iterations: partial.iterations,
        final_update: update,
        partial: Box::new(partial),
    })
}

/// One-step predictions along an observed path.
#[derive(Debug, Clone)]
pub struct PredictionPath {
    /// `(n + 1) × dim`: row `t` holds `Ŷ_{t+1}` given `Y_1 … Y_t`.
    pub predictions: Matrix,
    /// `Σ_0 … Σ_k` with `k = min(n, window)`; steps past the window share
    /// `Σ_k`.
    pub error_covs: Vec<Matrix>,
    /// True when the window capped the recursion depth.
    pub windowed: bool,
}

impl PredictionPath {
    /// Error covariance of the prediction of `Y_{t+1}`.
    pub fn error_cov(&self, t: usize) -> &Matrix {
        &self.error_covs[t.min(self.error_covs.len() - 1)]
    }
}

/// Runs the recursion alongside the observations `y` (one per row). With
/// `window = Some(w)`, steps beyond `w` reuse `Θ_{w,·}` and `Σ_w`.
pub fn predict_series(acvf: &AcvfSequence, y: &Matrix, window: Option<usize>) -> Result<PredictionPath> {
    let dim = acvf.dim;
    if y.ncols() != dim {
        return Err(Error::shape(format!("{dim} columns"), format!("{}", y.ncols())));
    }
    let n = y.nrows();
    let depth = window.map_or(n, |w| w.max(1).min(n));
    let mut state = InnovationsState::new(acvf, StateOptions::default())?;
    let mut predictions = Matrix::zeros(n + 1, dim);
    let mut residuals = Matrix::zeros(n, dim);
    let mut error_covs = vec![state.sigma(0).clone()];
    for t in 1..=n {
        residuals.set_row(t - 1, &(y.row(t - 1) - predictions.row(t - 1)));
        if t <= depth {
            state.step(acvf)?;
            error_covs.push(state.sigma(t).clone());
        }
        let k = t.min(depth);
        let row = state.theta_row(k).ok_or_else(pruned)?;
        let mut pred = Vector::zeros(dim);
        for (j, theta) in row.iter().enumerate() {
            // Θ_{k,j+1} multiplies the innovation at time t − j
            pred += theta * residuals.row(t - 1 - j).transpose();
        }
        predictions.set_row(t, &pred.transpose());
    }
    Ok(PredictionPath {
        predictions,
        error_covs,
        windowed: depth < n,
    })
}

/// Best linear predictor of `Y_{n+1}` from `Y_1 … Y_n` and its error
/// covariance `Σ_n`.
pub fn predict_onestep(acvf: &AcvfSequence, observations: &[Vector]) -> Result<(Vector, Matrix)> {
    let dim = acvf.dim;
    let mut y = Matrix::zeros(observations.len(), dim);
    for (t, obs) in observations.iter().enumerate() {
        if obs.len() != dim {
            return Err(Error::shape(format!("observation of length {dim}"), format!("{}", obs.len())));
        }
        y.set_row(t, &obs.transpose());
    }
    let path = predict_series(acvf, &y, None)?;
    let n = observations.len();
    Ok((
        path.predictions.row(n).transpose(),
        path.error_cov(n).clone(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InvertibilityStatus {
    Invertible,
    /// Smallest root modulus within `INVERTIBILITY_TOL` of the unit circle.
    NearUnitRoot,
    NonInvertible,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Invertibility {
    /// Smallest modulus among the roots of `det(I + Σ Θ_i z^i)`; infinite
    /// when the polynomial has no finite roots.
    pub min_root_modulus: f64,
    pub status: InvertibilityStatus,
}

impl Invertibility {
    /// Accepts invertible and near-unit-root polynomials.
    pub fn is_acceptable(&self) -> bool {
        self.status != InvertibilityStatus::NonInvertible
    }
}

/// Root moduli of `det(I + Σ_{i=1..p} Θ_i z^i)` through the companion matrix
/// of the reversed polynomial, whose eigenvalues are the reciprocal roots.
pub fn vma_invertibility(thetas: &[Matrix]) -> Invertibility {
    let negated: Vec<Matrix> = thetas.iter().map(|t| -t).collect();
    let radius = linalg::spectral_radius(&linalg::companion(&negated));
    let min_root_modulus = if radius > 0.0 { 1.0 / radius } else { f64::INFINITY };
    let status = if min_root_modulus >= 1.0 + INVERTIBILITY_TOL {
        InvertibilityStatus::Invertible
    } else if min_root_modulus >= 1.0 - INVERTIBILITY_TOL {
        InvertibilityStatus::NearUnitRoot
    } else {
        InvertibilityStatus::NonInvertible
    };
    Invertibility {
        min_root_modulus,
        status,
    }
}
