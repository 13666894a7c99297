//! Dynamic factor model container, validation and standardization.
//!
//! The observation equation is `X_t = Λ f_t + ε_t` with factors following a
//! stationary VAR(p), `f_t = Σ Φ_i f_{t−i} + η_t`. Standardization maps any
//! valid model onto one with `Σ_ε = I_d` and `ΛᵀΛ = d I_r`: first the
//! observations are whitened by `Σ_ε^{-1/2}`, then the factors are rotated
//! and rescaled through the eigendecomposition `ΛᵀΛ = S D Sᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, json, Matrix};
use crate::varma::VarmaModel;

/// Margin kept between the companion spectral radius and the unit circle.
pub const EPS_STATIONARY: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfmModel {
    pub d: usize,
    pub r: usize,
    pub p: usize,
    /// Loadings, `d × r`.
    #[serde(with = "json::matrix")]
    pub lambda: Matrix,
    /// Factor VAR coefficients `Φ_1 … Φ_p`, each `r × r`.
    #[serde(with = "json::matrices")]
    pub phi: Vec<Matrix>,
    #[serde(with = "json::matrix")]
    pub sigma_eta: Matrix,
    #[serde(with = "json::matrix")]
    pub sigma_eps: Matrix,
    /// Series mean. Only the zero-mean model is supported; a nonzero entry
    /// fails validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
}

impl DfmModel {
    pub fn new(lambda: Matrix, phi: Vec<Matrix>, sigma_eta: Matrix, sigma_eps: Matrix) -> Self {
        DfmModel {
            d: lambda.nrows(),
            r: lambda.ncols(),
            p: phi.len(),
            lambda,
            phi,
            sigma_eta,
            sigma_eps,
            mean: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Spectral radius of the `pr × pr` companion matrix of `Φ_1 … Φ_p`.
    pub fn companion_radius(&self) -> f64 {
        linalg::spectral_radius(&linalg::companion(&self.phi))
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    fn check_shapes(&self) -> Result<()> {
        if self.d == 0 || self.r == 0 {
            return Err(Error::InvalidModel("d and r must be positive".into()));
        }
        if self.r > self.d {
            return Err(Error::InvalidModel(format!(
                "factor dimension r={} exceeds d={}",
                self.r, self.d
            )));
        }
        if self.phi.len() != self.p {
            return Err(Error::shape(
                format!("{} VAR matrices", self.p),
                format!("{}", self.phi.len()),
            ));
        }
        linalg::check_shape(&self.lambda, self.d, self.r, "lambda")?;
        for phi in &self.phi {
            linalg::check_shape(phi, self.r, self.r, "phi")?;
        }
        linalg::check_shape(&self.sigma_eta, self.r, self.r, "sigma_eta")?;
        linalg::check_shape(&self.sigma_eps, self.d, self.d, "sigma_eps")?;
        if let Some(mean) = &self.mean {
            if mean.len() != self.d {
                return Err(Error::shape(
                    format!("mean of length {}", self.d),
                    format!("{}", mean.len()),
                ));
            }
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        linalg::check_finite(&self.lambda)?;
        for phi in &self.phi {
            linalg::check_finite(phi)?;
        }
        linalg::check_finite(&self.sigma_eta)?;
        linalg::check_finite(&self.sigma_eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Shapes,
    Finite,
    SigmaEtaPd,
    SigmaEpsPd,
    Stationarity,
    ZeroMean,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub kind: CheckKind,
    pub passed: bool,
    /// Signed distance to the failure boundary (positive when passing), if
    /// the check is quantitative.
    pub margin: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub companion_radius: Option<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, kind: CheckKind) -> Option<&Check> {
        self.checks.iter().find(|c| c.kind == kind)
    }

    /// Converts the first failing check into the matching error.
    pub fn into_result(self) -> Result<()> {
        let Some(failed) = self.checks.iter().find(|c| !c.passed) else {
            return Ok(());
        };
        Err(match failed.kind {
            CheckKind::Stationarity => Error::NotStationary {
                radius: self.companion_radius.unwrap_or(f64::NAN),
            },
            CheckKind::SigmaEtaPd | CheckKind::SigmaEpsPd => Error::NotPositiveDefinite {
                min_eigenvalue: failed.margin.unwrap_or(f64::NAN),
            },
            CheckKind::Finite => Error::NotFinite,
            CheckKind::Shapes | CheckKind::ZeroMean => {
                Error::InvalidModel(failed.detail.clone())
            }
        })
    }
}

fn pd_check(kind: CheckKind, m: &Matrix) -> Check {
    match linalg::min_eigenvalue(m) {
        Ok(min) => Check {
            kind,
            passed: linalg::is_pd(m),
            margin: Some(min),
            detail: format!("smallest eigenvalue {min:e}"),
        },
        Err(e) => Check {
            kind,
            passed: false,
            margin: None,
            detail: e.to_string(),
        },
    }
}

/// Checks every model invariant and reports each with its margin. Never
/// fails; failures are carried in the report.
pub fn validate(model: &DfmModel) -> ValidationReport {
    let mut checks = Vec::new();
    if let Err(e) = model.check_shapes() {
        checks.push(Check {
            kind: CheckKind::Shapes,
            passed: false,
            margin: None,
            detail: e.to_string(),
        });
        return ValidationReport {
            checks,
            companion_radius: None,
        };
    }
    checks.push(Check {
        kind: CheckKind::Shapes,
        passed: true,
        margin: None,
        detail: format!("d={} r={} p={}", model.d, model.r, model.p),
    });
    if let Err(e) = model.check_finite() {
        checks.push(Check {
            kind: CheckKind::Finite,
            passed: false,
            margin: None,
            detail: e.to_string(),
        });
        return ValidationReport {
            checks,
            companion_radius: None,
        };
    }
    checks.push(Check {
        kind: CheckKind::Finite,
        passed: true,
        margin: None,
        detail: String::new(),
    });
    checks.push(pd_check(CheckKind::SigmaEtaPd, &model.sigma_eta));
    checks.push(pd_check(CheckKind::SigmaEpsPd, &model.sigma_eps));

    let radius = model.companion_radius();
    let margin = 1.0 - EPS_STATIONARY - radius;
    checks.push(Check {
        kind: CheckKind::Stationarity,
        passed: margin > 0.0,
        margin: Some(margin),
        detail: format!("companion spectral radius {radius}"),
    });

    let max_mean = model
        .mean
        .as_ref()
        .map(|m| m.iter().fold(0.0f64, |a, x| a.max(x.abs())))
        .unwrap_or(0.0);
    checks.push(Check {
        kind: CheckKind::ZeroMean,
        passed: max_mean == 0.0,
        margin: Some(-max_mean),
        detail: if max_mean == 0.0 {
            String::new()
        } else {
            "nonzero series means are not supported; center the data first".into()
        },
    });

    ValidationReport {
        checks,
        companion_radius: Some(radius),
    }
}

/// The maps taking an arbitrary model to its standardized form.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationTransform {
    /// `Σ_ε^{1/2}`.
    pub sigma_eps_half: Matrix,
    /// `Σ_ε^{-1/2}`.
    pub sigma_eps_inv_half: Matrix,
    /// Orthogonal `S` from `Λ̃ᵀΛ̃ = S D Sᵀ`, with `Λ̃ = Σ_ε^{-1/2} Λ`.
    pub rotation: Matrix,
    /// Diagonal `D^{1/2}`.
    pub scale: Matrix,
}

impl StandardizationTransform {
    fn identity(d: usize, r: usize) -> Self {
        let sd = (d as f64).sqrt();
        StandardizationTransform {
            sigma_eps_half: Matrix::identity(d, d),
            sigma_eps_inv_half: Matrix::identity(d, d),
            rotation: Matrix::identity(r, r),
            scale: Matrix::identity(r, r) * sd,
        }
    }

    /// True when both stages are the identity map.
    pub fn is_identity(&self) -> bool {
        let d = self.sigma_eps_half.nrows();
        let r = self.rotation.nrows();
        self.sigma_eps_half == Matrix::identity(d, d)
            && self.rotation == Matrix::identity(r, r)
            && self.scale == Matrix::identity(r, r) * (d as f64).sqrt()
    }

    /// Factor map `f̄ = d^{-1/2} D^{1/2} Sᵀ f`.
    pub fn factor_map(&self) -> Matrix {
        let d = self.sigma_eps_half.nrows() as f64;
        &self.scale * self.rotation.transpose() / d.sqrt()
    }
}

/// A model satisfying `Σ_ε = I_d` and `ΛᵀΛ = d I_r`, together with the
/// transform that produced it.
#[derive(Debug, Clone)]
pub struct StandardizedDfm {
    pub model: DfmModel,
    pub transform: StandardizationTransform,
}

impl StandardizedDfm {
    pub fn d(&self) -> usize {
        self.model.d
    }

    pub fn r(&self) -> usize {
        self.model.r
    }

    pub fn p(&self) -> usize {
        self.model.p
    }

    pub fn lambda(&self) -> &Matrix {
        &self.model.lambda
    }

    /// `(1/d) Λ M Λᵀ`.
    pub fn lift(&self, core: &Matrix) -> Matrix {
        let l = &self.model.lambda;
        l * core * l.transpose() / self.model.d as f64
    }

    /// `(1/d) Λᵀ M Λ`.
    pub fn project(&self, full: &Matrix) -> Matrix {
        let l = &self.model.lambda;
        l.transpose() * full * l / self.model.d as f64
    }

    /// Whitens observations stored one per row: `x̃_t = Σ_ε^{-1/2} x_t`.
    pub fn whiten_rows(&self, x: &Matrix) -> Matrix {
        x * &self.transform.sigma_eps_inv_half
    }

    /// Inverse of [`Self::whiten_rows`].
    pub fn color_rows(&self, x: &Matrix) -> Matrix {
        x * &self.transform.sigma_eps_half
    }

    /// Maps a VARMA model of the standardized series back to the original
    /// observation coordinates.
    pub fn unstandardize_varma(&self, varma: &VarmaModel) -> Result<VarmaModel> {
        unstandardize_varma(varma, self)
    }

    /// Inverse of [`Self::unstandardize_varma`].
    pub fn standardize_varma(&self, varma: &VarmaModel) -> Result<VarmaModel> {
        conjugate_varma(
            varma,
            &self.transform.sigma_eps_inv_half,
            &self.transform.sigma_eps_half,
        )
    }
}

/// Relative tolerance below which `Σ_ε` or `ΛᵀΛ / d` is treated as already
/// standardized, so that standardization is idempotent.
const IDENTITY_TOL: f64 = 1e-10;

pub fn standardize(model: &DfmModel) -> Result<StandardizedDfm> {
    validate(model).into_result()?;
    let d = model.d;
    let r = model.r;
    let df = d as f64;
    let mut transform = StandardizationTransform::identity(d, r);

    let id_d = Matrix::identity(d, d);
    let whitened = (&model.sigma_eps - &id_d).norm() <= IDENTITY_TOL * (df.sqrt());
    let lambda_w = if whitened {
        model.lambda.clone()
    } else {
        let (half, inv_half) = linalg::spd_sqrt_pair(&model.sigma_eps)?;
        let l = &inv_half * &model.lambda;
        transform.sigma_eps_half = half;
        transform.sigma_eps_inv_half = inv_half;
        l
    };

    let gram = linalg::symmetrize(&(lambda_w.transpose() * &lambda_w));
    let eig = linalg::sym_eig(&gram)?;
    if eig.min() <= linalg::EPS_PD * eig.max().abs() || eig.min() <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: eig.min(),
        });
    }
    let id_r = Matrix::identity(r, r);
    let orthonormal = (&gram - &id_r * df).norm() <= IDENTITY_TOL * df;

    let (lambda, phi, sigma_eta) = if orthonormal {
        (lambda_w, model.phi.clone(), model.sigma_eta.clone())
    } else {
        let s = eig.eigenvectors.clone();
        let dh = Matrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let dh_inv = Matrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()));
        let lambda = &lambda_w * &s * &dh_inv * df.sqrt();
        let phi = model
            .phi
            .iter()
            .map(|p| &dh * s.transpose() * p * &s * &dh_inv)
            .collect();
        let sigma_eta =
            linalg::symmetrize(&(&dh * s.transpose() * &model.sigma_eta * &s * &dh / df));
        transform.rotation = s;
        transform.scale = dh;
        (lambda, phi, sigma_eta)
    };

    let standardized = DfmModel {
        d,
        r,
        p: model.p,
        lambda,
        phi,
        sigma_eta,
        sigma_eps: id_d,
        mean: None,
    };
    Ok(StandardizedDfm {
        model: standardized,
        transform,
    })
}

fn conjugate_varma(varma: &VarmaModel, left: &Matrix, right: &Matrix) -> Result<VarmaModel> {
    let d = left.nrows();
    if varma.d != d {
        return Err(Error::shape(format!("VARMA of dimension {d}"), format!("{}", varma.d)));
    }
    let conj = |m: &Matrix| left * m * right;
    Ok(VarmaModel {
        d,
        p: varma.p,
        phi_tilde: varma.phi_tilde.iter().map(conj).collect(),
        theta: varma.theta.iter().map(conj).collect(),
        sigma_zeta: linalg::symmetrize(&(left * &varma.sigma_zeta * left)),
    })
}

/// `Φ̃ ← Σ_ε^{1/2} Φ̃ Σ_ε^{-1/2}`, `Θ ← Σ_ε^{1/2} Θ Σ_ε^{-1/2}`,
/// `Σ_ζ ← Σ_ε^{1/2} Σ_ζ Σ_ε^{1/2}`.
pub fn unstandardize_varma(varma: &VarmaModel, standardized: &StandardizedDfm) -> Result<VarmaModel> {
    conjugate_varma(
        varma,
        &standardized.transform.sigma_eps_half,
        &standardized.transform.sigma_eps_inv_half,
    )
}
