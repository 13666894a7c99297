//! VARMA(p, p) representation of a dynamic factor model.
//!
//! In standardized coordinates `X_t − Σ Φ̃_i X_{t−i} = ζ_t + Σ Θ_i ζ_{t−i}`
//! with `Φ̃_i = (1/d) Λ Φ_i Λᵀ`. The moving-average side is the invertible
//! factorization of `Γ_Z`, and it inherits the reduced-rank form
//! `Σ_ζ = I_d + (1/d) Λ U Λᵀ`, `Θ_i = (1/d) Λ V_i Λᵀ`, where `(U, V_i)`
//! come from the `r`-dimensional innovations recursion on `(1/√d) Λᵀ Z_t`.

use serde::{Deserialize, Serialize};

use crate::acvf::{gamma_z, gamma_z_reduced};
use crate::error::{Error, Result};
use crate::innovations::{innovations_run, vma_invertibility, Invertibility};
use crate::linalg::{self, json, Matrix};
use crate::model::{standardize, DfmModel, StandardizedDfm};

pub const DEFAULT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarmaModel {
    pub d: usize,
    pub p: usize,
    #[serde(with = "json::matrices")]
    pub phi_tilde: Vec<Matrix>,
    #[serde(with = "json::matrices")]
    pub theta: Vec<Matrix>,
    #[serde(with = "json::matrix")]
    pub sigma_zeta: Matrix,
}

impl VarmaModel {
    pub fn from_json(s: &str) -> Result<Self> {
        let m: VarmaModel = serde_json::from_str(s)?;
        m.check()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.phi_tilde.len() != self.p || self.theta.len() != self.p {
            return Err(Error::shape(
                format!("{} VAR and VMA matrices", self.p),
                format!("{} and {}", self.phi_tilde.len(), self.theta.len()),
            ));
        }
        for m in self.phi_tilde.iter().chain(&self.theta) {
            linalg::check_shape(m, self.d, self.d, "VARMA coefficient")?;
        }
        linalg::check_shape(&self.sigma_zeta, self.d, self.d, "sigma_zeta")
    }

    pub fn invertibility(&self) -> Invertibility {
        vma_invertibility(&self.theta)
    }
}

/// `r`-dimensional cores `U` and `V_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedVma {
    pub r: usize,
    pub p: usize,
    #[serde(with = "json::matrix")]
    pub u: Matrix,
    #[serde(with = "json::matrices")]
    pub v: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `‖Γ_Z(h) − Σ_{i=0..p−h} Θ_{i+h} Σ_ζ Θ_iᵀ‖_F / ‖Γ_Z(0)‖_F` for
    /// `h = 0..=p`, in standardized coordinates.
    pub lag_residuals: Vec<f64>,
    pub max_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Recursion in dimension `r`, lifted to dimension `d`.
    Reduced,
    /// Recursion directly in dimension `d`.
    Full,
}

/// `Φ̃_i = (1/d) Λ Φ_i Λᵀ`.
pub fn var_component(model: &StandardizedDfm) -> Vec<Matrix> {
    model.model.phi.iter().map(|p| model.lift(p)).collect()
}

pub fn reduced_vma(model: &StandardizedDfm, tol: f64, n_max: usize) -> Result<ReducedVma> {
    let m = &model.model;
    let r = m.r;
    let (u, v) = if m.p == 0 {
        (&m.sigma_eta * m.d as f64, Vec::new())
    } else {
        let res = innovations_run(&gamma_z_reduced(model), tol, n_max)?;
        (
            linalg::symmetrize(&(res.sigma_limit - Matrix::identity(r, r))),
            res.theta_limits,
        )
    };
    let reduced = ReducedVma { r, p: m.p, u, v };
    let cov = &reduced.u + Matrix::identity(r, r);
    if !linalg::is_pd(&cov) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: linalg::min_eigenvalue(&cov)?,
        });
    }
    Ok(reduced)
}

/// `Σ_ζ = I_d + (1/d) Λ U Λᵀ`, `Θ_i = (1/d) Λ V_i Λᵀ`.
pub fn lift_reduced(model: &StandardizedDfm, reduced: &ReducedVma) -> Result<(Matrix, Vec<Matrix>)> {
    let (d, r) = (model.d(), model.r());
    if reduced.r != r || reduced.v.len() != reduced.p {
        return Err(Error::shape(
            format!("reduced cores with r={r}"),
            format!("r={} and {} VMA cores", reduced.r, reduced.v.len()),
        ));
    }
    linalg::check_shape(&reduced.u, r, r, "U")?;
    for v in &reduced.v {
        linalg::check_shape(v, r, r, "V")?;
    }
    let sigma = linalg::symmetrize(&(Matrix::identity(d, d) + model.lift(&reduced.u)));
    let theta = reduced.v.iter().map(|v| model.lift(v)).collect();
    Ok((sigma, theta))
}

/// Output of [`build_varma`].
#[derive(Debug, Clone)]
pub struct Conversion {
    /// In the original observation coordinates.
    pub varma: VarmaModel,
    /// In standardized coordinates.
    pub standardized: VarmaModel,
    pub reduced: Option<ReducedVma>,
    pub report: ResidualReport,
    pub invertibility: Invertibility,
}

pub fn build_varma(model: &DfmModel, method: Method, tol: f64, n_max: usize) -> Result<Conversion> {
    let std = standardize(model)?;
    let phi_tilde = var_component(&std);
    let (sigma_zeta, theta, reduced) = match method {
        Method::Reduced => {
            let red = reduced_vma(&std, tol, n_max)?;
            let (s, t) = lift_reduced(&std, &red)?;
            (s, t, Some(red))
        }
        Method::Full => {
            let res = innovations_run(&gamma_z(&std), tol, n_max)?;
            (res.sigma_limit, res.theta_limits, None)
        }
    };
    let standardized = VarmaModel {
        d: std.d(),
        p: std.p(),
        phi_tilde,
        theta,
        sigma_zeta,
    };
    let report = residuals(&std, &standardized, DEFAULT_THRESHOLD)?;
    let invertibility = standardized.invertibility();
    let varma = std.unstandardize_varma(&standardized)?;
    Ok(Conversion {
        varma,
        standardized,
        reduced,
        report,
        invertibility,
    })
}

/// Residuals of the moment system for a VARMA in original coordinates.
pub fn verify_varma(model: &DfmModel, varma: &VarmaModel, threshold: f64) -> Result<ResidualReport> {
    varma.check()?;
    if varma.d != model.d || varma.p != model.p {
        return Err(Error::shape(
            format!("VARMA with d={} p={}", model.d, model.p),
            format!("d={} p={}", varma.d, varma.p),
        ));
    }
    let std = standardize(model)?;
    let standardized = std.standardize_varma(varma)?;
    residuals(&std, &standardized, threshold)
}

fn residuals(std: &StandardizedDfm, varma: &VarmaModel, threshold: f64) -> Result<ResidualReport> {
    let gz = gamma_z(std);
    let p = std.p();
    let d = std.d();
    let scale = gz.gammas[0].norm().max(linalg::ABS_FLOOR);
    // Θ_0 = I
    let mut thetas = vec![Matrix::identity(d, d)];
    thetas.extend(varma.theta.iter().cloned());
    let mut lag_residuals = Vec::with_capacity(p + 1);
    for h in 0..=p {
        let mut r = gz.gammas[h].clone();
        for i in 0..=(p - h) {
            r -= &thetas[i + h] * &varma.sigma_zeta * thetas[i].transpose();
        }
        lag_residuals.push(r.norm() / scale);
    }
    // the autoregressive side must match Φ̃ as well
    for (phi, expected) in varma.phi_tilde.iter().zip(var_component(std)) {
        let r = (phi - &expected).norm() / expected.norm().max(1.0);
        if let Some(worst) = lag_residuals.first_mut() {
            *worst = worst.max(r);
        }
    }
    let max_residual = lag_residuals.iter().copied().fold(0.0, f64::max);
    Ok(ResidualReport {
        pass: max_residual <= threshold,
        lag_residuals,
        max_residual,
    })
}

/// Closed-form one-factor VMA(1) solution, in the parameterization
/// `Σ_ζ = I + u ΛΛᵀ`, `Θ_1 = v ΛΛᵀ` with `ΛᵀΛ = d`. The reduced cores are
/// `U = d u`, `V = d v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OneFactorSolution {
    pub u: f64,
    pub v: f64,
    pub discriminant: f64,
}

/// Solves `σ² + φ²/d = u + d v² (1 + d u)`, `−φ/d = v (1 + d u)`.
/// With `w = 1 + d u` this is `w² − (1 + dσ² + φ²) w + φ² = 0`; the larger
/// root gives the invertible solution.
pub fn onefactor_closed_form(phi1: f64, sigma_eta2: f64, d: usize) -> Result<OneFactorSolution> {
    check_onefactor(phi1, sigma_eta2, d)?;
    let df = d as f64;
    let a = df * sigma_eta2;
    let b = phi1 * phi1;
    let discriminant = (1.0 - a - b).powi(2) + 4.0 * a;
    assert!(discriminant >= 0.0);
    let w = (1.0 + a + b + discriminant.sqrt()) / 2.0;
    Ok(OneFactorSolution {
        u: (w - 1.0) / df,
        v: -phi1 / (df * w),
        discriminant,
    })
}

fn check_onefactor(phi: f64, sigma_eta2: f64, d: usize) -> Result<()> {
    if phi.is_nan() || phi.abs() >= 1.0 {
        return Err(Error::NotStationary { radius: phi.abs() });
    }
    if !(sigma_eta2 > 0.0 && sigma_eta2.is_finite()) {
        return Err(Error::InvalidInput("sigma_eta2 must be positive".into()));
    }
    if d == 0 {
        return Err(Error::InvalidInput("d must be at least 1".into()));
    }
    Ok(())
}

/// Correlation matrices of `X_t` and of `Y_t = X_t − Φ̃ X_{t−1}` for the
/// one-factor AR(1) model with unit loadings.
pub fn onefactor_correlation_demo(phi: f64, sigma_eta2: f64, d: usize) -> Result<(Matrix, Matrix)> {
    check_onefactor(phi, sigma_eta2, d)?;
    let df = d as f64;
    let ones = Matrix::from_element(d, d, 1.0);
    let id = Matrix::identity(d, d);
    let k = 1.0 - phi * phi;
    let sx = sigma_eta2 + k;
    let mut r_x = &ones * (sigma_eta2 / sx) + &id * (k / sx);
    let sy = phi * phi + df * k;
    let mut r_y = &ones * (phi * phi / sy) + &id * (df * k / sy);
    r_x.fill_diagonal(1.0);
    r_y.fill_diagonal(1.0);
    Ok((r_x, r_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovations::{DEFAULT_MAX_ITER, DEFAULT_TOL};

    fn scalar(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    fn onefactor(d: usize, phi: &[f64], s2: f64) -> DfmModel {
        DfmModel::new(
            Matrix::from_element(d, 1, 1.0),
            phi.iter().map(|&p| scalar(p)).collect(),
            scalar(s2),
            Matrix::identity(d, d),
        )
    }

    #[test]
    fn closed_form_examples() {
        let s = onefactor_closed_form(0.0, 0.7, 4).unwrap();
        assert!((s.u - 0.7).abs() < 1e-15);
        assert_eq!(s.v, 0.0);

        let s = onefactor_closed_form(0.5, 0.75, 1).unwrap();
        assert!((s.discriminant - 3.0).abs() < 1e-14);
        assert!((s.u - 3f64.sqrt() / 2.0).abs() < 1e-14);
        assert!((s.v + 0.5 / (1.0 + s.u)).abs() < 1e-14);
        assert!((s.v + 0.267949).abs() < 1e-6);
    }

    #[test]
    fn closed_form_satisfies_its_equations() {
        for &(phi, s2, d) in &[(0.3, 2.0, 7usize), (-0.9, 0.1, 50), (0.8, 10.0, 1)] {
            let s = onefactor_closed_form(phi, s2, d).unwrap();
            let df = d as f64;
            let w = 1.0 + df * s.u;
            assert!((s2 + phi * phi / df - s.u - df * s.v * s.v * w).abs() < 1e-12);
            assert!((-phi / df - s.v * w).abs() < 1e-14);
        }
    }

    #[test]
    fn reduced_matches_closed_form_at_d1() {
        let std = standardize(&onefactor(1, &[0.5], 0.75)).unwrap();
        let red = reduced_vma(&std, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let cf = onefactor_closed_form(0.5, 0.75, 1).unwrap();
        assert!((red.u[(0, 0)] - cf.u).abs() < 1e-10);
        assert!((red.v[0][(0, 0)] - cf.v).abs() < 1e-10);
    }

    #[test]
    fn p0_is_exact() {
        let m = DfmModel::new(
            Matrix::from_row_slice(3, 1, &[1.0, 2.0, -1.0]),
            vec![],
            scalar(0.5),
            Matrix::from_diagonal(&linalg::Vector::from_vec(vec![1.0, 2.0, 0.5])),
        );
        let conv = build_varma(&m, Method::Reduced, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let red = conv.reduced.as_ref().unwrap();
        assert!(red.v.is_empty());
        assert_eq!(conv.varma.p, 0);
        let gx0 = &m.lambda * &m.sigma_eta * m.lambda.transpose() + &m.sigma_eps;
        assert!((&conv.varma.sigma_zeta - gx0).norm() < 1e-12);
        assert_eq!(conv.report.lag_residuals.len(), 1);
        assert!(conv.report.pass);
    }

    #[test]
    fn lift_examples() {
        let std = standardize(&onefactor(3, &[0.4], 1.0)).unwrap();
        let zero = ReducedVma {
            r: 1,
            p: 1,
            u: scalar(0.0),
            v: vec![scalar(0.0)],
        };
        let (s, t) = lift_reduced(&std, &zero).unwrap();
        assert_eq!(s, Matrix::identity(3, 3));
        assert_eq!(t[0], Matrix::zeros(3, 3));
        let bad = ReducedVma {
            r: 2,
            p: 1,
            u: Matrix::zeros(2, 2),
            v: vec![Matrix::zeros(2, 2)],
        };
        assert!(matches!(lift_reduced(&std, &bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn var_component_trace() {
        let lambda = Matrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, 1.0, -1.0, 2.0, 0.3, 0.3]);
        let m = DfmModel::new(lambda, vec![Matrix::identity(2, 2) * 0.5], Matrix::identity(2, 2), Matrix::identity(4, 4));
        let std = standardize(&m).unwrap();
        let phis = var_component(&std);
        assert!((phis[0].trace() - 1.0).abs() < 1e-12);
        assert_eq!(linalg::numerical_rank(&phis[0], 1e-8), 2);
    }

    #[test]
    fn methods_agree_and_verify() {
        let lambda = Matrix::from_row_slice(5, 2, &[1.0, 0.2, 0.5, 1.0, -1.0, 0.4, 0.3, 0.3, 0.8, -0.6]);
        let phi = vec![
            Matrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]),
            Matrix::from_row_slice(2, 2, &[0.1, 0.0, 0.05, -0.2]),
        ];
        let se = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let seps = Matrix::from_diagonal(&linalg::Vector::from_vec(vec![1.0, 2.0, 0.5, 1.5, 0.8]));
        let m = DfmModel::new(lambda, phi, se, seps);
        let a = build_varma(&m, Method::Reduced, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let b = build_varma(&m, Method::Full, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(a.report.pass, "{:?}", a.report);
        assert!(b.report.pass, "{:?}", b.report);
        assert!(linalg::rel_diff(&a.varma.sigma_zeta, &b.varma.sigma_zeta) <= 1e-8);
        for (x, y) in a.varma.theta.iter().zip(&b.varma.theta) {
            assert!((x - y).norm() <= 1e-8 * (1.0 + y.norm()));
        }
        assert!(a.invertibility.is_acceptable());
        let report = verify_varma(&m, &a.varma, DEFAULT_THRESHOLD).unwrap();
        assert!(report.pass);

        let mut bad = a.varma.clone();
        bad.theta[0][(0, 0)] += 1e-3;
        let report = verify_varma(&m, &bad, DEFAULT_THRESHOLD).unwrap();
        assert!(!report.pass);
        assert!(report.max_residual > 1e-5 && report.max_residual < 1e-2, "{}", report.max_residual);
    }

    #[test]
    fn correlation_demo() {
        let (rx, ry) = onefactor_correlation_demo(0.0, 1.0, 2).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!((rx - expected).norm() < 1e-15);
        assert_eq!(ry, Matrix::identity(2, 2));
        let (rx, ry) = onefactor_correlation_demo(0.9, 0.3, 6).unwrap();
        for i in 0..6 {
            assert_eq!(rx[(i, i)], 1.0);
            assert_eq!(ry[(i, i)], 1.0);
        }
        assert!(rx[(0, 1)] >= ry[(0, 1)]);
        assert!(onefactor_correlation_demo(1.0, 1.0, 2).is_err());
    }

    #[test]
    fn json_layout() {
        let conv = build_varma(&onefactor(2, &[0.5], 0.75), Method::Reduced, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let v: serde_json::Value = serde_json::to_value(&conv.varma).unwrap();
        for key in ["d", "p", "phi_tilde", "theta", "sigma_zeta"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back = VarmaModel::from_json(&conv.varma.to_json().unwrap()).unwrap();
        assert_eq!(back, conv.varma);
        let r: serde_json::Value = serde_json::to_value(conv.reduced.unwrap()).unwrap();
        assert!(r.get("u").is_some() && r.get("v").is_some());
    }
}
