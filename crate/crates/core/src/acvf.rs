//! Exact autocovariances of the factor VAR, of `Z_t`, of `X_t`, and of
//! their `r`-dimensional projections.
//!
//! Only non-negative lags are stored; `Γ(−h) = Γ(h)ᵀ`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, json, Matrix};
use crate::model::{StandardizedDfm, EPS_STATIONARY};

/// Companion sizes up to this use the direct Kronecker solve; larger ones
/// use the doubling iteration.
pub const LYAPUNOV_DIRECT_MAX: usize = 30;
const DOUBLING_TOL: f64 = 1e-13;
const DOUBLING_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcvfSequence {
    pub dim: usize,
    /// Lag beyond which `Γ(h) = 0`, when known.
    pub exact_support: Option<usize>,
    /// `Γ(0), Γ(1), …, Γ(h_max)`.
    #[serde(with = "json::matrices")]
    pub gammas: Vec<Matrix>,
}

impl AcvfSequence {
    pub fn new(gammas: Vec<Matrix>, exact_support: Option<usize>) -> Result<Self> {
        let first = gammas
            .first()
            .ok_or_else(|| Error::InvalidInput("autocovariance sequence is empty".into()))?;
        let dim = first.nrows();
        for g in &gammas {
            linalg::check_shape(g, dim, dim, "autocovariance")?;
            linalg::check_finite(g)?;
        }
        Ok(AcvfSequence {
            dim,
            exact_support,
            gammas,
        })
    }

    /// Largest stored lag.
    pub fn h_max(&self) -> usize {
        self.gammas.len() - 1
    }

    /// True when `Γ(h)` is known to vanish.
    pub fn vanishes_at(&self, h: usize) -> bool {
        matches!(self.exact_support, Some(p) if h > p)
    }

    /// True when `Γ(h)` is available, stored or known to vanish.
    pub fn covers(&self, h: usize) -> bool {
        h <= self.h_max() || self.vanishes_at(h)
    }

    pub fn lag(&self, h: usize) -> Result<Cow<'_, Matrix>> {
        if let Some(g) = self.gammas.get(h) {
            Ok(Cow::Borrowed(g))
        } else if self.vanishes_at(h) {
            Ok(Cow::Owned(Matrix::zeros(self.dim, self.dim)))
        } else {
            Err(Error::InvalidInput(format!(
                "autocovariance requested at lag {h}, sequence covers 0..={}",
                self.h_max()
            )))
        }
    }

    /// Block Toeplitz matrix `[Γ(j − i)]_{i,j = 0..=h}`.
    pub fn block_toeplitz(&self, h: usize) -> Result<Matrix> {
        let n = self.dim;
        let mut t = Matrix::zeros(n * (h + 1), n * (h + 1));
        for i in 0..=h {
            for j in 0..=h {
                let block = if j >= i {
                    self.lag(j - i)?.into_owned()
                } else {
                    self.lag(i - j)?.transpose()
                };
                t.view_mut((i * n, j * n), (n, n)).copy_from(&block);
            }
        }
        Ok(t)
    }

    /// Applies `f` to every stored lag, keeping the support.
    pub fn map(&self, f: impl Fn(usize, &Matrix) -> Matrix) -> Result<AcvfSequence> {
        let gammas = self.gammas.iter().enumerate().map(|(h, g)| f(h, g)).collect();
        AcvfSequence::new(gammas, self.exact_support)
    }
}

/// Solves `X = A X Aᵀ + Q` for a stable `A`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    linalg::check_square(a)?;
    linalg::check_shape(q, a.nrows(), a.nrows(), "Lyapunov right-hand side")?;
    if a.nrows() <= LYAPUNOV_DIRECT_MAX {
        lyapunov_kronecker(a, q)
    } else {
        lyapunov_doubling(a, q)
    }
}

/// `(I − A⊗A) vec(X) = vec(Q)`.
pub fn lyapunov_kronecker(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let system = Matrix::identity(n * n, n * n) - a.kronecker(a);
    let rhs = linalg::Vector::from_column_slice(q.as_slice());
    let lu = system.lu();
    let x = lu.solve(&rhs).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    Ok(linalg::symmetrize(&Matrix::from_column_slice(n, n, x.as_slice())))
}

/// `X = Σ_k A^k Q (A^k)ᵀ` summed by repeated squaring.
pub fn lyapunov_doubling(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let mut ak = a.clone();
    let mut x = q.clone();
    for _ in 0..DOUBLING_MAX_ITER {
        let update = &ak * &x * ak.transpose();
        let done = update.norm() <= DOUBLING_TOL * x.norm().max(linalg::ABS_FLOOR);
        x += update;
        if done {
            return Ok(linalg::symmetrize(&x));
        }
        ak = &ak * &ak;
        if !ak.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::Singular {
        condition: f64::INFINITY,
    })
}

/// Autocovariances `Γ_F(0..=h_max)` of a stationary VAR(p) with noise
/// covariance `Σ_η`.
pub fn var_acvf(phi: &[Matrix], sigma_eta: &Matrix, h_max: usize) -> Result<AcvfSequence> {
    linalg::check_square(sigma_eta)?;
    let r = sigma_eta.nrows();
    for m in phi {
        linalg::check_shape(m, r, r, "VAR coefficient")?;
    }
    let p = phi.len();
    if p == 0 {
        let mut gammas = vec![sigma_eta.clone()];
        gammas.extend((0..h_max).map(|_| Matrix::zeros(r, r)));
        return AcvfSequence::new(gammas, Some(0));
    }
    let comp = linalg::companion(phi);
    let radius = linalg::spectral_radius(&comp);
    if radius >= 1.0 - EPS_STATIONARY {
        return Err(Error::NotStationary { radius });
    }
    let mut q = Matrix::zeros(r * p, r * p);
    q.view_mut((0, 0), (r, r)).copy_from(sigma_eta);
    let state = solve_discrete_lyapunov(&comp, &q)?;

    let mut gammas: Vec<Matrix> = (0..p.min(h_max + 1))
        .map(|h| state.view((0, h * r), (r, r)).into_owned())
        .collect();
    for h in p..=h_max {
        let mut g = Matrix::zeros(r, r);
        for (i, m) in phi.iter().enumerate() {
            g += m * &gammas[h - i - 1];
        }
        gammas.push(g);
    }
    AcvfSequence::new(gammas, None)
}

/// `Γ_Z(h)` for `Z_t = Λη_t + ε_t − Σ Φ̃_i ε_{t−i}`, exactly supported on
/// lags `0..=p`.
pub fn gamma_z(model: &StandardizedDfm) -> AcvfSequence {
    let m = &model.model;
    let d = m.d;
    // Φ̃_0 = −I, Φ̃_i = (1/d) Λ Φ_i Λᵀ
    let mut phis = vec![-Matrix::identity(d, d)];
    phis.extend(m.phi.iter().map(|p| model.lift(p)));
    let lambda_part = model.lift(&(&m.sigma_eta * d as f64));
    moving_sum_acvf(&phis, lambda_part, m.p)
}

/// Autocovariances of `(1/√d) Λᵀ Z_t`, supported on lags `0..=p`.
pub fn gamma_z_reduced(model: &StandardizedDfm) -> AcvfSequence {
    let m = &model.model;
    let r = m.r;
    let mut phis = vec![-Matrix::identity(r, r)];
    phis.extend(m.phi.iter().cloned());
    moving_sum_acvf(&phis, &m.sigma_eta * m.d as f64, m.p)
}

/// `Γ(0) = extra + Σ_{i=0..p} C_i C_iᵀ`, `Γ(h) = Σ_{i=0..p−h} C_{i+h} C_iᵀ`.
fn moving_sum_acvf(coeffs: &[Matrix], extra: Matrix, p: usize) -> AcvfSequence {
    let mut gammas = Vec::with_capacity(p + 1);
    for h in 0..=p {
        let mut g = if h == 0 { extra.clone() } else { Matrix::zeros(extra.nrows(), extra.ncols()) };
        for i in 0..=(p - h) {
            g += &coeffs[i + h] * coeffs[i].transpose();
        }
        if h == 0 {
            g = linalg::symmetrize(&g);
        }
        gammas.push(g);
    }
    AcvfSequence {
        dim: extra.nrows(),
        exact_support: Some(p),
        gammas,
    }
}

/// `Γ_X(h) = Λ Γ_F(h) Λᵀ + 1{h=0} I_d` for `h = 0..=h_max`. No finite
/// support is claimed unless `p = 0`.
pub fn gamma_x(model: &StandardizedDfm, h_max: usize) -> Result<AcvfSequence> {
    let m = &model.model;
    let gf = var_acvf(&m.phi, &m.sigma_eta, h_max)?;
    let l = &m.lambda;
    gf.map(|h, g| {
        let mut out = l * g * l.transpose();
        if h == 0 {
            out = linalg::symmetrize(&out) + Matrix::identity(m.d, m.d);
        }
        out
    })
}

/// Autocovariances of `W_t = (1/√d) Λᵀ X_t`: `Γ_W(0) = d Γ_F(0) + I_r`,
/// `Γ_W(h) = d Γ_F(h)`.
pub fn gamma_w(model: &StandardizedDfm, h_max: usize) -> Result<AcvfSequence> {
    let m = &model.model;
    let gf = var_acvf(&m.phi, &m.sigma_eta, h_max)?;
    let df = m.d as f64;
    gf.map(|h, g| {
        let mut out = g * df;
        if h == 0 {
            out = linalg::symmetrize(&out) + Matrix::identity(m.r, m.r);
        }
        out
    })
}

/// Sample autocovariances `(1/n) Σ_t x_{t+h} x_tᵀ` of a zero-mean series
/// stored one observation per row.
pub fn sample_acvf(x: &Matrix, h_max: usize) -> Result<AcvfSequence> {
    let n = x.nrows();
    if n <= h_max {
        return Err(Error::InvalidInput(format!(
            "series of length {n} is too short for lag {h_max}"
        )));
    }
    let gammas = (0..=h_max)
        .map(|h| {
            let lead = x.rows(h, n - h);
            let lag = x.rows(0, n - h);
            lead.transpose() * lag / n as f64
        })
        .collect();
    AcvfSequence::new(gammas, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{standardize, DfmModel};

    fn scalar(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    fn std_model(d: usize, phi: Vec<f64>, s2: f64) -> StandardizedDfm {
        let m = DfmModel::new(
            Matrix::from_element(d, 1, 1.0),
            phi.into_iter().map(scalar).collect(),
            scalar(s2),
            Matrix::identity(d, d),
        );
        standardize(&m).unwrap()
    }

    #[test]
    fn var_acvf_white_noise() {
        let s = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = var_acvf(&[], &s, 3).unwrap();
        assert_eq!(a.gammas[0], s);
        assert!(a.gammas[1..].iter().all(|g| g.iter().all(|&v| v == 0.0)));
        assert_eq!(a.exact_support, Some(0));
    }

    #[test]
    fn var_acvf_ar1() {
        // γ(0) = σ²/(1−φ²) = 0.75/0.75 = 1, γ(h) = φ^h
        let a = var_acvf(&[scalar(0.5)], &scalar(0.75), 2).unwrap();
        for (h, want) in [1.0, 0.5, 0.25].iter().enumerate() {
            assert!((a.gammas[h][(0, 0)] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn var_acvf_ar2_yule_walker() {
        // Yule–Walker for φ = (0.5, 0.2), σ² = 1:
        //   γ0 − φ1 γ1 − φ2 γ2 = 1
        //   −φ1 γ0 + (1 − φ2) γ1 = 0
        //   −φ2 γ0 − φ1 γ1 + γ2 = 0
        let (p1, p2) = (0.5, 0.2);
        let sys = Matrix::from_row_slice(3, 3, &[1.0, -p1, -p2, -p1, 1.0 - p2, 0.0, -p2, -p1, 1.0]);
        let yw = sys.lu().solve(&linalg::Vector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        let a = var_acvf(&[scalar(p1), scalar(p2)], &scalar(1.0), 2).unwrap();
        for h in 0..3 {
            assert!((a.gammas[h][(0, 0)] - yw[h]).abs() < 1e-12, "lag {h}");
        }
    }

    #[test]
    fn var_acvf_rejects_unit_root() {
        assert!(matches!(
            var_acvf(&[scalar(1.0)], &scalar(1.0), 2),
            Err(Error::NotStationary { .. })
        ));
    }

    #[test]
    fn lyapunov_routes_agree() {
        let a = Matrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, -0.2, 0.3, 0.4, 0.0, 0.1, -0.6]);
        let q = Matrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 0.5]);
        let x1 = lyapunov_kronecker(&a, &q).unwrap();
        let x2 = lyapunov_doubling(&a, &q).unwrap();
        assert!(linalg::rel_diff(&x1, &x2) < 1e-12);
        let resid = &x1 - &a * &x1 * a.transpose() - &q;
        assert!(resid.norm() < 1e-12);
    }

    #[test]
    fn gamma_z_scalar_and_support() {
        let m = std_model(1, vec![0.5], 0.75);
        let g = gamma_z(&m);
        assert!((g.gammas[0][(0, 0)] - 2.0).abs() < 1e-14);
        assert!((g.gammas[1][(0, 0)] + 0.5).abs() < 1e-14);
        assert_eq!(g.exact_support, Some(1));
        assert!(g.lag(2).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_z_white_noise_factors() {
        let m = std_model(3, vec![], 0.5);
        let g = gamma_z(&m);
        let want = Matrix::from_element(3, 3, 0.5) + Matrix::identity(3, 3);
        assert!((&g.gammas[0] - want).norm() < 1e-14);
        assert!(g.lag(1).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_z_reduced_examples() {
        let g = gamma_z_reduced(&std_model(4, vec![0.5], 0.75));
        assert!((g.gammas[0][(0, 0)] - 4.25).abs() < 1e-14);
        assert!((g.gammas[1][(0, 0)] + 0.5).abs() < 1e-14);
        let g = gamma_z_reduced(&std_model(4, vec![], 0.75));
        assert!((g.gammas[0][(0, 0)] - 4.0).abs() < 1e-14);
        assert_eq!(g.gammas.len(), 1);
    }

    #[test]
    fn gamma_x_scalar() {
        let g = gamma_x(&std_model(1, vec![0.5], 0.75), 2).unwrap();
        for (h, want) in [2.0, 0.5, 0.25].iter().enumerate() {
            assert!((g.gammas[h][(0, 0)] - want).abs() < 1e-14);
        }
        assert_eq!(g.exact_support, None);
    }

    #[test]
    fn gamma_w_scalar() {
        let g = gamma_w(&std_model(4, vec![0.5], 0.75), 1).unwrap();
        assert!((g.gammas[0][(0, 0)] - 5.0).abs() < 1e-14);
        assert!((g.gammas[1][(0, 0)] - 2.0).abs() < 1e-14);
        let g = gamma_w(&std_model(4, vec![], 0.75), 1).unwrap();
        assert!((g.gammas[0][(0, 0)] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn sample_acvf_of_constant_series() {
        let x = Matrix::from_element(4, 1, 2.0);
        let a = sample_acvf(&x, 1).unwrap();
        assert_eq!(a.gammas[0][(0, 0)], 4.0);
        assert_eq!(a.gammas[1][(0, 0)], 3.0);
    }

    #[test]
    fn json_shape() {
        let g = gamma_z(&std_model(1, vec![0.5], 0.75));
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.starts_with(r#"{"dim":1,"exact_support":1,"gammas":[{"rows":1"#), "{s}");
        let back: AcvfSequence = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }
}
