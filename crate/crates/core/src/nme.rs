//! The nonlinear matrix equation `X + AᵀX⁻¹A = Q`.
//!
//! For a VMA(1) with autocovariances `Γ(0) = Q`, `Γ(1) = Aᵀ`, the maximal
//! solution is the innovation covariance and `Θ_1 = AᵀX⁻¹`. Solvability is
//! governed by `Ψ(w) = Q + wA + w⁻¹Aᵀ` being positive semidefinite on the
//! unit circle, which is checked on a grid.

use serde::{Deserialize, Serialize};

use crate::acvf::AcvfSequence;
use crate::error::{Error, Result};
use crate::linalg::{self, json, Matrix};

pub const DEFAULT_GRID: usize = 256;
pub const MIN_GRID: usize = 64;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const ENGWERDA_MAX_ITER: usize = 100_000;
pub const CHIANG_MAX_ITER: usize = 10_000;
/// Iterations without a new smallest update after which an iteration is
/// taken to have reached rounding level; the residual check still applies.
const STALL_ITER: usize = 200;
/// Relative residual `‖X + AᵀX⁻¹A − Q‖ / ‖Q‖` a solution must reach.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Grid minima above `−PSI_TOL · max(‖Q‖, 1)` count as nonnegative.
pub const PSI_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmeProblem {
    #[serde(with = "json::matrix")]
    pub a: Matrix,
    #[serde(with = "json::matrix")]
    pub q: Matrix,
}

impl NmeProblem {
    pub fn new(a: Matrix, q: Matrix) -> Result<Self> {
        let p = NmeProblem { a, q };
        p.check()?;
        Ok(p)
    }

    /// `A = Γ(1)ᵀ`, `Q = Γ(0)` for a sequence supported on lags 0 and 1.
    pub fn from_acvf(acvf: &AcvfSequence) -> Result<Self> {
        if acvf.exact_support != Some(1) {
            return Err(Error::InvalidInput(
                "the matrix equation form needs autocovariances vanishing beyond lag 1".into(),
            ));
        }
        NmeProblem::new(acvf.lag(1)?.transpose(), acvf.gammas[0].clone())
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn check(&self) -> Result<()> {
        linalg::check_square(&self.q)?;
        let d = self.q.nrows();
        linalg::check_shape(&self.a, d, d, "A")?;
        linalg::check_finite(&self.a)?;
        linalg::check_finite(&self.q)?;
        let min = linalg::min_eigenvalue(&self.q)?;
        if !linalg::is_pd(&self.q) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(())
    }

    /// `‖X + AᵀX⁻¹A − Q‖_F / ‖Q‖_F`.
    pub fn residual(&self, x: &Matrix) -> Result<f64> {
        let xi = linalg::inverse(x)?;
        let r = x + self.a.transpose() * xi * &self.a - &self.q;
        Ok(r.norm() / self.q.norm().max(linalg::ABS_FLOOR))
    }

    /// Real and imaginary parts of `Ψ(e^{iθ})`.
    fn psi(&self, theta: f64) -> (Matrix, Matrix) {
        let (s, c) = theta.sin_cos();
        let at = self.a.transpose();
        let re = &self.q + (&self.a + &at) * c;
        let im = (&self.a - &at) * s;
        (re, im)
    }
}

/// `[[re, −im], [im, re]]`, real symmetric when `re + i·im` is Hermitian.
fn embed(re: &Matrix, im: &Matrix) -> Matrix {
    let d = re.nrows();
    let mut m = Matrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(re);
    m.view_mut((d, d), (d, d)).copy_from(re);
    m.view_mut((0, d), (d, d)).copy_from(&(-im));
    m.view_mut((d, 0), (d, d)).copy_from(im);
    m
}

fn grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| std::f64::consts::TAU * k as f64 / n as f64)
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiEvaluation {
    pub theta_grid: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
    /// Nonnegative on the grid (within tolerance) and positive definite at
    /// some grid point.
    pub regular: bool,
}

impl PsiEvaluation {
    pub fn min(&self) -> f64 {
        self.min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn solvable_hint(&self) -> bool {
        self.regular
    }
}

pub fn psi_check(problem: &NmeProblem, grid_size: usize) -> Result<PsiEvaluation> {
    problem.check()?;
    if grid_size < MIN_GRID {
        return Err(Error::InvalidInput(format!("grid size must be at least {MIN_GRID}")));
    }
    let theta_grid = grid(grid_size);
    let mut min_eigenvalues = Vec::with_capacity(grid_size);
    for &t in &theta_grid {
        let (re, im) = problem.psi(t);
        min_eigenvalues.push(linalg::min_eigenvalue(&linalg::symmetrize(&embed(&re, &im)))?);
    }
    let scale = problem.q.norm().max(1.0);
    let nonnegative = min_eigenvalues.iter().all(|&m| m >= -PSI_TOL * scale);
    let somewhere_pd = min_eigenvalues.iter().any(|&m| m > linalg::EPS_PD * scale);
    Ok(PsiEvaluation {
        theta_grid,
        min_eigenvalues,
        regular: nonnegative && somewhere_pd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmeMethod {
    Engwerda,
    Chiang,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmeSolution {
    #[serde(with = "json::matrix")]
    pub x: Matrix,
    pub residual: f64,
    pub iterations: usize,
    pub method: NmeMethod,
}

impl NmeSolution {
    /// `Θ_1 = AᵀX⁻¹`.
    pub fn theta(&self, problem: &NmeProblem) -> Result<Matrix> {
        Ok(problem.a.transpose() * linalg::spd_inverse(&self.x)?)
    }
}

fn not_solvable(reason: impl Into<String>, iterations: usize, last: Option<Matrix>) -> Error {
    Error::NotSolvable {
        reason: reason.into(),
        iterations,
        last_iterate: last.map(Box::new),
    }
}

fn finish(problem: &NmeProblem, x: Matrix, iterations: usize, method: NmeMethod) -> Result<NmeSolution> {
    let residual = problem.residual(&x)?;
    if residual.is_nan() || residual > RESIDUAL_TOL {
        return Err(not_solvable(
            format!("residual {residual:e} exceeds {RESIDUAL_TOL:e}"),
            iterations,
            Some(x),
        ));
    }
    Ok(NmeSolution {
        x,
        residual,
        iterations,
        method,
    })
}

/// Fixed-point iteration `S ← I − ÂᵀS⁻¹Â` from `S = I`, run on
/// `Â = Q^{-1/2} A Q^{-1/2}` and mapped back by `X = Q^{1/2} S Q^{1/2}`.
pub fn solve_engwerda(problem: &NmeProblem, tol: f64, n_max: usize) -> Result<NmeSolution> {
    engwerda_iterates(problem, tol, n_max, |_| ())
}

/// As [`solve_engwerda`], calling `observe` with every iterate `X_n`.
pub fn engwerda_iterates(
    problem: &NmeProblem,
    tol: f64,
    n_max: usize,
    mut observe: impl FnMut(&Matrix),
) -> Result<NmeSolution> {
    problem.check()?;
    let d = problem.dim();
    let (half, inv_half) = linalg::spd_sqrt_pair(&problem.q)?;
    let a_hat = &inv_half * &problem.a * &inv_half;
    let back = |s: &Matrix| linalg::symmetrize(&(&half * s * &half));
    let id = Matrix::identity(d, d);
    let mut s = id.clone();
    let mut best_update = f64::INFINITY;
    let mut best_at = 0;
    observe(&back(&s));
    for n in 1..=n_max {
        if !linalg::is_pd(&s) {
            return Err(not_solvable("iterate lost positive definiteness", n - 1, Some(back(&s))));
        }
        let s_inv = linalg::spd_inverse(&s)
            .map_err(|_| not_solvable("iterate lost positive definiteness", n - 1, Some(back(&s))))?;
        let next = linalg::symmetrize(&(&id - a_hat.transpose() * s_inv * &a_hat));
        let update = (&next - &s).norm();
        s = next;
        observe(&back(&s));
        if update < best_update {
            best_update = update;
            best_at = n;
        }
        let stalled = n - best_at >= STALL_ITER;
        if update <= tol * s.norm().max(linalg::ABS_FLOOR) || stalled {
            if !linalg::is_pd(&s) {
                return Err(not_solvable("limit is not positive definite", n, Some(back(&s))));
            }
            return finish(problem, back(&s), n, NmeMethod::Engwerda);
        }
    }
    Err(not_solvable(
        format!("no convergence within {n_max} iterations"),
        n_max,
        Some(back(&s)),
    ))
}

/// Accelerated recursion
/// `Q_k = Q_1 − A_1ᵀ(Q_{k−1} − B_1)⁻¹A_1` with `A_1 = AQ⁻¹A`,
/// `B_1 = AQ⁻¹Aᵀ`, `Q_1 = Q − AᵀQ⁻¹A`.
pub fn solve_chiang(problem: &NmeProblem, tol: f64, k_max: usize) -> Result<NmeSolution> {
    let psi = psi_check(problem, DEFAULT_GRID)?;
    if !psi.regular {
        return Err(not_solvable(
            format!("Ψ is not positive semidefinite on the unit circle (min eigenvalue {:e})", psi.min()),
            0,
            None,
        ));
    }
    let q_inv = linalg::spd_inverse(&problem.q)?;
    let a = &problem.a;
    let a1 = a * &q_inv * a;
    let b1 = linalg::symmetrize(&(a * &q_inv * a.transpose()));
    let q1 = linalg::symmetrize(&(&problem.q - a.transpose() * &q_inv * a));
    let mut qk = q1.clone();
    let mut best_update = f64::INFINITY;
    let mut best_at = 1;
    for k in 2..=k_max.max(2) {
        let shifted = &qk - &b1;
        let inv = linalg::inverse(&shifted)?;
        let next = linalg::symmetrize(&(&q1 - a1.transpose() * inv * &a1));
        let update = (&next - &qk).norm();
        qk = next;
        if !qk.iter().all(|v| v.is_finite()) {
            return Err(not_solvable("iterate is not finite", k, None));
        }
        if update < best_update {
            best_update = update;
            best_at = k;
        }
        let stalled = k - best_at >= STALL_ITER;
        if update <= tol * qk.norm().max(linalg::ABS_FLOOR) || stalled {
            if !linalg::is_pd(&qk) {
                return Err(not_solvable("limit is not positive definite", k, Some(qk)));
            }
            return finish(problem, qk, k, NmeMethod::Chiang);
        }
    }
    Err(not_solvable(
        format!("no convergence within {k_max} iterations"),
        k_max,
        Some(qk),
    ))
}

pub fn solve(problem: &NmeProblem, method: NmeMethod, tol: f64, max_iter: usize) -> Result<NmeSolution> {
    match method {
        NmeMethod::Engwerda => solve_engwerda(problem, tol, max_iter),
        NmeMethod::Chiang => solve_chiang(problem, tol, max_iter),
    }
}

/// Largest relative deviation over the grid between `Ψ(e^{iθ})` and
/// `(I + e^{−iθ}Θ_1) X (I + e^{iθ}Θ_1ᵀ)`, with `Θ_1 = AᵀX⁻¹`, in the complex
/// Frobenius norm relative to `‖Q‖_F`.
pub fn verify_factorization(problem: &NmeProblem, x: &Matrix, grid_size: usize) -> Result<f64> {
    problem.check()?;
    let d = problem.dim();
    linalg::check_shape(x, d, d, "X")?;
    if !linalg::is_pd(x) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: linalg::min_eigenvalue(x)?,
        });
    }
    if grid_size < MIN_GRID {
        return Err(Error::InvalidInput(format!("grid size must be at least {MIN_GRID}")));
    }
    let theta = problem.a.transpose() * linalg::spd_inverse(x)?;
    let id = Matrix::identity(d, d);
    let scale = problem.q.norm().max(linalg::ABS_FLOOR);
    let mut worst: f64 = 0.0;
    for t in grid(grid_size) {
        let (s, c) = t.sin_cos();
        // I + e^{−iθ}Θ = P + iR
        let p = &id + &theta * c;
        let r = &theta * (-s);
        let f_re = &p * x * p.transpose() + &r * x * r.transpose();
        let f_im = &r * x * p.transpose() - &p * x * r.transpose();
        let (psi_re, psi_im) = problem.psi(t);
        let err = ((psi_re - f_re).norm_squared() + (psi_im - f_im).norm_squared()).sqrt();
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovations::{vma_invertibility, InvertibilityStatus};

    fn scalar(a: f64, q: f64) -> NmeProblem {
        NmeProblem::new(Matrix::from_element(1, 1, a), Matrix::from_element(1, 1, q)).unwrap()
    }

    #[test]
    fn zero_a_is_trivial() {
        let q = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = NmeProblem::new(Matrix::zeros(2, 2), q.clone()).unwrap();
        let psi = psi_check(&p, DEFAULT_GRID).unwrap();
        let lmin = linalg::min_eigenvalue(&q).unwrap();
        assert!(psi.min_eigenvalues.iter().all(|m| (m - lmin).abs() < 1e-12));
        assert!(psi.regular);
        let e = solve_engwerda(&p, DEFAULT_TOL, ENGWERDA_MAX_ITER).unwrap();
        assert!((&e.x - &q).norm() < 1e-14);
        assert_eq!(e.iterations, 1);
        let c = solve_chiang(&p, DEFAULT_TOL, CHIANG_MAX_ITER).unwrap();
        assert!((&c.x - &q).norm() < 1e-14);
        assert_eq!(verify_factorization(&p, &q, DEFAULT_GRID).unwrap(), 0.0);
    }

    #[test]
    fn scalar_solvable() {
        // x² − x + 0.16 = 0 has roots 0.8 and 0.2
        let p = scalar(0.4, 1.0);
        let e = solve_engwerda(&p, DEFAULT_TOL, ENGWERDA_MAX_ITER).unwrap();
        let c = solve_chiang(&p, DEFAULT_TOL, CHIANG_MAX_ITER).unwrap();
        assert!((e.x[(0, 0)] - 0.8).abs() < 1e-12);
        assert!((c.x[(0, 0)] - 0.8).abs() < 1e-12);
        assert!(c.iterations < e.iterations);
        assert!((e.theta(&p).unwrap()[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(verify_factorization(&p, &e.x, DEFAULT_GRID).unwrap() <= 1e-12);
    }

    #[test]
    fn scalar_unsolvable() {
        let p = scalar(0.6, 1.0);
        let psi = psi_check(&p, DEFAULT_GRID).unwrap();
        assert!(!psi.regular);
        assert!((psi.min() + 0.2).abs() < 1e-12);
        assert!(matches!(
            solve_engwerda(&p, DEFAULT_TOL, ENGWERDA_MAX_ITER),
            Err(Error::NotSolvable { last_iterate: Some(_), .. })
        ));
        assert!(matches!(
            solve_chiang(&p, DEFAULT_TOL, CHIANG_MAX_ITER),
            Err(Error::NotSolvable { .. })
        ));
    }

    #[test]
    fn non_maximal_root_factorizes_but_is_not_invertible() {
        let p = scalar(0.4, 1.0);
        let x = Matrix::from_element(1, 1, 0.2);
        assert!(p.residual(&x).unwrap() < 1e-15);
        assert!(verify_factorization(&p, &x, DEFAULT_GRID).unwrap() <= 1e-12);
        let theta = p.a.transpose() * linalg::inverse(&x).unwrap();
        assert!((theta[(0, 0)] - 2.0).abs() < 1e-14);
        let inv = vma_invertibility(&[theta]);
        assert!((inv.min_root_modulus - 0.5).abs() < 1e-14);
        assert_eq!(inv.status, InvertibilityStatus::NonInvertible);
    }

    #[test]
    fn engwerda_iterates_decrease() {
        let a = Matrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.25]);
        let q = Matrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 1.0]);
        let p = NmeProblem::new(a, q).unwrap();
        let mut iterates = Vec::new();
        let sol = engwerda_iterates(&p, DEFAULT_TOL, ENGWERDA_MAX_ITER, |x| iterates.push(x.clone())).unwrap();
        for w in iterates.windows(2) {
            let diff = linalg::symmetrize(&(&w[0] - &w[1]));
            assert!(linalg::min_eigenvalue(&diff).unwrap() >= -1e-10);
        }
        let c = solve_chiang(&p, DEFAULT_TOL, CHIANG_MAX_ITER).unwrap();
        assert!((&sol.x - &c.x).norm() <= 1e-8 * sol.x.norm());
    }

    #[test]
    fn small_grid_and_bad_problems_are_rejected() {
        let p = scalar(0.1, 1.0);
        assert!(psi_check(&p, 63).is_err());
        assert!(NmeProblem::new(Matrix::zeros(1, 1), Matrix::from_element(1, 1, -1.0)).is_err());
        assert!(NmeProblem::new(Matrix::zeros(2, 2), Matrix::identity(3, 3)).is_err());
        assert!(matches!(
            verify_factorization(&p, &Matrix::from_element(1, 1, -1.0), DEFAULT_GRID),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn problem_json() {
        let p: NmeProblem = serde_json::from_str(
            r#"{"a": {"rows": 1, "cols": 1, "data": [0.4]}, "q": {"rows": 1, "cols": 1, "data": [1.0]}}"#,
        )
        .unwrap();
        assert_eq!(p, scalar(0.4, 1.0));
        let sol = solve_engwerda(&p, DEFAULT_TOL, ENGWERDA_MAX_ITER).unwrap();
        let v: serde_json::Value = serde_json::to_value(&sol).unwrap();
        assert_eq!(v["method"], "engwerda");
    }
}
