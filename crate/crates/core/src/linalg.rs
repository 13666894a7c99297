//! Dense real linear algebra used throughout the crate.
//!
//! Every numerical tolerance lives here. Tolerances are relative to the
//! Frobenius norm of the operand, with an absolute floor of
//! [`ABS_FLOOR`]. Matrices are [`nalgebra::DMatrix<f64>`]; this module adds
//! the checked decompositions the rest of the crate relies on and the JSON
//! wire format `{"rows", "cols", "data"}` (row-major).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Absolute floor applied to every relative tolerance.
pub const ABS_FLOOR: f64 = 1e-14;
/// Relative asymmetry accepted by [`sym_eig`] and friends.
pub const SYM_TOL: f64 = 1e-12;
/// Positive definiteness threshold, relative to the largest eigenvalue.
pub const EPS_PD: f64 = 1e-12;
/// Smallest accepted reciprocal condition number for [`inverse`].
pub const EPS_COND: f64 = 1e-13;

/// `max(rel * scale, ABS_FLOOR)`.
pub fn tolerance(rel: f64, scale: f64) -> f64 {
    (rel * scale).max(ABS_FLOOR)
}

pub fn frob_norm(m: &Matrix) -> f64 {
    m.norm()
}

/// `‖a - b‖_F / max(‖b‖_F, floor)`.
pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(ABS_FLOOR)
}

pub fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NotFinite)
    }
}

pub fn check_square(m: &Matrix) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::shape(
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ))
    }
}

pub fn check_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() == rows && m.ncols() == cols {
        Ok(())
    } else {
        Err(Error::shape(
            format!("{what} {rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ))
    }
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    check_square(m)?;
    check_finite(m)?;
    let asymmetry = (m - m.transpose()).norm();
    let tol = tolerance(SYM_TOL, m.norm());
    if asymmetry > tol {
        return Err(Error::NotSymmetric {
            asymmetry,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Eigendecomposition `M = S diag(λ) Sᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Sorted in descending order.
    pub eigenvalues: Vector,
    /// Orthogonal; column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

impl SymEig {
    pub fn max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `S diag(f(λ)) Sᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let s = &self.eigenvectors;
        let mut scaled = s.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[j]);
        }
        symmetrize(&(scaled * s.transpose()))
    }
}

pub fn sym_eig(m: &Matrix) -> Result<SymEig> {
    check_symmetric(m)?;
    let n = m.nrows();
    if n == 0 {
        return Err(Error::shape("non-empty matrix", "0x0"));
    }
    if m.iter().all(|&x| x == 0.0) {
        // the solver rescales by the largest entry and returns NaN here
        return Ok(SymEig {
            eigenvalues: Vector::zeros(n),
            eigenvectors: Matrix::identity(n, n),
        });
    }
    let mut eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| v.is_nan()) {
        // the solver occasionally breaks down on matrices whose entries sit
        // at rounding level; a diagonal shift leaves the eigenvectors intact
        let shift = m.norm();
        eig = (symmetrize(m) + Matrix::identity(n, n) * shift).symmetric_eigen();
        eig.eigenvalues.add_scalar_mut(-shift);
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the solver's column order on ties
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix) -> Result<f64> {
    Ok(sym_eig(m)?.min())
}

fn pd_threshold(eig: &SymEig) -> f64 {
    (EPS_PD * eig.max().abs()).max(ABS_FLOOR)
}

/// True iff `m` is symmetric and its smallest eigenvalue exceeds
/// `EPS_PD` times its largest.
pub fn is_pd(m: &Matrix) -> bool {
    match sym_eig(m) {
        Ok(eig) => eig.min() > pd_threshold(&eig),
        Err(_) => false,
    }
}

/// Symmetric square root `R` with `R R = m`.
pub fn spd_sqrt(m: &Matrix) -> Result<Matrix> {
    Ok(spd_sqrt_pair(m)?.0)
}

/// `(m^{1/2}, m^{-1/2})` from a single eigendecomposition.
pub fn spd_sqrt_pair(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let eig = sym_eig(m)?;
    if eig.min() <= pd_threshold(&eig) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: eig.min(),
        });
    }
    Ok((eig.map(f64::sqrt), eig.map(|x| 1.0 / x.sqrt())))
}

/// Lower-triangular Cholesky factor.
pub fn chol(m: &Matrix) -> Result<Matrix> {
    check_symmetric(m)?;
    match symmetrize(m).cholesky() {
        Some(c) => Ok(c.l()),
        None => Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eigenvalue(m)?,
        }),
    }
}

/// General inverse, rejecting matrices whose reciprocal condition number
/// (ratio of extreme singular values) is below [`EPS_COND`].
pub fn inverse(m: &Matrix) -> Result<Matrix> {
    check_square(m)?;
    check_finite(m)?;
    let sv = m.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin <= EPS_COND * smax {
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        return Err(Error::Singular { condition });
    }
    m.clone().try_inverse().ok_or(Error::Singular {
        condition: smax / smin,
    })
}

/// Inverse of a symmetric positive definite matrix through its Cholesky
/// factor. The result is exactly symmetric.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let c = symmetrize(m).cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        min_eigenvalue: min_eigenvalue(m).unwrap_or(f64::NAN),
    })?;
    Ok(symmetrize(&c.inverse()))
}

pub fn checked_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::shape(
            format!("{} rows on the right operand", a.ncols()),
            format!("{}", b.nrows()),
        ));
    }
    Ok(a * b)
}

pub fn checked_add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            format!("{}x{}", a.nrows(), a.ncols()),
            format!("{}x{}", b.nrows(), b.ncols()),
        ));
    }
    Ok(a + b)
}

/// Block companion matrix with first block row `[C_1 … C_k]` and identity
/// blocks on the sub-diagonal. Its eigenvalues are the roots of
/// `det(z^k I − C_1 z^{k−1} − … − C_k)`.
pub fn companion(blocks: &[Matrix]) -> Matrix {
    let k = blocks.len();
    if k == 0 {
        return Matrix::zeros(0, 0);
    }
    let n = blocks[0].nrows();
    let mut c = Matrix::zeros(n * k, n * k);
    for (i, b) in blocks.iter().enumerate() {
        c.view_mut((0, i * n), (n, n)).copy_from(b);
    }
    for i in 1..k {
        c.view_mut((i * n, (i - 1) * n), (n, n))
            .fill_with_identity();
    }
    c
}

/// Largest eigenvalue modulus of a general square matrix; 0 for an empty
/// matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .schur()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Numerical rank: singular values above `rel * σ_max`.
pub fn numerical_rank(m: &Matrix, rel: f64) -> usize {
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel * smax).count()
}

/// `serde(with = ...)` adapters for the matrix wire format.
pub mod json {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Matrix;

    #[derive(Serialize, Deserialize)]
    struct MatrixRepr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    impl From<&Matrix> for MatrixRepr {
        fn from(m: &Matrix) -> Self {
            let mut data = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                data.extend(m.row(i).iter().copied());
            }
            MatrixRepr {
                rows: m.nrows(),
                cols: m.ncols(),
                data,
            }
        }
    }

    impl MatrixRepr {
        fn into_matrix(self) -> Result<Matrix, String> {
            if self.rows == 0 || self.cols == 0 {
                return Err("matrix dimensions must be positive".into());
            }
            if self.data.len() != self.rows * self.cols {
                return Err(format!(
                    "matrix data has {} entries, expected {}x{}",
                    self.data.len(),
                    self.rows,
                    self.cols
                ));
            }
            if !self.data.iter().all(|x| x.is_finite()) {
                return Err("matrix contains non-finite entries".into());
            }
            Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
        }
    }

    pub mod matrix {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
            MatrixRepr::from(m).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
            MatrixRepr::deserialize(d)?
                .into_matrix()
                .map_err(D::Error::custom)
        }
    }

    pub mod matrices {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
            let reprs: Vec<MatrixRepr> = ms.iter().map(MatrixRepr::from).collect();
            reprs.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
            Vec::<MatrixRepr>::deserialize(d)?
                .into_iter()
                .map(|r| r.into_matrix().map_err(D::Error::custom))
                .collect()
        }
    }

    /// Standalone wrapper for reading or writing a single matrix document.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(transparent)]
    pub struct MatrixJson(#[serde(with = "matrix")] pub Matrix);
}
