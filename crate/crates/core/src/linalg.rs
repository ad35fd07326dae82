//! Dense linear-algebra kernels: SVD analysis, exact and least-squares
//! solves, inverse-norm computation, kernel/cokernel extraction.
//!
//! All rank decisions are singular-value thresholded relative to the largest
//! singular value; ties at the threshold resolve toward the larger kernel.

use nalgebra::{DMatrix, DVector};

use crate::error::{BifError, Result};
use crate::scalar::{cvt, Scalar};

/// Default relative rank tolerance (fraction of `sigma_max`).
pub const DEFAULT_RTOL: f64 = 1e-6;

/// Full singular value decomposition with square orthonormal frames.
#[derive(Debug, Clone)]
pub struct SvdResult<T: Scalar> {
    /// `min(rows, cols)` singular values, nonincreasing.
    pub singular_values: Vec<T>,
    /// `rows x rows` orthonormal left frame.
    pub left: DMatrix<T>,
    /// `cols x cols` orthonormal right frame.
    pub right: DMatrix<T>,
}

impl<T: Scalar> SvdResult<T> {
    pub fn sigma_max(&self) -> T {
        self.singular_values.first().copied().unwrap_or_else(T::zero)
    }

    pub fn sigma_min(&self) -> T {
        self.singular_values.last().copied().unwrap_or_else(T::zero)
    }

    /// Number of singular values strictly above `rtol * sigma_max`.
    pub fn rank(&self, rtol: T) -> usize {
        self.rank_at(rtol * self.sigma_max())
    }

    /// Number of singular values strictly above an absolute threshold.
    /// Ties at the threshold count toward the kernel.
    pub fn rank_at(&self, thresh: T) -> usize {
        self.singular_values.iter().filter(|&&s| s > thresh).count()
    }

    /// True if any singular value lies within a factor 10 of the rank
    /// threshold on either side (rank decision is fragile).
    pub fn rank_ambiguous(&self, rtol: T) -> bool {
        self.rank_ambiguous_at(rtol * self.sigma_max())
    }

    /// Like [`rank_ambiguous`](Self::rank_ambiguous) for an absolute
    /// threshold.
    pub fn rank_ambiguous_at(&self, thresh: T) -> bool {
        if thresh <= T::zero() {
            return false;
        }
        let ten = cvt::<T>(10.0);
        self.singular_values
            .iter()
            .any(|&s| s > thresh / ten && s <= thresh * ten)
    }

    /// Orthonormal kernel basis for an absolute threshold: right singular
    /// vectors past the rank decision.
    pub fn kernel_cols(&self, thresh: T) -> Vec<DVector<T>> {
        let rank = self.rank_at(thresh);
        (rank..self.right.ncols()).map(|j| self.right.column(j).into_owned()).collect()
    }

    /// Orthonormal cokernel basis for an absolute threshold: left singular
    /// vectors past the rank decision.
    pub fn cokernel_cols(&self, thresh: T) -> Vec<DVector<T>> {
        let rank = self.rank_at(thresh);
        (rank..self.left.ncols()).map(|j| self.left.column(j).into_owned()).collect()
    }
}

pub fn check_finite_vec<T: Scalar>(v: &DVector<T>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(BifError::NonFinite)
    }
}

pub fn check_finite_mat<T: Scalar>(m: &DMatrix<T>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(BifError::NonFinite)
    }
}

/// Complete a set of orthonormal columns to a square orthonormal frame by
/// greedily orthogonalizing standard basis vectors.
fn complete_frame<T: Scalar>(dim: usize, thin: &DMatrix<T>) -> DMatrix<T> {
    let mut cols: Vec<DVector<T>> = (0..thin.ncols()).map(|j| thin.column(j).into_owned()).collect();
    while cols.len() < dim {
        let mut best: Option<(T, DVector<T>)> = None;
        for j in 0..dim {
            let mut cand = DVector::<T>::zeros(dim);
            cand[j] = T::one();
            // two passes of Gram-Schmidt for stability
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&cand);
                    cand.axpy(-proj, c, T::one());
                }
            }
            let norm = cand.norm();
            if best.as_ref().map_or(true, |(n, _)| norm > *n) {
                best = Some((norm, cand));
            }
        }
        let (norm, mut v) = best.expect("dim > 0");
        v /= norm;
        cols.push(v);
    }
    DMatrix::from_columns(&cols)
}

/// SVD with full square `U` and `V` frames.
pub fn svd_analysis<T: Scalar>(op: &DMatrix<T>) -> Result<SvdResult<T>> {
    check_finite_mat(op)?;
    let (rows, cols) = op.shape();
    let svd = op.clone().svd(true, true);
    let u_thin = svd.u.expect("u requested");
    let v_thin = svd.v_t.expect("v_t requested").transpose();
    let mut sigma: Vec<T> = svd.singular_values.iter().copied().collect();
    // nalgebra sorts descending for `svd`; enforce it anyway
    sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(SvdResult {
        singular_values: sigma,
        left: complete_frame(rows, &u_thin),
        right: complete_frame(cols, &v_thin),
    })
}

/// Solve mode for [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Square nonsingular systems.
    Exact,
    /// Minimum-norm least-squares solution.
    LeastSquares,
}

/// Solve `op * x = rhs`.
pub fn solve<T: Scalar>(op: &DMatrix<T>, rhs: &DVector<T>, mode: SolveMode) -> Result<DVector<T>> {
    if rhs.len() != op.nrows() {
        return Err(BifError::DimensionMismatch(format!(
            "rhs has {} entries, operator has {} rows",
            rhs.len(),
            op.nrows()
        )));
    }
    check_finite_vec(rhs)?;
    let svd = svd_analysis(op)?;
    let rtol = cvt::<T>(DEFAULT_RTOL);
    let thresh = rtol * svd.sigma_max();
    if mode == SolveMode::Exact {
        if op.nrows() != op.ncols() {
            return Err(BifError::DimensionMismatch(format!(
                "exact solve requires a square operator, got {}x{}",
                op.nrows(),
                op.ncols()
            )));
        }
        if svd.sigma_min() <= thresh {
            return Err(BifError::SingularOperator {
                sigma_min: svd.sigma_min().to_subset().unwrap_or(f64::NAN),
            });
        }
    }
    // x = V * Sigma^+ * U^T * rhs with truncation at the rank threshold
    let k = svd.singular_values.len();
    let mut x = DVector::<T>::zeros(op.ncols());
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > thresh {
            let coeff = svd.left.column(i).dot(rhs) / s;
            x.axpy(coeff, &svd.right.column(i).into_owned(), T::one());
        }
    }
    Ok(x)
}

/// Operator 2-norm (largest singular value).
pub fn op_norm<T: Scalar>(op: &DMatrix<T>) -> Result<T> {
    check_finite_mat(op)?;
    let sv = op.clone().singular_values();
    Ok(sv.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a }))
}

/// `1 / sigma_min`, the 2-norm of the inverse of a square operator.
pub fn inverse_norm<T: Scalar>(op: &DMatrix<T>) -> Result<T> {
    if op.nrows() != op.ncols() {
        return Err(BifError::DimensionMismatch(format!(
            "inverse_norm requires a square operator, got {}x{}",
            op.nrows(),
            op.ncols()
        )));
    }
    let svd = svd_analysis(op)?;
    let thresh = cvt::<T>(DEFAULT_RTOL) * svd.sigma_max();
    let smin = svd.sigma_min();
    if smin <= thresh || smin <= T::zero() {
        return Err(BifError::SingularOperator {
            sigma_min: smin.to_subset().unwrap_or(f64::NAN),
        });
    }
    Ok(T::one() / smin)
}

/// Orthonormal basis of the numerical kernel: right singular vectors whose
/// singular value is at or below `rtol * sigma_max`.
pub fn kernel_basis<T: Scalar>(op: &DMatrix<T>, rtol: T) -> Result<Vec<DVector<T>>> {
    let svd = svd_analysis(op)?;
    Ok(svd.kernel_cols(rtol * svd.sigma_max()))
}

/// Orthonormal basis of the numerical cokernel (orthogonal complement of the
/// range), from left singular vectors.
pub fn cokernel_basis<T: Scalar>(op: &DMatrix<T>, rtol: T) -> Result<Vec<DVector<T>>> {
    let svd = svd_analysis(op)?;
    Ok(svd.cokernel_cols(rtol * svd.sigma_max()))
}
