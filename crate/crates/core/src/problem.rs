//! Problem definitions: the nonlinear map `F(lambda, u)` together with its
//! first and second derivatives, supplied analytically or approximated by
//! central finite differences.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{BifError, Result};
use crate::linalg::{check_finite_mat, check_finite_vec};
use crate::scalar::{cvt, Scalar};

/// A point `(lambda, u)` in parameter-times-state space.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLU<T: Scalar> {
    pub lambda: DVector<T>,
    pub u: DVector<T>,
}

impl<T: Scalar> PointLU<T> {
    pub fn new(lambda: DVector<T>, u: DVector<T>) -> Self {
        Self { lambda, u }
    }

    /// Stack `(lambda, u)` into one vector, parameters first.
    pub fn flatten(&self) -> DVector<T> {
        let mut out = DVector::zeros(self.lambda.len() + self.u.len());
        out.rows_mut(0, self.lambda.len()).copy_from(&self.lambda);
        out.rows_mut(self.lambda.len(), self.u.len()).copy_from(&self.u);
        out
    }

    /// Inverse of [`flatten`](Self::flatten) given the parameter count.
    pub fn unflatten(v: &DVector<T>, m: usize) -> Self {
        Self {
            lambda: v.rows(0, m).into_owned(),
            u: v.rows(m, v.len() - m).into_owned(),
        }
    }

    pub fn norm(&self) -> T {
        self.flatten().norm()
    }

    pub fn norm_inf(&self) -> T {
        let a = self.lambda.amax();
        let b = self.u.amax();
        if self.lambda.is_empty() {
            return b;
        }
        if self.u.is_empty() {
            return a;
        }
        if a > b {
            a
        } else {
            b
        }
    }
}

type EvalFn<T> = dyn Fn(&PointLU<T>) -> Result<DVector<T>> + Send + Sync;
type JacFn<T> = dyn Fn(&PointLU<T>) -> Result<DMatrix<T>> + Send + Sync;

/// A parameterized nonlinear problem `F: R^m x R^N -> R^N`.
///
/// Only the evaluator is mandatory: missing Jacobians fall back to central
/// finite differences of `F`, and the missing second derivative falls back to
/// central differences of the (possibly itself differenced) Jacobian.
#[derive(Clone)]
pub struct ProblemDef<T: Scalar> {
    /// Human-readable identifier used in reports.
    pub name: String,
    /// Parameter count `m`.
    pub m: usize,
    /// State dimension `N` (equations and unknowns).
    pub n_state: usize,
    pub eval: Arc<EvalFn<T>>,
    /// Full Jacobian `DF(lambda, u)`, an `N x (m + N)` matrix.
    pub jac: Option<Arc<JacFn<T>>>,
    /// Partial Jacobian `D_u F(lambda, u)`, an `N x N` matrix.
    pub jac_u: Option<Arc<JacFn<T>>>,
}

impl<T: Scalar> std::fmt::Debug for ProblemDef<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemDef")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("n_state", &self.n_state)
            .field("analytic_jac", &self.jac.is_some())
            .field("analytic_jac_u", &self.jac_u.is_some())
            .finish()
    }
}

/// Finite-difference step for first derivatives: `eps^(1/3) * (1 + |pt|_inf)`.
fn fd_step_first<T: Scalar>(pt: &PointLU<T>) -> T {
    let eps = cvt::<T>(f64::EPSILON);
    eps.powf(T::one() / cvt::<T>(3.0)) * (T::one() + pt.norm_inf())
}

/// Finite-difference step for second derivatives: `eps^(1/4) * (1 + |pt|_inf)`.
fn fd_step_second<T: Scalar>(pt: &PointLU<T>) -> T {
    let eps = cvt::<T>(f64::EPSILON);
    eps.powf(cvt::<T>(0.25)) * (T::one() + pt.norm_inf())
}

impl<T: Scalar> ProblemDef<T> {
    pub fn new<F>(name: &str, m: usize, n_state: usize, eval: F) -> Self
    where
        F: Fn(&PointLU<T>) -> Result<DVector<T>> + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            m,
            n_state,
            eval: Arc::new(eval),
            jac: None,
            jac_u: None,
        }
    }

    pub fn with_jac<F>(mut self, jac: F) -> Self
    where
        F: Fn(&PointLU<T>) -> Result<DMatrix<T>> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn with_jac_u<F>(mut self, jac_u: F) -> Self
    where
        F: Fn(&PointLU<T>) -> Result<DMatrix<T>> + Send + Sync + 'static,
    {
        self.jac_u = Some(Arc::new(jac_u));
        self
    }

    fn check_point(&self, pt: &PointLU<T>) -> Result<()> {
        if pt.lambda.len() != self.m || pt.u.len() != self.n_state {
            return Err(BifError::DimensionMismatch(format!(
                "point has ({}, {}) entries, problem '{}' expects ({}, {})",
                pt.lambda.len(),
                pt.u.len(),
                self.name,
                self.m,
                self.n_state
            )));
        }
        check_finite_vec(&pt.lambda)?;
        check_finite_vec(&pt.u)
    }

    /// Evaluate `F(lambda, u)`.
    pub fn eval_f(&self, pt: &PointLU<T>) -> Result<DVector<T>> {
        self.check_point(pt)?;
        let out = (self.eval)(pt)?;
        if out.len() != self.n_state {
            return Err(BifError::DimensionMismatch(format!(
                "evaluator of '{}' returned {} entries, expected {}",
                self.name,
                out.len(),
                self.n_state
            )));
        }
        check_finite_vec(&out)?;
        Ok(out)
    }

    /// Full Jacobian `DF(lambda, u)` in `R^(N x (m + N))`, parameter columns
    /// first.
    pub fn jac_df(&self, pt: &PointLU<T>) -> Result<DMatrix<T>> {
        self.check_point(pt)?;
        if let Some(jac) = &self.jac {
            let out = jac(pt)?;
            if out.shape() != (self.n_state, self.m + self.n_state) {
                return Err(BifError::DimensionMismatch(format!(
                    "Jacobian of '{}' has shape {:?}, expected ({}, {})",
                    self.name,
                    out.shape(),
                    self.n_state,
                    self.m + self.n_state
                )));
            }
            check_finite_mat(&out)?;
            return Ok(out);
        }
        self.fd_jac_full(pt)
    }

    /// Partial Jacobian `D_u F(lambda, u)` in `R^(N x N)`.
    pub fn jac_du_f(&self, pt: &PointLU<T>) -> Result<DMatrix<T>> {
        self.check_point(pt)?;
        if let Some(jac_u) = &self.jac_u {
            let out = jac_u(pt)?;
            if out.shape() != (self.n_state, self.n_state) {
                return Err(BifError::DimensionMismatch(format!(
                    "partial Jacobian of '{}' has shape {:?}, expected ({0}, {0}) with N = {}",
                    self.name,
                    out.shape(),
                    self.n_state
                )));
            }
            check_finite_mat(&out)?;
            return Ok(out);
        }
        // extract the u-columns of the full Jacobian
        let full = self.jac_df(pt)?;
        Ok(full.columns(self.m, self.n_state).into_owned())
    }

    fn perturb(&self, pt: &PointLU<T>, dir: &DVector<T>, h: T) -> PointLU<T> {
        let mut flat = pt.flatten();
        flat.axpy(h, dir, T::one());
        PointLU::unflatten(&flat, self.m)
    }

    fn fd_jac_full(&self, pt: &PointLU<T>) -> Result<DMatrix<T>> {
        let dim = self.m + self.n_state;
        let h = fd_step_first(pt);
        let two_h = h + h;
        let mut out = DMatrix::<T>::zeros(self.n_state, dim);
        for j in 0..dim {
            let mut e = DVector::<T>::zeros(dim);
            e[j] = T::one();
            let fp = self.eval_f(&self.perturb(pt, &e, h))?;
            let fm = self.eval_f(&self.perturb(pt, &e, -h))?;
            out.column_mut(j).copy_from(&((fp - fm) / two_h));
        }
        Ok(out)
    }

    /// Directional second derivative `D^2 F(lambda, u)(d1, d2)` by a central
    /// difference of `DF` along `d2`, applied to `d1`.
    ///
    /// Both directions live in `R^(m + N)` (parameter entries first).
    pub fn second_directional(
        &self,
        pt: &PointLU<T>,
        d1: &DVector<T>,
        d2: &DVector<T>,
    ) -> Result<DVector<T>> {
        self.check_point(pt)?;
        let dim = self.m + self.n_state;
        if d1.len() != dim || d2.len() != dim {
            return Err(BifError::DimensionMismatch(format!(
                "directions have {} and {} entries, expected {}",
                d1.len(),
                d2.len(),
                dim
            )));
        }
        let d2n = d2.norm();
        if d2n == T::zero() {
            return Ok(DVector::zeros(self.n_state));
        }
        let h = fd_step_second(pt) / d2n;
        let jp = self.jac_df(&self.perturb(pt, d2, h))?;
        let jm = self.jac_df(&self.perturb(pt, d2, -h))?;
        Ok((jp - jm) * d1 / (h + h))
    }

    /// Compare an analytic Jacobian against the finite-difference one.
    /// Returns the max absolute entry-wise discrepancy.
    pub fn fd_check(&self, pt: &PointLU<T>) -> Result<T> {
        let analytic = self.jac_df(pt)?;
        let fd = self.fd_jac_full(pt)?;
        Ok((analytic - fd).amax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    /// F(lambda, u) = lambda*u - u^3, m = 1, N = 1.
    fn cubic() -> ProblemDef<f64> {
        ProblemDef::new("cubic", 1, 1, |p: &PointLU<f64>| {
            let (l, u) = (p.lambda[0], p.u[0]);
            Ok(dvector![l * u - u * u * u])
        })
        .with_jac(|p: &PointLU<f64>| {
            let (l, u) = (p.lambda[0], p.u[0]);
            Ok(dmatrix![u, l - 3.0 * u * u])
        })
    }

    #[test]
    fn eval_and_jac() {
        let p = cubic();
        let pt = PointLU::new(dvector![2.0], dvector![1.0]);
        assert_relative_eq!(p.eval_f(&pt).unwrap()[0], 1.0);
        let j = p.jac_df(&pt).unwrap();
        assert_relative_eq!(j[(0, 0)], 1.0);
        assert_relative_eq!(j[(0, 1)], -1.0);
        // D_u F column extraction
        assert_relative_eq!(p.jac_du_f(&pt).unwrap()[(0, 0)], -1.0);
    }

    #[test]
    fn fd_jacobian_matches_analytic() {
        let p = cubic();
        for (l, u) in [(0.3, -0.7), (1.5, 0.2), (-2.0, 1.1)] {
            let pt = PointLU::new(dvector![l], dvector![u]);
            assert!(p.fd_check(&pt).unwrap() < 1e-7);
        }
    }

    #[test]
    fn fd_only_problem() {
        // no analytic Jacobian at all
        let p = ProblemDef::new("fd_only", 1, 2, |pt: &PointLU<f64>| {
            let l = pt.lambda[0];
            Ok(dvector![l * pt.u[0] + pt.u[1] * pt.u[1], pt.u[0] - l])
        });
        let pt = PointLU::new(dvector![2.0], dvector![1.0, 3.0]);
        let j = p.jac_df(&pt).unwrap();
        let expect = dmatrix![1.0, 2.0, 6.0; -1.0, 1.0, 0.0];
        assert!((j - expect).amax() < 1e-7);
    }

    #[test]
    fn second_directional_cubic() {
        // D^2 F for F = lambda*u - u^3 acting on ((a1,b1),(a2,b2)) is
        // a1*b2 + a2*b1 - 6*u*b1*b2
        let p = cubic();
        let pt = PointLU::new(dvector![0.5], dvector![2.0]);
        let d1 = dvector![1.0, 3.0];
        let d2 = dvector![-2.0, 0.5];
        let got = p.second_directional(&pt, &d1, &d2).unwrap();
        let expect = 1.0 * 0.5 + (-2.0) * 3.0 - 6.0 * 2.0 * 3.0 * 0.5;
        assert!((got[0] - expect).abs() < 1e-6);
    }

    #[test]
    fn second_directional_symmetric() {
        let p = cubic();
        let pt = PointLU::new(dvector![0.5], dvector![2.0]);
        let d1 = dvector![1.0, 3.0];
        let d2 = dvector![-2.0, 0.5];
        let a = p.second_directional(&pt, &d1, &d2).unwrap();
        let b = p.second_directional(&pt, &d2, &d1).unwrap();
        assert!((a - b).amax() < 1e-6);
    }

    #[test]
    fn dimension_checks() {
        let p = cubic();
        let bad = PointLU::new(dvector![1.0, 2.0], dvector![1.0]);
        assert!(matches!(p.eval_f(&bad), Err(BifError::DimensionMismatch(_))));
        let nan = PointLU::new(dvector![f64::NAN], dvector![1.0]);
        assert!(matches!(p.eval_f(&nan), Err(BifError::NonFinite)));
    }

    #[test]
    fn flatten_roundtrip() {
        let pt = PointLU::new(dvector![1.0, -2.0], dvector![3.0, 4.0, 5.0]);
        let back = PointLU::<f64>::unflatten(&pt.flatten(), 2);
        assert_eq!(back, pt);
    }
}
