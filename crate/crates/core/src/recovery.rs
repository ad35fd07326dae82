//! Shift recovery: given a perturbed or discretized problem and an anchor
//! near a suspected bifurcation, find the shift `rho` and the point
//! `(lambda0, u0)` such that `F - rho = 0` has a bifurcation point of the
//! prescribed type `(n, q)`.
//!
//! The solver is a damped Gauss–Newton iteration on the singularity residual
//! (the slack components `g_i`, `e_k` of the bordered block solves), which
//! vanishes exactly at a type-`(n,q)` singular point of the constant-shifted
//! family — shifting by a constant leaves `DF` and `D_u F` unchanged. The
//! shift is then read off as `rho = F(lambda*, u*)` and the bordering target
//! as `theta0 = B(0, lambda*, u*)`.

use nalgebra::{DMatrix, DVector};

use crate::classify::{
    build_extended_solution, kernel_from_extended, verify_extended, VerifyReport, VerifyTols,
};
use crate::error::{BifError, Result};
use crate::extended::{
    choose_frames, choose_frames_with_type, phi_g_matrix, phi_h_matrix, ExtState, Frames,
};
use crate::linalg::{solve, svd_analysis, SolveMode, DEFAULT_RTOL};
use crate::problem::{PointLU, ProblemDef};
use crate::scalar::{cvt, to_f64, Scalar};

/// Options for [`recover`] and [`recover_functional`].
#[derive(Debug, Clone)]
pub struct RecoveryOptions {
    pub max_iter: usize,
    pub step_tol: f64,
    pub residual_tol: f64,
    /// Backtracking line search (halving, at most 20 times).
    pub line_search: bool,
    /// The theorem's auxiliary constant, in `(0,1)` and not `1/2`; recorded
    /// into certificates built from the recovery.
    pub alpha: f64,
    /// Demanded bifurcation type.
    pub type_n: usize,
    pub type_q: usize,
    /// Certified ball radius `a*`; when given, the result reports whether
    /// the solved extended state stayed within it.
    pub a_star: Option<f64>,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            step_tol: 1e-12,
            residual_tol: 1e-10,
            line_search: true,
            alpha: 1e-3,
            type_n: 1,
            type_q: 1,
            a_star: None,
        }
    }
}

impl RecoveryOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.alpha != 0.5) {
            return Err(BifError::BadParams(format!(
                "alpha must lie in (0,1) and differ from 1/2, got {}",
                self.alpha
            )));
        }
        if self.type_n < 1 {
            return Err(BifError::BadParams("demanded type needs n >= 1".into()));
        }
        Ok(())
    }
}

/// Output of a recovery run.
#[derive(Debug, Clone)]
pub struct RecoveryResult<T: Scalar> {
    /// The located singular point `(lambda0, u0)` of the shifted problem.
    pub point: PointLU<T>,
    /// Constant shift: `F - rho` vanishes at `point` and is singular there.
    pub rho: DVector<T>,
    /// `theta0 = B(0, lambda0, u0)` for the final frames.
    pub theta0_shifted: DVector<T>,
    /// Verified extended solution of the shifted problem.
    pub ext_state: ExtState<T>,
    /// Frames of the shifted problem at the recovered point.
    pub frames: Frames<T>,
    /// Basis of `Ker DF` at the point (vectors in parameter-state space).
    pub kernel_df: Vec<DVector<T>>,
    /// Basis of `Ker D_u F` at the point.
    pub kernel_duf: Vec<DVector<T>>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub verify: VerifyReport<T>,
    /// `|s0 - s_anchor| <= a*` when a certificate radius was supplied.
    pub within_ball: Option<bool>,
    /// Functional mode only: the kernel direction `(mu', w')` defining
    /// `rho(lambda,u) = DF(lambda,u)(mu', w')`.
    pub kernel_shift: Option<DVector<T>>,
}

/// The problem shifted by a constant: `(F - rho)(lambda,u)`. Derivatives are
/// unchanged.
pub fn shift_problem<T: Scalar>(p: &ProblemDef<T>, rho: &DVector<T>) -> ProblemDef<T> {
    let inner = p.clone();
    let rho = rho.clone();
    let mut out = ProblemDef::new(
        &format!("{}-shifted", p.name),
        p.m,
        p.n_state,
        move |pt: &PointLU<T>| Ok(inner.eval_f(pt)? - &rho),
    );
    out.jac = p.jac.clone();
    out.jac_u = p.jac_u.clone();
    out
}

/// Solve the bordered kernel blocks at a point: `Phi_G(x, y_i) = (d_i, 0)`
/// and `Phi_H(x, z_k) = (d_k, 0)` with `x = (0, lambda, u)`.
pub fn solve_kernel_blocks<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    pt: &PointLU<T>,
) -> Result<(Vec<DVector<T>>, Vec<DVector<T>>)> {
    let phig = phi_g_matrix(p, frames, pt)?;
    let phih = phi_h_matrix(p, frames, pt)?;
    let mut ys = Vec::with_capacity(frames.q + frames.m);
    for i in 0..frames.q + frames.m {
        let mut rhs = DVector::zeros(frames.xdim());
        rhs.rows_mut(0, frames.q + frames.m)
            .copy_from(&frames.basis_qm.column(i).into_owned());
        ys.push(solve(&phig, &rhs, SolveMode::Exact)?);
    }
    let mut zs = Vec::with_capacity(frames.n);
    for k in 0..frames.n {
        let mut rhs = DVector::zeros(frames.zdim());
        rhs.rows_mut(0, frames.n).copy_from(&frames.basis_n.column(k).into_owned());
        zs.push(solve(&phih, &rhs, SolveMode::Exact)?);
    }
    Ok((ys, zs))
}

/// The singularity residual: all `g_i` components followed by all `e_k`
/// components of the block solves. It is zero exactly at a type-`(n,q)`
/// singular point of the constant-shifted family, and independent of the
/// slack `f`.
pub fn singular_residual<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    pt: &PointLU<T>,
) -> Result<DVector<T>> {
    let (ys, zs) = solve_kernel_blocks(p, frames, pt)?;
    let len = (frames.q + frames.m) * frames.q + frames.n * frames.n;
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for y in &ys {
        out.rows_mut(at, frames.q).copy_from(&y.rows(0, frames.q));
        at += frames.q;
    }
    for z in &zs {
        out.rows_mut(at, frames.n).copy_from(&z.rows(0, frames.n));
        at += frames.n;
    }
    Ok(out)
}

fn phi_condition<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, pt: &PointLU<T>) -> Result<T> {
    let mut worst = T::zero();
    for mat in [phi_g_matrix(p, frames, pt)?, phi_h_matrix(p, frames, pt)?] {
        let svd = svd_analysis(&mat)?;
        if svd.sigma_min() <= T::zero() {
            return Ok(T::max_value().unwrap_or_else(T::one));
        }
        let c = svd.sigma_max() / svd.sigma_min();
        if c > worst {
            worst = c;
        }
    }
    Ok(worst)
}

/// Damped Gauss–Newton on the singularity residual over `(lambda, u)`.
/// Returns the shifted-problem certificate data; `rho := F` at the located
/// point so `F - rho` vanishes there.
pub fn recover<T: Scalar>(
    p: &ProblemDef<T>,
    anchor: &PointLU<T>,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult<T>> {
    opts.validate()?;
    let mut frames = choose_frames_with_type(p, anchor, opts.type_n, opts.type_q)?;
    let mut pt = anchor.clone();
    let trust = cvt::<T>(10.0) * (T::one() + anchor.norm());
    let res_tol = cvt::<T>(opts.residual_tol);
    let step_tol = cvt::<T>(opts.step_tol);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    let mut r = singular_residual(p, frames_ref(&frames), &pt)?;
    history.push(to_f64(r.norm()));
    while iter < opts.max_iter {
        if r.norm() <= res_tol {
            converged = true;
            break;
        }
        // finite-difference Jacobian of the residual w.r.t. (lambda, u)
        let dim = p.m + p.n_state;
        let h = cvt::<T>(f64::EPSILON.cbrt()) * (T::one() + pt.norm_inf());
        let mut jac = DMatrix::<T>::zeros(r.len(), dim);
        let flat = pt.flatten();
        for j in 0..dim {
            let mut up = flat.clone();
            up[j] += h;
            let mut dn = flat.clone();
            dn[j] -= h;
            let ru = singular_residual(p, &frames, &PointLU::unflatten(&up, p.m))?;
            let rd = singular_residual(p, &frames, &PointLU::unflatten(&dn, p.m))?;
            jac.column_mut(j).copy_from(&((ru - rd) / (h + h)));
        }
        let step = solve(&jac, &r, SolveMode::LeastSquares)?;
        if step.norm() > trust {
            return Err(BifError::DivergedOutsideTrustRegion {
                step_norm: to_f64(step.norm()),
            });
        }
        if step.norm() < step_tol {
            break;
        }
        // backtracking on the residual norm
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..20 {
            let cand_flat = &flat - &step * t;
            let cand = PointLU::unflatten(&cand_flat, p.m);
            match singular_residual(p, &frames, &cand) {
                Ok(rc) if rc.norm() < r.norm() => {
                    pt = cand;
                    r = rc;
                    accepted = true;
                    break;
                }
                _ => t *= cvt::<T>(0.5),
            }
            if !opts.line_search {
                break;
            }
        }
        if !accepted {
            break;
        }
        history.push(to_f64(r.norm()));
        iter += 1;
        // refresh stale frames
        if phi_condition(p, &frames, &pt)? > cvt::<T>(1e8) {
            frames = choose_frames_with_type(p, &pt, opts.type_n, opts.type_q)?;
            r = singular_residual(p, &frames, &pt)?;
        }
    }
    if !converged && r.norm() > res_tol {
        return Err(BifError::NoConvergence {
            iterations: iter,
            residual: to_f64(r.norm()),
        });
    }
    let mut result = finalize(p, anchor, opts, pt, None)?;
    result.iterations = iter;
    result.residual_history = history;
    Ok(result)
}

fn frames_ref<'a, T: Scalar>(frames: &'a Frames<T>) -> &'a Frames<T> {
    frames
}

/// Build the verified result at a located singular point.
fn finalize<T: Scalar>(
    p: &ProblemDef<T>,
    anchor: &PointLU<T>,
    opts: &RecoveryOptions,
    pt: PointLU<T>,
    kernel_shift: Option<DVector<T>>,
) -> Result<RecoveryResult<T>> {
    let rho = p.eval_f(&pt)?;
    let shifted = shift_problem(p, &rho);
    // re-choose frames on the shifted problem at the located point; fall back
    // to the demanded type when thresholding is borderline
    let frames = match choose_frames(&shifted, &pt, cvt::<T>(DEFAULT_RTOL)) {
        Ok(f) if f.n == opts.type_n && f.q == opts.type_q => f,
        _ => choose_frames_with_type(&shifted, &pt, opts.type_n, opts.type_q)?,
    };
    let ext_state = build_extended_solution(&shifted, &frames, &pt)?;
    let verify = verify_extended(&shifted, &frames, &ext_state, VerifyTols::default())?;
    // distance of the solved extended state from the anchor's, against a
    // certified radius when one was supplied
    let within_ball = opts.a_star.and_then(|a| {
        build_extended_solution(&shifted, &frames, anchor)
            .ok()
            .map(|sa| to_f64((ext_state.flatten() - sa.flatten()).norm()) <= a)
    });
    let (kernel_df, kernel_duf) = kernel_from_extended(&frames, &ext_state);
    let theta0_shifted = frames.theta0.clone();
    Ok(RecoveryResult {
        point: pt,
        rho,
        theta0_shifted,
        frames,
        kernel_df,
        kernel_duf,
        iterations: 0,
        residual_history: Vec::new(),
        converged: verify.passes,
        verify,
        ext_state,
        within_ball,
        kernel_shift,
    })
}

/// Recovery in functional form: find `(lambda, u, mu', w')` such that the
/// modified map `Ft = F - DF(.)(mu', w')` vanishes at `(lambda, u)` and is
/// singular of the demanded type there. The shift is then the function
/// `rho(lambda, u) = DF(lambda, u)(mu', w')`.
pub fn recover_functional<T: Scalar>(
    p: &ProblemDef<T>,
    anchor: &PointLU<T>,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult<T>> {
    opts.validate()?;
    let dim_pt = p.m + p.n_state;
    let dim = 2 * dim_pt; // (lambda, u) and (mu', w')
    let mut v = DVector::<T>::zeros(dim);
    v.rows_mut(0, dim_pt).copy_from(&anchor.flatten());
    let res_tol = cvt::<T>(opts.residual_tol);
    let trust = cvt::<T>(10.0) * (T::one() + anchor.norm());

    // residual: [F - DF (mu',w') ; singularity residual of the modified map]
    let modified = |shift_dir: &DVector<T>| -> ProblemDef<T> {
        let inner = p.clone();
        let dir = shift_dir.clone();
        let mut out = ProblemDef::new("modified", p.m, p.n_state, {
            let inner = inner.clone();
            let dir = dir.clone();
            move |pt: &PointLU<T>| Ok(inner.eval_f(pt)? - inner.jac_df(pt)? * &dir)
        });
        // D(F - DF(.)(dir)) = DF - D^2F(., dir): differentiate the (exact
        // when available) Jacobian once, keeping the accuracy of the block
        // solves at the FD-truncation, not FD-of-FD, level
        out = out.with_jac(move |pt: &PointLU<T>| {
            let base = inner.jac_df(pt)?;
            let dim = inner.m + inner.n_state;
            let h = cvt::<T>(f64::EPSILON.cbrt()) * (T::one() + pt.norm_inf());
            let flat = pt.flatten();
            let mut corr = DMatrix::<T>::zeros(inner.n_state, dim);
            for j in 0..dim {
                let mut up = flat.clone();
                up[j] += h;
                let mut dn = flat.clone();
                dn[j] -= h;
                let ju = inner.jac_df(&PointLU::unflatten(&up, inner.m))?;
                let jd = inner.jac_df(&PointLU::unflatten(&dn, inner.m))?;
                corr.column_mut(j).copy_from(&((ju - jd) * &dir / (h + h)));
            }
            Ok(base - corr)
        });
        out
    };
    // frames are frozen per outer iteration so the residual stays smooth
    // across finite-difference and line-search evaluations
    let eval_res = |v: &DVector<T>, frames: &Frames<T>| -> Result<DVector<T>> {
        let pt = PointLU::unflatten(&v.rows(0, dim_pt).into_owned(), p.m);
        let dir = v.rows(dim_pt, dim_pt).into_owned();
        let ft = modified(&dir);
        let sing = singular_residual(&ft, frames, &pt)?;
        let f0 = ft.eval_f(&pt)?;
        let mut out = DVector::zeros(f0.len() + sing.len());
        out.rows_mut(0, f0.len()).copy_from(&f0);
        out.rows_mut(f0.len(), sing.len()).copy_from(&sing);
        Ok(out)
    };
    let frames_at = |v: &DVector<T>| -> Result<Frames<T>> {
        let pt = PointLU::unflatten(&v.rows(0, dim_pt).into_owned(), p.m);
        let dir = v.rows(dim_pt, dim_pt).into_owned();
        choose_frames_with_type(&modified(&dir), &pt, opts.type_n, opts.type_q)
    };

    let fd_jac = |v: &DVector<T>, frames: &Frames<T>, rows: usize| -> Result<DMatrix<T>> {
        let h = cvt::<T>(f64::EPSILON.cbrt()) * (T::one() + v.amax());
        let mut jac = DMatrix::<T>::zeros(rows, dim);
        for j in 0..dim {
            let mut up = v.clone();
            up[j] += h;
            let mut dn = v.clone();
            dn[j] -= h;
            jac.column_mut(j)
                .copy_from(&((eval_res(&up, frames)? - eval_res(&dn, frames)?) / (h + h)));
        }
        Ok(jac)
    };
    // damped minimum-norm Gauss-Newton to the solution manifold
    let gn_converge = |v0: DVector<T>,
                       history: &mut Vec<f64>,
                       iterations: &mut usize|
     -> Result<(DVector<T>, DVector<T>)> {
        let mut v = v0;
        let mut frames = frames_at(&v)?;
        let mut r = eval_res(&v, &frames)?;
        history.push(to_f64(r.norm()));
        for _ in 0..opts.max_iter {
            if r.norm() <= res_tol {
                return Ok((v, r));
            }
            let jac = fd_jac(&v, &frames, r.len())?;
            let step = solve(&jac, &r, SolveMode::LeastSquares)?;
            if step.norm() > trust {
                return Err(BifError::DivergedOutsideTrustRegion {
                    step_norm: to_f64(step.norm()),
                });
            }
            if step.norm() < cvt::<T>(opts.step_tol) {
                break;
            }
            let mut t = T::one();
            let mut accepted = false;
            for _ in 0..20 {
                let cand = &v - &step * t;
                match eval_res(&cand, &frames) {
                    Ok(rc) if rc.norm() < r.norm() => {
                        v = cand;
                        r = rc;
                        accepted = true;
                        break;
                    }
                    _ => t *= cvt::<T>(0.5),
                }
                if !opts.line_search {
                    break;
                }
            }
            if !accepted {
                break;
            }
            *iterations += 1;
            history.push(to_f64(r.norm()));
            frames = frames_at(&v)?;
            r = eval_res(&v, &frames)?;
        }
        if r.norm() <= res_tol {
            Ok((v, r))
        } else {
            Err(BifError::NoConvergence {
                iterations: *iterations,
                residual: to_f64(r.norm()),
            })
        }
    };

    let mut iterations = 0;
    let mut history = Vec::new();
    let (mut vc, mut r) = gn_converge(v, &mut history, &mut iterations)?;
    // gauge fixing: the solution manifold is underdetermined in (mu', w');
    // walk its null space to minimize the kernel-shift norm, re-converging
    // after each tangent step
    for _ in 0..15 {
        let frames = frames_at(&vc)?;
        let jac = fd_jac(&vc, &frames, r.len())?;
        let svd = svd_analysis(&jac)?;
        let null_vecs = svd.kernel_cols(cvt::<T>(1e-6) * svd.sigma_max());
        if null_vecs.is_empty() {
            break;
        }
        let null = DMatrix::<T>::from_columns(&null_vecs);
        let shift = vc.rows(dim_pt, dim_pt).into_owned();
        let shift_block = null.rows(dim_pt, dim_pt).into_owned();
        let coeff = solve(&shift_block, &shift, SolveMode::LeastSquares)?;
        let delta = &null * &coeff;
        if delta.norm() <= cvt::<T>(1e-11) * (T::one() + vc.norm()) {
            break;
        }
        let mut t = T::one();
        let mut improved = false;
        for _ in 0..8 {
            match gn_converge(&vc - &delta * t, &mut history, &mut iterations) {
                Ok((vn, rn)) => {
                    vc = vn;
                    r = rn;
                    improved = true;
                    break;
                }
                Err(_) => t *= cvt::<T>(0.5),
            }
        }
        if !improved {
            break;
        }
    }
    let converged = r.norm() <= res_tol;
    let v = vc;
    let pt = PointLU::unflatten(&v.rows(0, dim_pt).into_owned(), p.m);
    let dir = v.rows(dim_pt, dim_pt).into_owned();
    // certify on the modified map; its value at the point is the constant
    // part of the functional shift
    let ft = modified(&dir);
    let mut result = finalize(&ft, anchor, opts, pt.clone(), Some(dir.clone()))?;
    result.rho = p.jac_df(&pt)? * &dir;
    result.iterations = iterations;
    result.residual_history = history;
    result.converged = result.converged && converged;
    Ok(result)
}

/// One traced point on a solution branch.
#[derive(Debug, Clone)]
pub struct TracePoint<T: Scalar> {
    pub branch: usize,
    pub step: usize,
    /// Signed arclength from the branch origin.
    pub s: T,
    pub lambda: T,
    pub u_norm: T,
    pub u: DVector<T>,
}

/// Pseudo-arclength continuation of `F = 0` (single parameter) from a point,
/// both directions along an initial tangent; Newton corrector orthogonal to
/// the tangent.
pub fn trace_from<T: Scalar>(
    p: &ProblemDef<T>,
    start: &PointLU<T>,
    tangent0: &DVector<T>,
    steps: usize,
    ds: T,
    branch: usize,
) -> Result<Vec<TracePoint<T>>> {
    if p.m != 1 {
        return Err(BifError::BadParams("branch tracing supports one parameter only".into()));
    }
    let dim = 1 + p.n_state;
    // each direction emits exactly `steps` records (the origin plus steps-1
    // continuation points) unless the corrector stalls
    let mut out = Vec::with_capacity(2 * steps);
    for dir_sign in [T::one(), -T::one()] {
        out.push(TracePoint {
            branch,
            step: 0,
            s: T::zero(),
            lambda: start.lambda[0],
            u_norm: start.u.norm(),
            u: start.u.clone(),
        });
        let mut x = start.flatten();
        let mut tangent = tangent0 * (dir_sign / tangent0.norm());
        let mut stalls = 0usize;
        for k in 1..steps {
            let pred = &x + &tangent * ds;
            // corrector: F = 0 plus the arclength constraint
            let mut y = pred.clone();
            let mut ok = false;
            for _ in 0..12 {
                let pt = PointLU::unflatten(&y, 1);
                let f = p.eval_f(&pt)?;
                let cons = tangent.dot(&(&y - &pred));
                let mut res = DVector::zeros(dim);
                res.rows_mut(0, p.n_state).copy_from(&f);
                res[dim - 1] = cons;
                if res.norm() <= cvt::<T>(1e-11) * (T::one() + y.norm()) {
                    ok = true;
                    break;
                }
                let df = p.jac_df(&pt)?;
                let mut jac = DMatrix::zeros(dim, dim);
                jac.rows_mut(0, p.n_state).copy_from(&df);
                jac.row_mut(dim - 1).copy_from(&tangent.transpose());
                let step = solve(&jac, &res, SolveMode::LeastSquares)?;
                y -= step;
            }
            if !ok {
                stalls += 1;
                if stalls >= 3 {
                    return Err(BifError::ContinuationStall { failures: stalls });
                }
                continue;
            }
            stalls = 0;
            let new_tangent = (&y - &x) / (&y - &x).norm();
            tangent = new_tangent;
            x = y;
            let pt = PointLU::unflatten(&x, 1);
            out.push(TracePoint {
                branch,
                step: k,
                s: dir_sign * ds * cvt::<T>(k as f64),
                lambda: pt.lambda[0],
                u_norm: pt.u.norm(),
                u: pt.u,
            });
        }
    }
    Ok(out)
}

/// Trace the branches of `F - rho = 0` through a verified bifurcation point:
/// one branch per kernel tangent direction of `DF` at the point.
pub fn trace_branches<T: Scalar>(
    p: &ProblemDef<T>,
    rho: &DVector<T>,
    point: &PointLU<T>,
    steps: usize,
    ds: T,
) -> Result<Vec<TracePoint<T>>> {
    let shifted = shift_problem(p, rho);
    let frames = choose_frames(&shifted, point, cvt::<T>(DEFAULT_RTOL))?;
    let s0 = build_extended_solution(&shifted, &frames, point)?;
    let verify = verify_extended(&shifted, &frames, &s0, VerifyTols::default())?;
    if !verify.passes {
        return Err(BifError::ConditionViolated(format!(
            "extended verification failed at the trace origin: residual {}, sigma_min {}",
            to_f64(verify.residual_s),
            to_f64(verify.sigma_min_ds)
        )));
    }
    let (kernel_df, _) = kernel_from_extended(&frames, &s0);
    let mut out = Vec::new();
    for (b, tangent) in kernel_df.iter().enumerate() {
        out.extend(trace_from(&shifted, point, tangent, steps, ds, b)?);
    }
    Ok(out)
}

/// Minimum pairwise distance (in `(lambda, u)` space) between two traced
/// point sets.
pub fn branch_min_gap<T: Scalar>(a: &[TracePoint<T>], b: &[TracePoint<T>]) -> T {
    let mut best = T::max_value().unwrap_or_else(T::one);
    for pa in a {
        for pb in b {
            let dl = pa.lambda - pb.lambda;
            let du = (&pa.u - &pb.u).norm();
            let d = (dl * dl + du * du).sqrt();
            if d < best {
                best = d;
            }
        }
    }
    best
}
