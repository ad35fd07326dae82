//! Approximate problems on subspaces via projection pairs, the associated
//! approximation constants (C, eta_1..eta_4), the isomorphism-transfer
//! certificate (q_G, q_H with the (1-q)^{-1} inverse-norm bounds), and the
//! h-study driver that tracks how the bifurcation data converge.

use nalgebra::{DMatrix, DVector};

use crate::classify::{build_extended_solution, classify};
use crate::error::{BifError, Result};
use crate::extended::{
    eval_s, h_matrix, jac_s, phi_g_matrix, phi_h_matrix, ExtState, Frames,
};
use crate::linalg::{inverse_norm, op_norm, svd_analysis, DEFAULT_RTOL};
use crate::problem::{PointLU, ProblemDef};
use crate::recovery::{recover, shift_problem, RecoveryOptions};
use crate::scalar::{cvt, to_f64, Scalar};
use crate::testbeds::tridiag_eigen_oracle;

/// How the coarse space is carved out of the fine one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    /// Keep the lowest sine modes: the embedding maps the coarse grid's
    /// eigenvector basis isometrically onto the first fine sine modes, so
    /// `P = E^T` and both operators have unit norm.
    Truncation,
    /// Sample nested grid nodes (requires `(fine+1) % (coarse+1) == 0`).
    Injection,
    /// Piecewise-linear interpolation embedding with its least-squares
    /// projection; works for arbitrary grid sizes.
    Interpolation,
}

/// A restriction / embedding pair between nodal spaces.
#[derive(Debug, Clone)]
pub struct ProjectionPair<T: Scalar> {
    /// State restriction `W -> W_h`.
    pub p_w: DMatrix<T>,
    /// Residual restriction `Z -> Z_h`.
    pub p_z: DMatrix<T>,
    /// Embedding `W_h -> W` with `P_W E_W = I`.
    pub e_w: DMatrix<T>,
    /// Approximation constant over the smooth-decay reference frame.
    pub c_est: T,
    /// Mesh-size label of the coarse space.
    pub h_label: T,
    pub fine: usize,
    pub coarse: usize,
}

/// Smooth-decay synthetic frame: fine-grid sine modes weighted `k^{-2}`.
/// The admissibility constant is measured against this class — a strict
/// `||I - E P|| < 1` is impossible for any rank-deficient projector, so the
/// constant quantifies how well the pair preserves smooth directions.
pub fn smooth_decay_frame<T: Scalar>(fine: usize) -> DMatrix<T> {
    let (_, modes) = tridiag_eigen_oracle(fine);
    let mut r = DMatrix::<T>::zeros(fine, fine);
    for (k, v) in modes.iter().enumerate() {
        let w = cvt::<T>(1.0 / ((k + 1) * (k + 1)) as f64);
        for i in 0..fine {
            r[(i, k)] = cvt::<T>(v[i]) * w;
        }
    }
    r
}

/// The reference-frame relative error of a candidate pair.
pub fn c_est_of<T: Scalar>(e_w: &DMatrix<T>, p_z: &DMatrix<T>, fine: usize) -> Result<T> {
    let r = smooth_decay_frame::<T>(fine);
    let residual = &r - e_w * (p_z * &r);
    op_norm(&residual)
}

/// Piecewise-linear interpolation of zero-boundary coarse nodal functions
/// onto the fine grid of `(0, pi)`.
fn interp_matrix<T: Scalar>(fine: usize, coarse: usize) -> DMatrix<T> {
    let hf = std::f64::consts::PI / (fine + 1) as f64;
    let hc = std::f64::consts::PI / (coarse + 1) as f64;
    let mut e = DMatrix::<T>::zeros(fine, coarse);
    for i in 0..fine {
        let x = (i + 1) as f64 * hf;
        for j in 0..coarse {
            let y = (j + 1) as f64 * hc;
            let hat = 1.0 - (x - y).abs() / hc;
            if hat > 0.0 {
                e[(i, j)] = cvt::<T>(hat);
            }
        }
    }
    e
}

/// Build a projection pair between nodal grids of sizes `fine >= coarse`.
pub fn build_projection<T: Scalar>(
    fine: usize,
    coarse: usize,
    kind: ProjectionKind,
) -> Result<ProjectionPair<T>> {
    if coarse > fine || coarse == 0 {
        return Err(BifError::BadParams(format!(
            "need 0 < coarse <= fine, got {coarse} > {fine}"
        )));
    }
    let (p, e) = match kind {
        ProjectionKind::Truncation => {
            let (_, fine_modes) = tridiag_eigen_oracle(fine);
            let (_, coarse_modes) = tridiag_eigen_oracle(coarse);
            let mut v = DMatrix::<T>::zeros(fine, coarse);
            for (k, m) in fine_modes.iter().take(coarse).enumerate() {
                for i in 0..fine {
                    v[(i, k)] = cvt::<T>(m[i]);
                }
            }
            let mut w = DMatrix::<T>::zeros(coarse, coarse);
            for (k, m) in coarse_modes.iter().enumerate() {
                for i in 0..coarse {
                    w[(i, k)] = cvt::<T>(m[i]);
                }
            }
            let em = v * w.transpose();
            (em.transpose(), em)
        }
        ProjectionKind::Injection => {
            if (fine + 1) % (coarse + 1) != 0 {
                return Err(BifError::BadParams(format!(
                    "injection needs nested grids: (fine+1) = {} not a multiple of (coarse+1) = {}",
                    fine + 1,
                    coarse + 1
                )));
            }
            let stride = (fine + 1) / (coarse + 1);
            let mut p = DMatrix::<T>::zeros(coarse, fine);
            for j in 0..coarse {
                p[(j, stride * (j + 1) - 1)] = T::one();
            }
            (p, interp_matrix(fine, coarse))
        }
        ProjectionKind::Interpolation => {
            let e = interp_matrix::<T>(fine, coarse);
            let gram = e.transpose() * &e;
            let lu = gram.lu();
            let p = lu
                .solve(&e.transpose())
                .ok_or_else(|| BifError::SingularOperator { sigma_min: 0.0 })?;
            (p, e)
        }
    };
    let c_est = c_est_of(&e, &p, fine)?;
    if c_est >= T::one() {
        return Err(BifError::InadmissibleProjection(format!(
            "C = {} >= 1 on the smooth reference frame",
            to_f64(c_est)
        )));
    }
    Ok(ProjectionPair {
        p_w: p.clone(),
        p_z: p,
        e_w: e,
        c_est,
        h_label: cvt::<T>(std::f64::consts::PI / (coarse + 1) as f64),
        fine,
        coarse,
    })
}

/// The Galerkin-style restriction `F_h(lambda, u_h) = P_Z F(lambda, E_W u_h)`
/// with chain-rule derivatives.
pub fn approx_problem<T: Scalar>(p_fine: &ProblemDef<T>, pair: &ProjectionPair<T>) -> ProblemDef<T> {
    let name = format!("{}-h{}", p_fine.name, pair.coarse);
    let coarse = pair.coarse;
    let m = p_fine.m;
    let inner = p_fine.clone();
    let e_w = pair.e_w.clone();
    let p_z = pair.p_z.clone();
    let mut out = ProblemDef::new(&name, m, coarse, {
        let (inner, e_w, p_z) = (inner.clone(), e_w.clone(), p_z.clone());
        move |pt: &PointLU<T>| {
            let fine_pt = PointLU::new(pt.lambda.clone(), &e_w * &pt.u);
            Ok(&p_z * inner.eval_f(&fine_pt)?)
        }
    });
    out = out.with_jac(move |pt: &PointLU<T>| {
        let fine_pt = PointLU::new(pt.lambda.clone(), &e_w * &pt.u);
        let df = inner.jac_df(&fine_pt)?;
        let mut jac = DMatrix::<T>::zeros(coarse, m + coarse);
        let lam_cols = &p_z * df.columns(0, m);
        jac.columns_mut(0, m).copy_from(&lam_cols);
        let u_cols = &p_z * df.columns(m, inner.n_state) * &e_w;
        jac.columns_mut(m, coarse).copy_from(&u_cols);
        Ok(jac)
    });
    out
}

/// How the coarse bordering `B_h` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BhMode {
    /// Kernel bases of the approximate operators, rotated to align with the
    /// projected exact bordering (better conditioned; the default).
    Rederive,
    /// The exact bordering composed with the embedding.
    Projected,
}

fn embed_x<T: Scalar>(frames: &Frames<T>, pair: &ProjectionPair<T>) -> DMatrix<T> {
    let head = frames.q + frames.m;
    let mut e = DMatrix::<T>::zeros(head + pair.fine, head + pair.coarse);
    for i in 0..head {
        e[(i, i)] = T::one();
    }
    e.view_mut((head, head), (pair.fine, pair.coarse)).copy_from(&pair.e_w);
    e
}

fn embed_z<T: Scalar>(frames: &Frames<T>, pair: &ProjectionPair<T>) -> DMatrix<T> {
    let head = frames.n;
    let mut e = DMatrix::<T>::zeros(head + pair.fine, head + pair.coarse);
    for i in 0..head {
        e[(i, i)] = T::one();
    }
    e.view_mut((head, head), (pair.fine, pair.coarse)).copy_from(&pair.e_w);
    e
}

/// Rotate an orthonormal row basis to best match a target with the same row
/// space dimensions (orthogonal Procrustes).
fn align_rows<T: Scalar>(basis: &DMatrix<T>, target: &DMatrix<T>) -> Result<DMatrix<T>> {
    let m = target * basis.transpose();
    let svd = svd_analysis(&m)?;
    let rot = &svd.left * svd.right.transpose();
    Ok(rot * basis)
}

/// Carry the exact frames over to the approximate problem: the annihilator
/// columns are projected (`a_ih = P_Z a_i`), the borderings are either
/// re-derived and aligned or projected outright.
pub fn project_frames<T: Scalar>(
    p_h: &ProblemDef<T>,
    frames: &Frames<T>,
    pair: &ProjectionPair<T>,
    anchor_h: &PointLU<T>,
    mode: BhMode,
) -> Result<Frames<T>> {
    let a_bars_h = &pair.p_z * &frames.a_bars;
    let b_bars_h = &pair.p_z * &frames.b_bars;
    let b_proj = &frames.b_op * embed_x(frames, pair);
    let bbar_proj = &frames.bbar_op * embed_z(frames, pair);
    let mut out = Frames {
        q: frames.q,
        n: frames.n,
        m: frames.m,
        n_state: pair.coarse,
        a_bars: a_bars_h,
        b_bars: b_bars_h,
        b_op: b_proj.clone(),
        bbar_op: bbar_proj.clone(),
        theta0: DVector::zeros(frames.q + frames.m),
        basis_qm: DMatrix::identity(frames.q + frames.m, frames.q + frames.m),
        basis_n: DMatrix::identity(frames.n, frames.n),
        rank_ambiguous: false,
    };
    if mode == BhMode::Rederive {
        // orthonormal kernel rows of the approximate bordered operators,
        // aligned with the projected exact borderings
        let dg = crate::extended::dg_matrix(p_h, &out, anchor_h)?;
        let svd = svd_analysis(&dg)?;
        let thresh = cvt::<T>(DEFAULT_RTOL)
            * if svd.sigma_max() > T::one() { svd.sigma_max() } else { T::one() };
        let kern = svd.kernel_cols(thresh);
        if kern.len() != frames.q + frames.m {
            return Err(BifError::DegenerateAnchor(format!(
                "approximate DG kernel has dimension {}, expected {}",
                kern.len(),
                frames.q + frames.m
            )));
        }
        let basis = DMatrix::from_columns(&kern).transpose();
        out.b_op = align_rows(&basis, &b_proj)?;
        let hm = h_matrix(p_h, &out, anchor_h)?;
        let svd_h = svd_analysis(&hm)?;
        let thresh_h = cvt::<T>(DEFAULT_RTOL)
            * if svd_h.sigma_max() > T::one() { svd_h.sigma_max() } else { T::one() };
        let kern_h = svd_h.kernel_cols(thresh_h);
        if kern_h.len() != frames.n {
            return Err(BifError::DegenerateAnchor(format!(
                "approximate H kernel has dimension {}, expected {}",
                kern_h.len(),
                frames.n
            )));
        }
        let basis_h = DMatrix::from_columns(&kern_h).transpose();
        out.bbar_op = align_rows(&basis_h, &bbar_proj)?;
    }
    out.theta0 = &out.b_op * out.anchor_x(anchor_h);
    // admissibility of the bordered operators at the anchor
    for (label, mat) in [
        ("Phi_G", phi_g_matrix(p_h, &out, anchor_h)?),
        ("Phi_H", phi_h_matrix(p_h, &out, anchor_h)?),
    ] {
        let sv = svd_analysis(&mat)?;
        if sv.sigma_min() <= cvt::<T>(DEFAULT_RTOL * DEFAULT_RTOL) * sv.sigma_max() {
            return Err(BifError::SingularOperator {
                sigma_min: to_f64(sv.sigma_min()),
            });
        }
        let _ = label;
    }
    Ok(out)
}

/// The tightest constants for the approximation hypotheses: operator
/// 2-norms of the bordering and derivative difference operators restricted
/// to the approximate space.
pub fn eta_estimates<T: Scalar>(
    p_fine: &ProblemDef<T>,
    p_h: &ProblemDef<T>,
    pair: &ProjectionPair<T>,
    frames: &Frames<T>,
    frames_h: &Frames<T>,
    exact_pt: &PointLU<T>,
    anchor_h: &PointLU<T>,
) -> Result<(T, T, T, T)> {
    let eta1 = op_norm(&(&frames.b_op * embed_x(frames, pair) - &frames_h.b_op))?;
    let eta3 = op_norm(&(&frames.bbar_op * embed_z(frames, pair) - &frames_h.bbar_op))?;
    // lambda columns pass through P_Z, u columns through P_Z . E_W
    let df = p_fine.jac_df(exact_pt)?;
    let m = p_fine.m;
    let mut projected = DMatrix::<T>::zeros(pair.coarse, m + pair.coarse);
    projected
        .columns_mut(0, m)
        .copy_from(&(&pair.p_z * df.columns(0, m)));
    projected
        .columns_mut(m, pair.coarse)
        .copy_from(&(&pair.p_z * df.columns(m, p_fine.n_state) * &pair.e_w));
    let eta2 = op_norm(&(projected - p_h.jac_df(anchor_h)?))?;
    let duf = p_fine.jac_du_f(exact_pt)?;
    let eta4 = op_norm(&(&pair.p_z * duf * &pair.e_w - p_h.jac_du_f(anchor_h)?))?;
    Ok((eta1, eta2, eta3, eta4))
}

/// Transfer-certificate quantities for one pair.
#[derive(Debug, Clone)]
pub struct TransferReport<T: Scalar> {
    pub eta1: T,
    pub eta2: T,
    pub eta3: T,
    pub eta4: T,
    pub q_g1: T,
    pub q_g2: T,
    pub q_g: T,
    pub q_h1: T,
    pub q_h2: T,
    pub q_h: T,
    pub inv_norm_exact_g: T,
    pub inv_norm_bound_g: T,
    pub inv_norm_actual_g: T,
    pub inv_norm_exact_h: T,
    pub inv_norm_bound_h: T,
    pub inv_norm_actual_h: T,
    pub admissible: bool,
}

/// Evaluate the isomorphism-transfer conditions: when `q < 1` the
/// approximate bordered operator is nonsingular with inverse norm at most
/// `(1-q)^{-1}` times the exact one. The space isomorphism is the identity
/// on the shared coordinates (norm one).
pub fn transfer_check<T: Scalar>(
    p_fine: &ProblemDef<T>,
    p_h: &ProblemDef<T>,
    pair: &ProjectionPair<T>,
    frames: &Frames<T>,
    frames_h: &Frames<T>,
    exact_pt: &PointLU<T>,
    anchor_h: &PointLU<T>,
) -> Result<TransferReport<T>> {
    let (eta1, eta2, eta3, eta4) =
        eta_estimates(p_fine, p_h, pair, frames, frames_h, exact_pt, anchor_h)?;
    let c = pair.c_est;
    let j_norm = T::one();
    let sum_a: T = (0..frames.q)
        .map(|i| frames.a_bars.column(i).norm())
        .fold(T::zero(), |acc, x| acc + x);
    let sum_b: T = (0..frames.n)
        .map(|k| frames.b_bars.column(k).norm())
        .fold(T::zero(), |acc, x| acc + x);
    let df_norm = op_norm(&p_fine.jac_df(exact_pt)?)?;
    let duf_norm = op_norm(&p_fine.jac_du_f(exact_pt)?)?;
    let q_g1 = c * (df_norm + sum_a + j_norm);
    let q_g2 = eta1 + eta2 + c * j_norm;
    let inv_norm_exact_g = inverse_norm(&phi_g_matrix(p_fine, frames, exact_pt)?)?;
    let q_g = (q_g1 + q_g2) * inv_norm_exact_g;
    let q_h1 = c * (duf_norm + sum_b + j_norm);
    let q_h2 = eta3 + eta4 + c * j_norm;
    let inv_norm_exact_h = inverse_norm(&phi_h_matrix(p_fine, frames, exact_pt)?)?;
    let q_h = (q_h1 + q_h2) * inv_norm_exact_h;
    let inv_norm_actual_g = inverse_norm(&phi_g_matrix(p_h, frames_h, anchor_h)?)?;
    let inv_norm_actual_h = inverse_norm(&phi_h_matrix(p_h, frames_h, anchor_h)?)?;
    let big = T::max_value().unwrap_or_else(T::one);
    let inv_norm_bound_g = if q_g < T::one() {
        inv_norm_exact_g / (T::one() - q_g)
    } else {
        big
    };
    let inv_norm_bound_h = if q_h < T::one() {
        inv_norm_exact_h / (T::one() - q_h)
    } else {
        big
    };
    Ok(TransferReport {
        eta1,
        eta2,
        eta3,
        eta4,
        q_g1,
        q_g2,
        q_g,
        q_h1,
        q_h2,
        q_h,
        inv_norm_exact_g,
        inv_norm_bound_g,
        inv_norm_actual_g,
        inv_norm_exact_h,
        inv_norm_bound_h,
        inv_norm_actual_h,
        admissible: q_g < T::one() && q_h < T::one(),
    })
}

/// Project an exact extended solution onto the approximate spaces: scalars
/// carry over, state-space blocks go through `P_W`.
pub fn project_ext_state<T: Scalar>(
    frames: &Frames<T>,
    frames_h: &Frames<T>,
    pair: &ProjectionPair<T>,
    s: &ExtState<T>,
) -> ExtState<T> {
    let head_x = frames.q + frames.m;
    let proj_x = |x: &DVector<T>| -> DVector<T> {
        let mut out = DVector::zeros(head_x + pair.coarse);
        out.rows_mut(0, head_x).copy_from(&x.rows(0, head_x));
        out.rows_mut(head_x, pair.coarse)
            .copy_from(&(&pair.p_w * x.rows(head_x, pair.fine)));
        out
    };
    let head_z = frames.n;
    let proj_z = |z: &DVector<T>| -> DVector<T> {
        let mut out = DVector::zeros(head_z + pair.coarse);
        out.rows_mut(0, head_z).copy_from(&z.rows(0, head_z));
        out.rows_mut(head_z, pair.coarse)
            .copy_from(&(&pair.p_w * z.rows(head_z, pair.fine)));
        out
    };
    let _ = frames_h;
    ExtState {
        x: proj_x(&s.x),
        ys: s.ys.iter().map(&proj_x).collect(),
        zs: s.zs.iter().map(&proj_z).collect(),
    }
}

/// One row of the h-study table.
#[derive(Debug, Clone)]
pub struct StudyRow<T: Scalar> {
    pub h_label: T,
    pub c_est: T,
    pub eta1: T,
    pub eta2: T,
    pub eta3: T,
    pub eta4: T,
    pub q_g: T,
    pub q_h: T,
    /// Defect of the projected exact extended solution in the coarse system.
    pub delta_h: T,
    pub rho_norm: T,
    pub lambda0h: T,
    /// `||(lambda0, u0) - (lambda0h, E u0h)||` in the fine space.
    pub gap: T,
    /// `C0 ||s0|| + gamma_h / (1 - gamma_h L) ||S_h(s_tilde_h)||`.
    pub bound: T,
    pub type_n: usize,
    pub type_q: usize,
    pub transfer: TransferReport<T>,
}

/// Run the full study over a list of pairs (ordered by decreasing h) with
/// the Galerkin restriction `P F E` as the approximate problem on each row.
pub fn h_study<T: Scalar>(
    p_fine: &ProblemDef<T>,
    pairs: &[ProjectionPair<T>],
    frames: &Frames<T>,
    exact_pt: &PointLU<T>,
    opts: &RecoveryOptions,
) -> Result<Vec<StudyRow<T>>> {
    h_study_with(p_fine, pairs, frames, exact_pt, opts, |pair| {
        Ok(approx_problem(p_fine, pair))
    })
}

/// Like [`h_study`] but with a caller-supplied approximate problem per pair
/// (for example a native coarse-grid discretization, the setting in which
/// the eta constants are nonzero and shrink with h).
pub fn h_study_with<T: Scalar>(
    p_fine: &ProblemDef<T>,
    pairs: &[ProjectionPair<T>],
    frames: &Frames<T>,
    exact_pt: &PointLU<T>,
    opts: &RecoveryOptions,
    approx: impl Fn(&ProjectionPair<T>) -> Result<ProblemDef<T>>,
) -> Result<Vec<StudyRow<T>>> {
    let s0_exact = build_extended_solution(p_fine, frames, exact_pt)?;
    let s0_norm = s0_exact.flatten().norm();
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let p_h = approx(pair)?;
        if p_h.n_state != pair.coarse || p_h.m != p_fine.m {
            return Err(BifError::BadParams(format!(
                "approximate problem dimensions ({}, {}) do not match the pair ({}, {})",
                p_h.m, p_h.n_state, p_fine.m, pair.coarse
            )));
        }
        let anchor_h = PointLU::new(exact_pt.lambda.clone(), &pair.p_w * &exact_pt.u);
        let frames_h = project_frames(&p_h, frames, pair, &anchor_h, BhMode::Rederive)?;
        let transfer =
            transfer_check(p_fine, &p_h, pair, frames, &frames_h, exact_pt, &anchor_h)?;
        let s_tilde_h = project_ext_state(frames, &frames_h, pair, &s0_exact);
        let delta_h = eval_s(&p_h, &frames_h, &s_tilde_h)?.norm();
        let rec = recover(&p_h, &anchor_h, opts)?;
        let shifted = shift_problem(&p_h, &rec.rho);
        let report = classify(&shifted, &rec.point, cvt::<T>(DEFAULT_RTOL))?;
        let gap_l = (&rec.point.lambda - &exact_pt.lambda).norm();
        let gap_u = (&exact_pt.u - &pair.e_w * &rec.point.u).norm();
        let gap = (gap_l * gap_l + gap_u * gap_u).sqrt();
        // a-posteriori gap bound: projection loss plus the Newton-Kantorovich
        // style defect term of the shifted coarse system
        let s_tilde_sh = project_ext_state(frames, &rec.frames, pair, &s0_exact);
        let defect = eval_s(&shifted, &rec.frames, &s_tilde_sh)?.norm();
        let gamma_h = inverse_norm(&jac_s(&shifted, &rec.frames, &s_tilde_sh)?)?;
        let l_h = crate::certify::lipschitz_ls(
            &shifted,
            &rec.frames,
            &s_tilde_sh,
            cvt::<T>(0.05),
            32,
            7,
        )?;
        let bound = if gamma_h * l_h < T::one() {
            pair.c_est * s0_norm + gamma_h / (T::one() - gamma_h * l_h) * defect
        } else {
            T::max_value().unwrap_or_else(T::one)
        };
        rows.push(StudyRow {
            h_label: pair.h_label,
            c_est: pair.c_est,
            eta1: transfer.eta1,
            eta2: transfer.eta2,
            eta3: transfer.eta3,
            eta4: transfer.eta4,
            q_g: transfer.q_g,
            q_h: transfer.q_h,
            delta_h,
            rho_norm: rec.rho.norm(),
            lambda0h: rec.point.lambda[0],
            gap,
            bound,
            type_n: report.n,
            type_q: report.q,
            transfer,
        });
    }
    Ok(rows)
}
