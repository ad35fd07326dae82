//! Classification of solutions as bifurcation points of type `(n, q)` and
//! verification via the extended system — the two directions of the
//! equivalence between "bifurcation point of type (n,q)" and "well-posed
//! extended solution", plus a spot-check of invariance under smooth changes
//! of variables.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BifError, Result};
use crate::extended::{
    eval_s, jac_s, phi_g_matrix, phi_h_matrix, ExtState, Frames,
};
use crate::linalg::{solve, svd_analysis, SolveMode, DEFAULT_RTOL};
use crate::problem::{PointLU, ProblemDef};
use crate::scalar::{cvt, to_f64, Scalar};

/// Classification at a solution point.
#[derive(Debug, Clone)]
pub struct ClassifyReport<T: Scalar> {
    /// Kernel dimension of `D_u F`.
    pub n: usize,
    /// Range deficiency of `DF`.
    pub q: usize,
    pub sigma_df: Vec<T>,
    pub sigma_duf: Vec<T>,
    pub kernel_df: Vec<DVector<T>>,
    pub kernel_duf: Vec<DVector<T>>,
    pub cokernel_df: Vec<DVector<T>>,
    pub cokernel_duf: Vec<DVector<T>>,
    pub rtol_used: T,
    pub rank_ambiguous: bool,
    /// In finite dimension `D_u F` is square, hence Fredholm of index zero by
    /// construction; recorded for the report.
    pub fredholm_index_note: String,
}

impl<T: Scalar> ClassifyReport<T> {
    /// `n >= 1` and `q >= 1`: the point is a bifurcation point candidate.
    pub fn is_bifurcation(&self) -> bool {
        self.n >= 1 && self.q >= 1
    }
}

/// Verification result for an extended-system solution.
#[derive(Debug, Clone)]
pub struct VerifyReport<T: Scalar> {
    pub residual_s: T,
    pub sigma_min_ds: T,
    /// Max over `|f|`, `|g_i|`, `|e_k|` components.
    pub zero_components_max: T,
    pub passes: bool,
    pub implied_type: (usize, usize),
    pub tol_res: T,
    pub tol_rank: T,
    pub tol_zero: T,
}

/// Default verification tolerances.
#[derive(Debug, Clone, Copy)]
pub struct VerifyTols<T: Scalar> {
    pub tol_res: T,
    pub tol_rank: T,
    pub tol_zero: T,
}

impl<T: Scalar> Default for VerifyTols<T> {
    fn default() -> Self {
        Self {
            tol_res: cvt::<T>(1e-8),
            tol_rank: cvt::<T>(1e-8),
            tol_zero: cvt::<T>(1e-7),
        }
    }
}

/// Classify a solution point by SVD rank decisions on `DF` and `D_u F`.
/// The point must satisfy `F = 0` to within `1e-8 * (1 + scale)`.
pub fn classify<T: Scalar>(p: &ProblemDef<T>, pt: &PointLU<T>, rtol: T) -> Result<ClassifyReport<T>> {
    let f = p.eval_f(pt)?;
    let df = p.jac_df(pt)?;
    let scale = T::one() + df.amax();
    let tol_res = cvt::<T>(1e-8) * scale;
    if f.norm() > tol_res {
        return Err(BifError::SolutionResidualTooLarge {
            residual: to_f64(f.norm()),
            tol: to_f64(tol_res),
        });
    }
    let dfu = p.jac_du_f(pt)?;
    let svd_df = svd_analysis(&df)?;
    let svd_dfu = svd_analysis(&dfu)?;
    // threshold against a common scale with an absolute floor, so operators
    // that are numerically zero (e.g. FD noise at a fully singular point)
    // classify as rank 0 rather than full rank
    let scale = if svd_df.sigma_max() > T::one() { svd_df.sigma_max() } else { T::one() };
    let thresh = rtol * scale;
    let report = ClassifyReport {
        n: p.n_state - svd_dfu.rank_at(thresh),
        q: p.n_state - svd_df.rank_at(thresh),
        sigma_df: svd_df.singular_values.clone(),
        sigma_duf: svd_dfu.singular_values.clone(),
        kernel_df: svd_df.kernel_cols(thresh),
        kernel_duf: svd_dfu.kernel_cols(thresh),
        cokernel_df: svd_df.cokernel_cols(thresh),
        cokernel_duf: svd_dfu.cokernel_cols(thresh),
        rtol_used: rtol,
        rank_ambiguous: svd_df.rank_ambiguous_at(thresh) || svd_dfu.rank_ambiguous_at(thresh),
        fredholm_index_note: "finite-dimensional square D_u F: Fredholm of index zero".into(),
    };
    debug_assert!(report.q <= report.n, "Range(DF) contains Range(D_u F)");
    Ok(report)
}

/// Build the extended solution at a classified bifurcation point: `x0` with
/// zero slack, `y_i` from `Phi_G(x0, y_i) = (d_i, 0)`, `z_k` from
/// `Phi_H(x0, z_k) = (d_k, 0)`.
pub fn build_extended_solution<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    pt: &PointLU<T>,
) -> Result<ExtState<T>> {
    let mut s = ExtState::zero(frames);
    s.x = frames.anchor_x(pt);
    let phig = phi_g_matrix(p, frames, pt)?;
    let phih = phi_h_matrix(p, frames, pt)?;
    for i in 0..frames.q + frames.m {
        let mut rhs = DVector::zeros(frames.xdim());
        rhs.rows_mut(0, frames.q + frames.m)
            .copy_from(&frames.basis_qm.column(i).into_owned());
        s.ys[i] = solve(&phig, &rhs, SolveMode::Exact)?;
    }
    for k in 0..frames.n {
        let mut rhs = DVector::zeros(frames.zdim());
        rhs.rows_mut(0, frames.n).copy_from(&frames.basis_n.column(k).into_owned());
        s.zs[k] = solve(&phih, &rhs, SolveMode::Exact)?;
    }
    Ok(s)
}

/// Max over the components that vanish at a true extended solution:
/// the slack `f`, all `g_i`, all `e_k`.
pub fn zero_components_max<T: Scalar>(frames: &Frames<T>, s: &ExtState<T>) -> T {
    let mut worst = if frames.q > 0 { s.x.rows(0, frames.q).amax() } else { T::zero() };
    for y in s.ys.iter() {
        if frames.q > 0 {
            let g = y.rows(0, frames.q).amax();
            if g > worst {
                worst = g;
            }
        }
    }
    for z in s.zs.iter() {
        let e = z.rows(0, frames.n).amax();
        if e > worst {
            worst = e;
        }
    }
    worst
}

/// Verify an extended-system solution: small residual, nonsingular Jacobian,
/// vanishing slack components.
pub fn verify_extended<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    s0: &ExtState<T>,
    tols: VerifyTols<T>,
) -> Result<VerifyReport<T>> {
    let residual_s = eval_s(p, frames, s0)?.norm();
    let svd = svd_analysis(&jac_s(p, frames, s0)?)?;
    let sigma_min_ds = svd.sigma_min();
    let zeros = zero_components_max(frames, s0);
    let passes = residual_s <= tols.tol_res && sigma_min_ds > tols.tol_rank && zeros <= tols.tol_zero;
    Ok(VerifyReport {
        residual_s,
        sigma_min_ds,
        zero_components_max: zeros,
        passes,
        implied_type: (frames.n, frames.q),
        tol_res: tols.tol_res,
        tol_rank: tols.tol_rank,
        tol_zero: tols.tol_zero,
    })
}

/// Read kernel bases off a verified extended solution: `{(mu_i, w_i)}` spans
/// `Ker DF` (dimension `q+m`), `{v_k}` spans `Ker D_u F` (dimension `n`).
pub fn kernel_from_extended<T: Scalar>(
    frames: &Frames<T>,
    s0: &ExtState<T>,
) -> (Vec<DVector<T>>, Vec<DVector<T>>) {
    let df_kernel = s0
        .ys
        .iter()
        .map(|y| y.rows(frames.q, frames.m + frames.n_state).into_owned())
        .collect();
    let duf_kernel = s0
        .zs
        .iter()
        .map(|z| z.rows(frames.n, frames.n_state).into_owned())
        .collect();
    (df_kernel, duf_kernel)
}

/// Result of one change-of-variables trial.
#[derive(Debug, Clone)]
pub struct SpotcheckReport {
    pub trials: usize,
    pub all_types_match: bool,
    pub types: Vec<(usize, usize)>,
}

/// Classify `F` composed with random invertible linear changes of variables
/// `phi0(lambda, u) = (L lambda, A u + C lambda)` at the transformed point;
/// the type `(n, q)` must be invariant.
pub fn equivalence_spotcheck<T: Scalar>(
    p: &ProblemDef<T>,
    pt: &PointLU<T>,
    seed: u64,
    trials: usize,
) -> Result<SpotcheckReport> {
    let base = classify(p, pt, cvt::<T>(DEFAULT_RTOL))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut types = Vec::with_capacity(trials);
    let mut all_match = true;
    for _ in 0..trials {
        // well-conditioned invertible blocks
        let lam_blk = DMatrix::<T>::identity(p.m, p.m)
            + DMatrix::from_fn(p.m, p.m, |_, _| cvt::<T>(rng.gen_range(-0.3..0.3)));
        let a_blk = DMatrix::<T>::identity(p.n_state, p.n_state)
            + DMatrix::from_fn(p.n_state, p.n_state, |_, _| cvt::<T>(rng.gen_range(-0.5..0.5)))
                / cvt::<T>(p.n_state as f64);
        let c_blk = DMatrix::<T>::from_fn(p.n_state, p.m, |_, _| cvt::<T>(rng.gen_range(-0.5..0.5)));
        let lam_inv = lam_blk
            .clone()
            .try_inverse()
            .ok_or_else(|| BifError::BadParams("singular random transform".into()))?;
        let a_inv = a_blk
            .clone()
            .try_inverse()
            .ok_or_else(|| BifError::BadParams("singular random transform".into()))?;
        // transformed problem: F(phi0^{-1}(lambda', u'))
        let inner = p.clone();
        let (li, ai, cb) = (lam_inv.clone(), a_inv.clone(), c_blk.clone());
        let transformed = ProblemDef::new("transformed", p.m, p.n_state, move |tp: &PointLU<T>| {
            let lam = &li * &tp.lambda;
            let u = &ai * (&tp.u - &cb * &lam);
            inner.eval_f(&PointLU::new(lam, u))
        });
        let t_pt = PointLU::new(&lam_blk * &pt.lambda, &a_blk * &pt.u + &c_blk * &pt.lambda);
        let rep = classify(&transformed, &t_pt, cvt::<T>(DEFAULT_RTOL))?;
        if (rep.n, rep.q) != (base.n, base.q) {
            all_match = false;
        }
        types.push((rep.n, rep.q));
    }
    Ok(SpotcheckReport {
        trials,
        all_types_match: all_match,
        types,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extended::choose_frames;
    use crate::testbeds;
    use nalgebra::dvector;

    #[test]
    fn pitchfork_classifies_1_1() {
        let p = testbeds::pitchfork::<f64>().problem;
        let rep = classify(&p, &PointLU::new(dvector![0.0], dvector![0.0]), DEFAULT_RTOL).unwrap();
        assert_eq!((rep.n, rep.q), (1, 1));
        assert!(rep.is_bifurcation());
    }

    #[test]
    fn pitchfork_regular_point() {
        let p = testbeds::pitchfork::<f64>().problem;
        let rep = classify(&p, &PointLU::new(dvector![-1.0], dvector![0.0]), DEFAULT_RTOL).unwrap();
        assert_eq!(rep.n, 0);
        assert!(!rep.is_bifurcation());
    }

    #[test]
    fn classify_rejects_non_solution() {
        let p = testbeds::pitchfork::<f64>().problem;
        assert!(matches!(
            classify(&p, &PointLU::new(dvector![2.0], dvector![1.0]), DEFAULT_RTOL),
            Err(BifError::SolutionResidualTooLarge { .. })
        ));
    }

    #[test]
    fn chafee_infante_truth_classification() {
        let entry = testbeds::chafee_infante::<f64>(32).unwrap();
        let truth = entry.known_truth.clone().unwrap();
        let rep = classify(&entry.problem, &truth.point, DEFAULT_RTOL).unwrap();
        assert_eq!((rep.n, rep.q), (truth.type_n, truth.type_q));
    }

    #[test]
    fn roundtrip_pitchfork() {
        let p = testbeds::pitchfork::<f64>().problem;
        let pt = PointLU::new(dvector![0.0], dvector![0.0]);
        let frames = choose_frames(&p, &pt, DEFAULT_RTOL).unwrap();
        let s0 = build_extended_solution(&p, &frames, &pt).unwrap();
        let rep = verify_extended(&p, &frames, &s0, VerifyTols::default()).unwrap();
        assert!(rep.passes, "{rep:?}");
        // the y-blocks recover Ker DF(0,0) = all of R^2
        let (kdf, kduf) = kernel_from_extended(&frames, &s0);
        assert_eq!(kdf.len(), 2);
        assert_eq!(kduf.len(), 1);
        let stacked = DMatrix::from_columns(&kdf);
        let svd = svd_analysis(&stacked).unwrap();
        assert!(svd.sigma_min() > 1e-8); // linearly independent
        assert!((kduf[0][0].abs() - kduf[0].norm()).abs() < 1e-12);
    }

    #[test]
    fn verify_fails_on_perturbed_slack() {
        let p = testbeds::pitchfork::<f64>().problem;
        let pt = PointLU::new(dvector![0.0], dvector![0.0]);
        let frames = choose_frames(&p, &pt, DEFAULT_RTOL).unwrap();
        let mut s0 = build_extended_solution(&p, &frames, &pt).unwrap();
        s0.x[0] = 0.1; // break the zero-slack property
        let rep = verify_extended(&p, &frames, &s0, VerifyTols::default()).unwrap();
        assert!(!rep.passes);
        assert!(rep.zero_components_max >= 0.1);
    }

    #[test]
    fn kernel_counts_match_lemma() {
        // dim Ker DF = q + m, dim Ker D_u F = n, on Chafee-Infante
        let entry = testbeds::chafee_infante::<f64>(12).unwrap();
        let truth = entry.known_truth.clone().unwrap();
        let frames = choose_frames(&entry.problem, &truth.point, DEFAULT_RTOL).unwrap();
        let s0 = build_extended_solution(&entry.problem, &frames, &truth.point).unwrap();
        let rep = verify_extended(&entry.problem, &frames, &s0, VerifyTols::default()).unwrap();
        assert!(rep.passes, "{rep:?}");
        let (kdf, kduf) = kernel_from_extended(&frames, &s0);
        assert_eq!(kdf.len(), frames.q + frames.m);
        assert_eq!(kduf.len(), frames.n);
        // each basis vector annihilated by the corresponding operator
        let df = entry.problem.jac_df(&truth.point).unwrap();
        for v in &kdf {
            assert!((&df * v).amax() < 1e-7 * (1.0 + df.amax()));
        }
        let dfu = entry.problem.jac_du_f(&truth.point).unwrap();
        for v in &kduf {
            assert!((&dfu * v).amax() < 1e-7 * (1.0 + dfu.amax()));
        }
        // v_1 proportional to the first discrete sine mode
        let (_, vecs) = testbeds::tridiag_eigen_oracle(12);
        let v = &kduf[0] / kduf[0].norm();
        assert!(v.dot(&vecs[0]).abs() > 1.0 - 1e-8);
    }

    #[test]
    fn spotcheck_pitchfork_and_ci() {
        let p = testbeds::pitchfork::<f64>().problem;
        let rep = equivalence_spotcheck(&p, &PointLU::new(dvector![0.0], dvector![0.0]), 42, 10).unwrap();
        assert!(rep.all_types_match, "{:?}", rep.types);
        let entry = testbeds::chafee_infante::<f64>(16).unwrap();
        let truth = entry.known_truth.clone().unwrap();
        let rep = equivalence_spotcheck(&entry.problem, &truth.point, 42, 10).unwrap();
        assert!(rep.all_types_match, "{:?}", rep.types);
    }
}
