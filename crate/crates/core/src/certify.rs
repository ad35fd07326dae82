//! Quantitative certificate for a recovery anchor: the constants gamma,
//! kappa, the sampled Lipschitz moduli, the neighborhood radii `a*`, `b*`,
//! the contraction and defect conditions, and the a-posteriori bounds on the
//! shift norm and the solution error.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::build_extended_solution;
use crate::error::{BifError, Result};
use crate::extended::{
    eval_s, jac_s, phi_g_matrix, phi_h_matrix, phi_norm, ExtState, Frames,
};
use crate::linalg::{inverse_norm, op_norm};
use crate::problem::{PointLU, ProblemDef};
use crate::scalar::{cvt, to_f64, Scalar};

/// Which radius formulas to use. The uniform variant keeps the radii
/// independent of any discretization parameter and is the default; the
/// general variant uses the looser constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiiMode {
    HUniform,
    General,
}

/// The full certificate at an anchor.
#[derive(Debug, Clone)]
pub struct Certificate<T: Scalar> {
    /// `gamma = ||DS(s_anchor)^{-1}||`.
    pub gamma: T,
    /// Upper bound for the regularity modulus; realized as `kappa = gamma`.
    pub kappa: T,
    /// Sampled Lipschitz modulus of the full block map over the
    /// epsilon-ball (always >= `l_s_eps / 2` by construction).
    pub l_eps: T,
    /// Sampled Lipschitz modulus of `DS` over the epsilon-ball.
    pub l_s_eps: T,
    pub epsilon: T,
    pub alpha: T,
    /// Largest frame-vector norm.
    pub a_hat: T,
    /// Derivative-norm surrogate, strictly above `||DS|| + ||Phi||`.
    pub m_bound: T,
    /// `c = 1/kappa - L(eps)`.
    pub c: T,
    pub tau: T,
    pub a_star: T,
    pub b_star: T,
    /// `delta = ||S(s_anchor)||`.
    pub delta: T,
    /// `2 kappa L + 2 kappa alpha a_hat < 1`.
    pub cond_contraction: bool,
    /// `2 gamma L < 1`.
    pub cond_gamma: bool,
    /// `delta < c a* / 2`.
    pub cond_delta: bool,
    /// `a*/(2 gamma) + delta`.
    pub rho_bound_1: T,
    /// `(||DF|| + L_F(a*)) a*`.
    pub rho_bound_2: T,
    pub radii_mode: RadiiMode,
    pub sample_count: usize,
    pub seed: u64,
}

impl<T: Scalar> Certificate<T> {
    pub fn passes(&self) -> bool {
        self.cond_contraction && self.cond_gamma && self.cond_delta
    }
}

/// `gamma = ||DS(s_anchor)^{-1}||`, the inverse norm of the extended-system
/// Jacobian at the anchor state.
pub fn gamma_of<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    s_anchor: &ExtState<T>,
) -> Result<T> {
    inverse_norm(&jac_s(p, frames, s_anchor)?)
}

/// A point uniformly distributed in the unit ball of dimension `dim`.
/// Gaussian direction (Box-Muller) with radius `u^{1/dim}`.
fn unit_ball_sample<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> DVector<T> {
    let mut g = DVector::<f64>::zeros(dim);
    let mut i = 0;
    while i < dim {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        g[i] = r * (2.0 * std::f64::consts::PI * u2).cos();
        if i + 1 < dim {
            g[i + 1] = r * (2.0 * std::f64::consts::PI * u2).sin();
        }
        i += 2;
    }
    let norm = g.norm();
    let scale = if norm > 0.0 {
        rng.gen_range(0.0f64..1.0).powf(1.0 / dim as f64) / norm
    } else {
        0.0
    };
    DVector::from_iterator(dim, g.iter().map(|&x| cvt::<T>(x * scale)))
}

/// The deterministic sample directions for a seed: unit-ball points reused,
/// scaled, for every radius — so smaller radii probe nested point sets.
fn ball_samples<T: Scalar>(dim: usize, samples: usize, seed: u64) -> Vec<DVector<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples).map(|_| unit_ball_sample(&mut rng, dim)).collect()
}

/// Sampled `L_S(radius) = sup ||DS(s_anchor) - DS(s)||` over the ball.
/// Deterministic for a fixed seed; sample sets are nested across radii.
pub fn lipschitz_ls<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    s_anchor: &ExtState<T>,
    radius: T,
    samples: usize,
    seed: u64,
) -> Result<T> {
    Ok(lipschitz_pair(p, frames, s_anchor, radius, samples, seed)?.0)
}

/// Sampled Lipschitz moduli `(L_S, L)` over the ball: `L_S` for `DS` alone,
/// `L` for the full block map including the frame operator differences
/// (so `L >= L_S >= L_S / 2` pointwise per sample).
pub fn lipschitz_pair<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    s_anchor: &ExtState<T>,
    radius: T,
    samples: usize,
    seed: u64,
) -> Result<(T, T)> {
    if samples == 0 || radius <= T::zero() {
        return Err(BifError::BadParams("need radius > 0 and samples >= 1".into()));
    }
    let dim = frames.ext_dim();
    let flat0 = s_anchor.flatten();
    let ds0 = jac_s(p, frames, s_anchor)?;
    let (_, pt0) = frames.split_x(&s_anchor.x);
    let phig0 = phi_g_matrix(p, frames, &pt0)?;
    let phih0 = phi_h_matrix(p, frames, &pt0)?;
    let mut l_s = T::zero();
    let mut l_big = T::zero();
    for dir in ball_samples::<T>(dim, samples, seed) {
        let flat = &flat0 + dir * radius;
        let s = ExtState::unflatten(frames, &flat)?;
        let d_s = op_norm(&(jac_s(p, frames, &s)? - &ds0))?;
        let (_, pt) = frames.split_x(&s.x);
        let d_g = op_norm(&(phi_g_matrix(p, frames, &pt)? - &phig0))?;
        let d_h = op_norm(&(phi_h_matrix(p, frames, &pt)? - &phih0))?;
        let block = if d_g > d_h { d_g } else { d_h };
        let combined = if d_s > block { d_s } else { block };
        if d_s > l_s {
            l_s = d_s;
        }
        if combined > l_big {
            l_big = combined;
        }
    }
    Ok((l_s, l_big))
}

/// The regularity-modulus upper bound: `kappa := gamma`.
pub fn kappa_of<T: Scalar>(gamma: T) -> T {
    gamma
}

/// Neighborhood radii `(tau, a*, b*, c)` from the certificate constants.
pub fn radii<T: Scalar>(
    kappa: T,
    l_eps: T,
    m_bound: T,
    epsilon: T,
    mode: RadiiMode,
) -> Result<(T, T, T, T)> {
    let one = T::one();
    let two = cvt::<T>(2.0);
    if two * kappa * l_eps >= one {
        return Err(BifError::ConditionViolated(format!(
            "2 kappa L(eps) = {} >= 1; no contraction radius exists",
            to_f64(two * kappa * l_eps)
        )));
    }
    let c = one / kappa - l_eps;
    match mode {
        RadiiMode::HUniform => {
            let km = two * kappa * m_bound;
            let tau = cvt::<T>(0.99) * (one + km) / (two + km) * epsilon;
            let a_u = tau / (one + km);
            let b_v = tau / (two * kappa);
            let a_star = if a_u < kappa * b_v { a_u } else { kappa * b_v };
            let b_star = c * a_star;
            Ok((tau, a_star, b_star, c))
        }
        RadiiMode::General => {
            let lm = l_eps + m_bound;
            let tau = cvt::<T>(0.99) * lm / (lm + c) * epsilon;
            let a_u = c * tau / lm;
            let b_v = c * tau;
            let a_star = if a_u < b_v / c { a_u } else { b_v / c };
            let b_star = c * a_star;
            Ok((tau, a_star, b_star, c))
        }
    }
}

/// Sampled Lipschitz modulus of `DF` over a `(lambda,u)`-ball of the given
/// radius around the anchor.
fn lipschitz_df<T: Scalar>(
    p: &ProblemDef<T>,
    anchor: &PointLU<T>,
    radius: T,
    samples: usize,
    seed: u64,
) -> Result<T> {
    let dim = p.m + p.n_state;
    let flat0 = anchor.flatten();
    let df0 = p.jac_df(anchor)?;
    let mut worst = T::zero();
    for dir in ball_samples::<T>(dim, samples, seed) {
        let pt = PointLU::unflatten(&(&flat0 + dir * radius), p.m);
        let d = op_norm(&(p.jac_df(&pt)? - &df0))?;
        if d > worst {
            worst = d;
        }
    }
    Ok(worst)
}

/// Compute the full certificate at an anchor. `epsilon` is the sampling ball
/// radius for the Lipschitz moduli; `alpha` the arbitrarily small auxiliary
/// constant of the contraction condition.
pub fn certificate<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    anchor: &PointLU<T>,
    epsilon: T,
    alpha: T,
    samples: usize,
    seed: u64,
    mode: RadiiMode,
) -> Result<Certificate<T>> {
    if !(alpha > T::zero() && alpha < T::one() && alpha != cvt::<T>(0.5)) {
        return Err(BifError::BadParams(
            "alpha must lie in (0,1) and differ from 1/2".into(),
        ));
    }
    let s_anchor = build_extended_solution(p, frames, anchor)?;
    let gamma = gamma_of(p, frames, &s_anchor)?;
    let kappa = kappa_of(gamma);
    let (l_s_eps, l_eps) = lipschitz_pair(p, frames, &s_anchor, epsilon, samples, seed)?;
    let a_hat = frames.a_hat();
    let ds_norm = op_norm(&jac_s(p, frames, &s_anchor)?)?;
    let m_bound = cvt::<T>(1.01) * (ds_norm + phi_norm(p, frames, anchor)?);
    let two = cvt::<T>(2.0);
    let cond_contraction = two * kappa * l_eps + two * kappa * alpha * a_hat < T::one();
    let cond_gamma = two * gamma * l_eps < T::one();
    let delta = eval_s(p, frames, &s_anchor)?.norm();
    let (tau, a_star, b_star, c) = radii(kappa, l_eps, m_bound, epsilon, mode)?;
    let cond_delta = delta < c * a_star / two;
    let rho_bound_1 = a_star / (two * gamma) + delta;
    let df_norm = op_norm(&p.jac_df(anchor)?)?;
    let l_f = lipschitz_df(p, anchor, a_star, samples, seed)?;
    let rho_bound_2 = (df_norm + l_f) * a_star;
    Ok(Certificate {
        gamma,
        kappa,
        l_eps,
        l_s_eps,
        epsilon,
        alpha,
        a_hat,
        m_bound,
        c,
        tau,
        a_star,
        b_star,
        delta,
        cond_contraction,
        cond_gamma,
        cond_delta,
        rho_bound_1,
        rho_bound_2,
        radii_mode: mode,
        sample_count: samples,
        seed,
    })
}

/// A-posteriori error bound for a trial extended state `r` of the shifted
/// problem: `||s0 - r|| <= gamma / (1 - gamma L_S(a)) * ||S0(r)||`, with
/// `a = ||r - s_anchor||` and `L_S(a)` sampled.
pub fn error_bound<T: Scalar>(
    p_shifted: &ProblemDef<T>,
    frames: &Frames<T>,
    s_anchor: &ExtState<T>,
    r: &ExtState<T>,
    samples: usize,
    seed: u64,
) -> Result<T> {
    let gamma = gamma_of(p_shifted, frames, s_anchor)?;
    let a = (r.flatten() - s_anchor.flatten()).norm();
    let l_s = if a > T::zero() {
        lipschitz_ls(p_shifted, frames, s_anchor, a, samples, seed)?
    } else {
        T::zero()
    };
    if gamma * l_s >= T::one() {
        return Err(BifError::ConditionViolated(format!(
            "gamma L_S(a) = {} >= 1; the bound does not apply at this distance",
            to_f64(gamma * l_s)
        )));
    }
    let res = eval_s(p_shifted, frames, r)?.norm();
    Ok(gamma / (T::one() - gamma * l_s) * res)
}
