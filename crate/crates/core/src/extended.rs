//! The extended system: auxiliary maps `G`, `H`, `Psi`, the bordered
//! operators `Phi_G`, `Phi_H`, the stacked system `S` and its Jacobian `DS`,
//! plus cokernel-frame and bordering construction.
//!
//! Notation (all dense, desk scale):
//!
//! ```text
//! x = (f, lambda, u) in R^(q+m+N)     G(x) = F(lambda,u) - sum_i f^i a_i
//! z = (e, v)         in R^(n+N)       H(lambda,u,z) = D_u F v - sum_k e^k b_k
//! Psi(x) = [B x - theta0; G(x)]
//! Phi_G(x, y) = [B y; DG(x) y]        Phi_H(x, z) = [Bbar z; H(lambda,u,z)]
//! S(s) = [Psi(x); {B y_i - d_i; DG(x) y_i}_i; {Bbar z_k - d_k; H z_k}_k]
//! ```
//!
//! where `a_i` span a complement of Range DF, `b_k` span a complement of
//! Range D_u F, `B` and `Bbar` are borderings whose kernels meet the
//! respective operator kernels only at zero, and `d_i`, `d_k` are fixed basis
//! vectors of `R^(q+m)` and `R^n`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{BifError, Result};
use crate::linalg::{op_norm, svd_analysis, DEFAULT_RTOL};
use crate::problem::{PointLU, ProblemDef};
use crate::scalar::{cvt, Scalar};

/// Cokernel frames, borderings, and anchor data for one problem/anchor pair.
#[derive(Debug, Clone)]
pub struct Frames<T: Scalar> {
    /// Range deficiency of `DF` (number of `a_i`).
    pub q: usize,
    /// Kernel dimension of `D_u F` (number of `b_k`).
    pub n: usize,
    /// Parameter count of the problem.
    pub m: usize,
    /// State dimension `N`.
    pub n_state: usize,
    /// `N x q`, columns span a complement of Range DF.
    pub a_bars: DMatrix<T>,
    /// `N x n`, columns span a complement of Range D_u F.
    pub b_bars: DMatrix<T>,
    /// Bordering `B`, `(q+m) x (q+m+N)`.
    pub b_op: DMatrix<T>,
    /// Bordering `Bbar`, `n x (n+N)`.
    pub bbar_op: DMatrix<T>,
    /// `theta0 = B(x_anchor)` with `f = 0`.
    pub theta0: DVector<T>,
    /// Basis `d_i` of `R^(q+m)` (columns), default identity.
    pub basis_qm: DMatrix<T>,
    /// Basis `d_k` of `R^n` (columns), default identity.
    pub basis_n: DMatrix<T>,
    /// True when a rank decision fell within a factor 10 of the threshold.
    pub rank_ambiguous: bool,
}

impl<T: Scalar> Frames<T> {
    /// Dimension of `x = (f, lambda, u)`.
    pub fn xdim(&self) -> usize {
        self.q + self.m + self.n_state
    }

    /// Dimension of `z = (e, v)`.
    pub fn zdim(&self) -> usize {
        self.n + self.n_state
    }

    /// Total dimension of the extended state `s`.
    pub fn ext_dim(&self) -> usize {
        (1 + self.q + self.m) * self.xdim() + self.n * self.zdim()
    }

    /// `max` over frame-vector norms (the certificate's frame constant).
    pub fn a_hat(&self) -> T {
        let mut best = T::zero();
        for j in 0..self.q {
            let nj = self.a_bars.column(j).norm();
            if nj > best {
                best = nj;
            }
        }
        for k in 0..self.n {
            let nk = self.b_bars.column(k).norm();
            if nk > best {
                best = nk;
            }
        }
        best
    }

    /// Assemble `x = (f, lambda, u)`.
    pub fn make_x(&self, f: &DVector<T>, pt: &PointLU<T>) -> DVector<T> {
        let mut x = DVector::zeros(self.xdim());
        x.rows_mut(0, self.q).copy_from(f);
        x.rows_mut(self.q, self.m).copy_from(&pt.lambda);
        x.rows_mut(self.q + self.m, self.n_state).copy_from(&pt.u);
        x
    }

    /// `x` at a point with zero slack `f`.
    pub fn anchor_x(&self, pt: &PointLU<T>) -> DVector<T> {
        self.make_x(&DVector::zeros(self.q), pt)
    }

    /// Split `x` into `(f, point)`.
    pub fn split_x(&self, x: &DVector<T>) -> (DVector<T>, PointLU<T>) {
        (
            x.rows(0, self.q).into_owned(),
            PointLU::new(
                x.rows(self.q, self.m).into_owned(),
                x.rows(self.q + self.m, self.n_state).into_owned(),
            ),
        )
    }
}

/// The stacked unknown `s = (x, y_1..y_{q+m}, z_1..z_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtState<T: Scalar> {
    pub x: DVector<T>,
    pub ys: Vec<DVector<T>>,
    pub zs: Vec<DVector<T>>,
}

impl<T: Scalar> ExtState<T> {
    pub fn zero(frames: &Frames<T>) -> Self {
        Self {
            x: DVector::zeros(frames.xdim()),
            ys: vec![DVector::zeros(frames.xdim()); frames.q + frames.m],
            zs: vec![DVector::zeros(frames.zdim()); frames.n],
        }
    }

    pub fn flatten(&self) -> DVector<T> {
        let total = self.x.len() + self.ys.iter().map(|y| y.len()).sum::<usize>()
            + self.zs.iter().map(|z| z.len()).sum::<usize>();
        let mut out = DVector::zeros(total);
        let mut at = 0;
        for block in std::iter::once(&self.x).chain(self.ys.iter()).chain(self.zs.iter()) {
            out.rows_mut(at, block.len()).copy_from(block);
            at += block.len();
        }
        out
    }

    pub fn unflatten(frames: &Frames<T>, v: &DVector<T>) -> Result<Self> {
        if v.len() != frames.ext_dim() {
            return Err(BifError::DimensionMismatch(format!(
                "flat state has {} entries, frames need {}",
                v.len(),
                frames.ext_dim()
            )));
        }
        let (xd, zd) = (frames.xdim(), frames.zdim());
        let mut at = 0;
        let x = v.rows(at, xd).into_owned();
        at += xd;
        let mut ys = Vec::with_capacity(frames.q + frames.m);
        for _ in 0..frames.q + frames.m {
            ys.push(v.rows(at, xd).into_owned());
            at += xd;
        }
        let mut zs = Vec::with_capacity(frames.n);
        for _ in 0..frames.n {
            zs.push(v.rows(at, zd).into_owned());
            at += zd;
        }
        Ok(Self { x, ys, zs })
    }
}

/// Matrix of `DG(x) = [-Abar | DF(lambda,u)]`, an `N x (q+m+N)` operator.
/// It does not depend on the slack `f`.
pub fn dg_matrix<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, pt: &PointLU<T>) -> Result<DMatrix<T>> {
    let df = p.jac_df(pt)?;
    let mut out = DMatrix::zeros(frames.n_state, frames.xdim());
    out.columns_mut(0, frames.q).copy_from(&(-&frames.a_bars));
    out.columns_mut(frames.q, frames.m + frames.n_state).copy_from(&df);
    Ok(out)
}

/// Matrix of `H(lambda,u,.) = [-Bbar-frame | D_u F]`, `N x (n+N)`.
pub fn h_matrix<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, pt: &PointLU<T>) -> Result<DMatrix<T>> {
    let dfu = p.jac_du_f(pt)?;
    let mut out = DMatrix::zeros(frames.n_state, frames.zdim());
    out.columns_mut(0, frames.n).copy_from(&(-&frames.b_bars));
    out.columns_mut(frames.n, frames.n_state).copy_from(&dfu);
    Ok(out)
}

/// Square matrix of `Phi_G(x, .) = [B; DG(x)]`.
pub fn phi_g_matrix<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, pt: &PointLU<T>) -> Result<DMatrix<T>> {
    let dg = dg_matrix(p, frames, pt)?;
    let rows = frames.q + frames.m + frames.n_state;
    let mut out = DMatrix::zeros(rows, frames.xdim());
    out.rows_mut(0, frames.q + frames.m).copy_from(&frames.b_op);
    out.rows_mut(frames.q + frames.m, frames.n_state).copy_from(&dg);
    Ok(out)
}

/// Square matrix of `Phi_H(x, .) = [Bbar; H(lambda,u,.)]`.
pub fn phi_h_matrix<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, pt: &PointLU<T>) -> Result<DMatrix<T>> {
    let h = h_matrix(p, frames, pt)?;
    let mut out = DMatrix::zeros(frames.zdim(), frames.zdim());
    out.rows_mut(0, frames.n).copy_from(&frames.bbar_op);
    out.rows_mut(frames.n, frames.n_state).copy_from(&h);
    Ok(out)
}

/// `G(x) = F(lambda,u) - sum_i f^i a_i`.
pub fn eval_g<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, x: &DVector<T>) -> Result<DVector<T>> {
    let (f, pt) = frames.split_x(x);
    Ok(p.eval_f(&pt)? - &frames.a_bars * f)
}

/// `H(lambda,u,z) = D_u F(lambda,u) v - sum_k e^k b_k`.
pub fn eval_h<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    pt: &PointLU<T>,
    z: &DVector<T>,
) -> Result<DVector<T>> {
    let e = z.rows(0, frames.n).into_owned();
    let v = z.rows(frames.n, frames.n_state).into_owned();
    Ok(p.jac_du_f(pt)? * v - &frames.b_bars * e)
}

/// `Psi(x) = [B x - theta0; G(x)]`.
pub fn eval_psi<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, x: &DVector<T>) -> Result<DVector<T>> {
    let top = &frames.b_op * x - &frames.theta0;
    let g = eval_g(p, frames, x)?;
    let mut out = DVector::zeros(frames.xdim());
    out.rows_mut(0, frames.q + frames.m).copy_from(&top);
    out.rows_mut(frames.q + frames.m, frames.n_state).copy_from(&g);
    Ok(out)
}

/// The block-linear map `Phi(x, phi') = [Phi_G(x, y'); {Phi_G(x, y_i')}_i;
/// {Phi_H(x, z_k')}_k]`, linear in `phi'`.
pub fn eval_phi<T: Scalar>(
    p: &ProblemDef<T>,
    frames: &Frames<T>,
    x: &DVector<T>,
    phi: &ExtState<T>,
) -> Result<DVector<T>> {
    let (_, pt) = frames.split_x(x);
    let phig = phi_g_matrix(p, frames, &pt)?;
    let phih = phi_h_matrix(p, frames, &pt)?;
    let mut out = DVector::zeros(frames.ext_dim());
    let mut at = 0;
    for y in std::iter::once(&phi.x).chain(phi.ys.iter()) {
        out.rows_mut(at, frames.xdim()).copy_from(&(&phig * y));
        at += frames.xdim();
    }
    for z in phi.zs.iter() {
        out.rows_mut(at, frames.zdim()).copy_from(&(&phih * z));
        at += frames.zdim();
    }
    Ok(out)
}

/// The extended system `S(s)`, stacked in the frozen block order.
pub fn eval_s<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, s: &ExtState<T>) -> Result<DVector<T>> {
    let (_, pt) = frames.split_x(&s.x);
    let dg = dg_matrix(p, frames, &pt)?;
    let h = h_matrix(p, frames, &pt)?;
    let mut out = DVector::zeros(frames.ext_dim());
    out.rows_mut(0, frames.xdim()).copy_from(&eval_psi(p, frames, &s.x)?);
    let mut at = frames.xdim();
    for (i, y) in s.ys.iter().enumerate() {
        let top = &frames.b_op * y - frames.basis_qm.column(i).into_owned();
        out.rows_mut(at, frames.q + frames.m).copy_from(&top);
        out.rows_mut(at + frames.q + frames.m, frames.n_state).copy_from(&(&dg * y));
        at += frames.xdim();
    }
    for (k, z) in s.zs.iter().enumerate() {
        let top = &frames.bbar_op * z - frames.basis_n.column(k).into_owned();
        out.rows_mut(at, frames.n).copy_from(&top);
        out.rows_mut(at + frames.n, frames.n_state).copy_from(&(&h * z));
        at += frames.zdim();
    }
    Ok(out)
}

/// Jacobian `DS(s)`: square on the extended state. Second-derivative
/// couplings enter only through the `(lambda,u)` columns of the `y_i` and
/// `z_k` row blocks; `DS` does not depend on the slack `f`.
pub fn jac_s<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, s: &ExtState<T>) -> Result<DMatrix<T>> {
    let (_, pt) = frames.split_x(&s.x);
    let dim = frames.ext_dim();
    let (xd, zd) = (frames.xdim(), frames.zdim());
    let (q, m, n, nn) = (frames.q, frames.m, frames.n, frames.n_state);
    let dg = dg_matrix(p, frames, &pt)?;
    let h = h_matrix(p, frames, &pt)?;
    let mut out = DMatrix::zeros(dim, dim);

    // Psi row block: [B; DG(x)] acting on x-bar
    out.view_mut((0, 0), (q + m, xd)).copy_from(&frames.b_op);
    out.view_mut((q + m, 0), (nn, xd)).copy_from(&dg);

    // the second-derivative map d -> D^2 F(pt)(d1, d), one matrix per carried
    // kernel direction d1
    let second_block = |d1: &DVector<T>| -> Result<DMatrix<T>> {
        let mut blk = DMatrix::zeros(nn, m + nn);
        for c in 0..m + nn {
            let mut d2 = DVector::zeros(m + nn);
            d2[c] = T::one();
            blk.column_mut(c).copy_from(&p.second_directional(&pt, d1, &d2)?);
        }
        Ok(blk)
    };

    let mut row = xd;
    for y in s.ys.iter() {
        let d1 = y.rows(q, m + nn).into_owned(); // (mu_i, w_i)
        let blk = second_block(&d1)?;
        // x-bar columns: no f-bar dependence (Remark: DG independent of f)
        out.view_mut((row + q + m, q), (nn, m + nn)).copy_from(&blk);
        // y_i-bar columns
        out.view_mut((row, row), (q + m, xd)).copy_from(&frames.b_op);
        out.view_mut((row + q + m, row), (nn, xd)).copy_from(&dg);
        row += xd;
    }
    for z in s.zs.iter() {
        let mut d1 = DVector::zeros(m + nn);
        d1.rows_mut(m, nn).copy_from(&z.rows(n, nn)); // (0, v_k)
        let blk = second_block(&d1)?;
        out.view_mut((row + n, q), (nn, m + nn)).copy_from(&blk);
        out.view_mut((row, row), (n, zd)).copy_from(&frames.bbar_op);
        out.view_mut((row + n, row), (nn, zd)).copy_from(&h);
        row += zd;
    }
    Ok(out)
}

fn kernel_rows<T: Scalar>(op: &DMatrix<T>, expected: usize) -> Result<DMatrix<T>> {
    let basis = crate::linalg::kernel_basis(op, cvt::<T>(DEFAULT_RTOL))?;
    if basis.len() != expected {
        return Err(BifError::DegenerateAnchor(format!(
            "bordering construction found a kernel of dimension {}, expected {}",
            basis.len(),
            expected
        )));
    }
    let mut rows = DMatrix::zeros(expected, op.ncols());
    for (r, v) in basis.iter().enumerate() {
        rows.row_mut(r).copy_from(&v.transpose());
    }
    Ok(rows)
}

fn assemble_frames<T: Scalar>(
    p: &ProblemDef<T>,
    anchor: &PointLU<T>,
    a_bars: DMatrix<T>,
    b_bars: DMatrix<T>,
    rank_ambiguous: bool,
) -> Result<Frames<T>> {
    let (q, n) = (a_bars.ncols(), b_bars.ncols());
    let (m, nn) = (p.m, p.n_state);
    let mut frames = Frames {
        q,
        n,
        m,
        n_state: nn,
        a_bars,
        b_bars,
        b_op: DMatrix::zeros(q + m, q + m + nn),
        bbar_op: DMatrix::zeros(n, n + nn),
        theta0: DVector::zeros(q + m),
        basis_qm: DMatrix::identity(q + m, q + m),
        basis_n: DMatrix::identity(n, n),
        rank_ambiguous,
    };
    // borderings: orthonormal kernel bases of DG(x_anchor) and of the
    // H-matrix — the best-conditioned admissible choice
    let dg = dg_matrix(p, &frames, anchor)?;
    frames.b_op = kernel_rows(&dg, q + m)?;
    let h = h_matrix(p, &frames, anchor)?;
    frames.bbar_op = kernel_rows(&h, n)?;
    frames.theta0 = &frames.b_op * frames.anchor_x(anchor);
    // kernel-intersection certificates: the stacked operators must have
    // sigma_min bounded away from zero
    for (name, stacked) in [
        ("[B; DG]", phi_g_matrix(p, &frames, anchor)?),
        ("[Bbar; H]", phi_h_matrix(p, &frames, anchor)?),
    ] {
        let svd = svd_analysis(&stacked)?;
        if svd.sigma_min() <= cvt::<T>(DEFAULT_RTOL) * svd.sigma_max() {
            return Err(BifError::DegenerateAnchor(format!(
                "bordered operator {name} is numerically singular at the anchor"
            )));
        }
    }
    Ok(frames)
}

/// Choose cokernel frames and borderings from thresholded SVD ranks at the
/// anchor. Errors with [`BifError::DegenerateAnchor`] when no kernel
/// deficiency is present (a bifurcation anchor needs `n >= 1`).
pub fn choose_frames<T: Scalar>(p: &ProblemDef<T>, anchor: &PointLU<T>, rtol: T) -> Result<Frames<T>> {
    let df = p.jac_df(anchor)?;
    let dfu = p.jac_du_f(anchor)?;
    let svd_df = svd_analysis(&df)?;
    let svd_dfu = svd_analysis(&dfu)?;
    // common scale with an absolute floor (see classify): a numerically zero
    // operator must count as fully deficient, not full rank on noise
    let scale = if svd_df.sigma_max() > T::one() { svd_df.sigma_max() } else { T::one() };
    let thresh = rtol * scale;
    let rank_ambiguous = svd_df.rank_ambiguous_at(thresh) || svd_dfu.rank_ambiguous_at(thresh);
    let a = svd_df.cokernel_cols(thresh);
    let b = svd_dfu.cokernel_cols(thresh);
    if b.is_empty() {
        return Err(BifError::DegenerateAnchor(
            "D_u F has no kernel deficiency at this anchor (regular point)".into(),
        ));
    }
    let a_bars = if a.is_empty() {
        DMatrix::zeros(p.n_state, 0)
    } else {
        DMatrix::from_columns(&a)
    };
    assemble_frames(p, anchor, a_bars, DMatrix::from_columns(&b), rank_ambiguous)
}

/// Choose frames for a demanded type `(n, q)` regardless of how singular the
/// anchor actually is: the frames are the `q` (resp. `n`) left singular
/// directions of smallest singular value. Used by recovery, where the anchor
/// is only near the singular set.
pub fn choose_frames_with_type<T: Scalar>(
    p: &ProblemDef<T>,
    anchor: &PointLU<T>,
    n: usize,
    q: usize,
) -> Result<Frames<T>> {
    if n < 1 || n > p.n_state || q > p.n_state || q > n {
        return Err(BifError::BadParams(format!(
            "demanded type (n={n}, q={q}) is impossible for state dimension {}",
            p.n_state
        )));
    }
    let svd_df = svd_analysis(&p.jac_df(anchor)?)?;
    let svd_dfu = svd_analysis(&p.jac_du_f(anchor)?)?;
    let nn = p.n_state;
    let mut a_bars = DMatrix::zeros(nn, q);
    for j in 0..q {
        a_bars.column_mut(j).copy_from(&svd_df.left.column(nn - q + j));
    }
    let mut b_bars = DMatrix::zeros(nn, n);
    for k in 0..n {
        b_bars.column_mut(k).copy_from(&svd_dfu.left.column(nn - n + k));
    }
    assemble_frames(p, anchor, a_bars, b_bars, false)
}

/// A random admissible re-choice of frames, borderings, and basis vectors,
/// keeping the anchor: frame columns are recombined by a well-conditioned
/// matrix, borderings perturbed within the admissible class
/// (`B' = R B + C DG(x_anchor)` keeps the kernel intersection trivial),
/// and the `d`-bases replaced by random invertible ones.
pub fn random_admissible_frames<T: Scalar>(
    p: &ProblemDef<T>,
    anchor: &PointLU<T>,
    base: &Frames<T>,
    rng: &mut impl Rng,
) -> Result<Frames<T>> {
    fn rand_mat<T: Scalar>(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<T> {
        DMatrix::<T>::from_fn(r, c, |_, _| cvt::<T>(rng.gen_range(-scale..scale)))
    }
    // well-conditioned invertible square matrix: I + small random
    fn well_cond<T: Scalar>(rng: &mut impl Rng, k: usize) -> DMatrix<T> {
        DMatrix::<T>::identity(k, k) + rand_mat::<T>(rng, k, k, 0.3 / (k.max(1) as f64))
    }

    let mut frames = base.clone();
    if frames.q > 0 {
        frames.a_bars = &base.a_bars * well_cond::<T>(rng, frames.q);
    }
    frames.b_bars = &base.b_bars * well_cond::<T>(rng, frames.n);
    let dg = dg_matrix(p, &frames, anchor)?;
    let h = h_matrix(p, &frames, anchor)?;
    // recompute orthonormal kernel borderings for the new frames, then
    // perturb admissibly
    frames.b_op = kernel_rows(&dg, frames.q + frames.m)?;
    frames.bbar_op = kernel_rows(&h, frames.n)?;
    frames.b_op = well_cond::<T>(rng, frames.q + frames.m) * &frames.b_op
        + rand_mat::<T>(rng, frames.q + frames.m, frames.n_state, 0.2) * &dg;
    frames.bbar_op = well_cond::<T>(rng, frames.n) * &frames.bbar_op
        + rand_mat::<T>(rng, frames.n, frames.n_state, 0.2) * &h;
    frames.basis_qm = well_cond::<T>(rng, frames.q + frames.m);
    frames.basis_n = well_cond::<T>(rng, frames.n);
    frames.theta0 = &frames.b_op * frames.anchor_x(anchor);
    for stacked in [phi_g_matrix(p, &frames, anchor)?, phi_h_matrix(p, &frames, anchor)?] {
        let svd = svd_analysis(&stacked)?;
        if svd.sigma_min() <= cvt::<T>(DEFAULT_RTOL) * svd.sigma_max() {
            return Err(BifError::DegenerateAnchor(
                "random re-choice produced an inadmissible bordering".into(),
            ));
        }
    }
    Ok(frames)
}

/// Norm of the `Phi(x_anchor, .)` block map (used as part of the certificate
/// surrogate for the containing-map derivative bound).
pub fn phi_norm<T: Scalar>(p: &ProblemDef<T>, frames: &Frames<T>, pt: &PointLU<T>) -> Result<T> {
    let g = op_norm(&phi_g_matrix(p, frames, pt)?)?;
    let h = op_norm(&phi_h_matrix(p, frames, pt)?)?;
    Ok(if g > h { g } else { h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{solve, SolveMode};
    use crate::testbeds;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pitchfork_frames() -> (ProblemDef<f64>, Frames<f64>, PointLU<f64>) {
        let p = testbeds::pitchfork::<f64>().problem;
        let anchor = PointLU::new(dvector![0.0], dvector![0.0]);
        let frames = choose_frames(&p, &anchor, DEFAULT_RTOL).unwrap();
        (p, frames, anchor)
    }

    #[test]
    fn pitchfork_frame_shapes() {
        let (_, frames, _) = pitchfork_frames();
        assert_eq!((frames.q, frames.n), (1, 1));
        // 1-dim frames are +-1
        assert_relative_eq!(frames.a_bars[(0, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(frames.b_bars[(0, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_eq!(frames.ext_dim(), 3 + 2 * 3 + 2);
    }

    #[test]
    fn regular_anchor_is_degenerate() {
        let p = testbeds::pitchfork::<f64>().problem;
        // D_u F(1, 0.5) = 1 - 0.75 = 0.25 != 0
        let anchor = PointLU::new(dvector![1.0], dvector![0.5]);
        assert!(matches!(
            choose_frames(&p, &anchor, DEFAULT_RTOL),
            Err(BifError::DegenerateAnchor(_))
        ));
        // the demanded-type variant still succeeds
        assert!(choose_frames_with_type(&p, &anchor, 1, 1).is_ok());
    }

    #[test]
    fn chafee_infante_frames_match_sine_mode() {
        let entry = testbeds::chafee_infante::<f64>(16).unwrap();
        let truth = entry.known_truth.clone().unwrap();
        let frames = choose_frames(&entry.problem, &truth.point, DEFAULT_RTOL).unwrap();
        assert_eq!((frames.q, frames.n), (1, 1));
        let (_, vecs) = testbeds::tridiag_eigen_oracle(16);
        let cos = frames.b_bars.column(0).dot(&vecs[0]).abs();
        assert!(cos > 1.0 - 1e-8, "cosine similarity {cos}");
    }

    #[test]
    fn eval_g_matches_f_at_zero_slack() {
        let (p, frames, _) = pitchfork_frames();
        let pt = PointLU::new(dvector![0.3], dvector![0.7]);
        let x = frames.anchor_x(&pt);
        assert_eq!(eval_g(&p, &frames, &x).unwrap(), p.eval_f(&pt).unwrap());
        // linearity in f: G(x with f) - G(x with 0) = -Abar f exactly
        let f = dvector![1.0];
        let xf = frames.make_x(&f, &pt);
        let diff = eval_g(&p, &frames, &xf).unwrap() - eval_g(&p, &frames, &x).unwrap();
        assert_eq!(diff, -&frames.a_bars * f);
    }

    #[test]
    fn eval_h_hand_cases() {
        let (p, frames, anchor) = pitchfork_frames();
        // z = 0 -> 0
        let z0 = DVector::zeros(frames.zdim());
        assert_eq!(eval_h(&p, &frames, &anchor, &z0).unwrap().amax(), 0.0);
        // at (0,0): D_u F = 0, so H = -e * b
        let z = dvector![0.0, 1.0];
        assert_eq!(eval_h(&p, &frames, &anchor, &z).unwrap().amax(), 0.0);
        // at (1,0): D_u F = 1; with e = v = 1 and b = +-1, |H| = |1 -+ 1|
        let pt1 = PointLU::new(dvector![1.0], dvector![1.0]);
        let z11 = dvector![frames.b_bars[(0, 0)], 1.0]; // e aligned with the frame sign
        let pt_lin = PointLU::new(dvector![1.0], dvector![0.0]);
        let _ = pt1;
        let h = eval_h(&p, &frames, &pt_lin, &z11).unwrap();
        assert_relative_eq!(h[0], 1.0 - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn psi_vanishes_at_anchor() {
        let (p, frames, anchor) = pitchfork_frames();
        let x = frames.anchor_x(&anchor);
        let psi = eval_psi(&p, &frames, &x).unwrap();
        assert!(psi.rows(0, frames.q + frames.m).amax() < 1e-14);
        // linear part of the first block: Psi(x+d) - Psi(x) top = B d
        let d = dvector![0.2, -0.1, 0.4];
        let lhs = eval_psi(&p, &frames, &(x.clone() + &d)).unwrap().rows(0, 2).into_owned();
        let rhs = psi.rows(0, 2) + &frames.b_op * d;
        assert!((lhs - rhs).amax() < 1e-14);
    }

    #[test]
    fn phi_is_linear_and_nonsingular_at_anchor() {
        let (p, frames, anchor) = pitchfork_frames();
        let x = frames.anchor_x(&anchor);
        let mut phi = ExtState::zero(&frames);
        phi.x = dvector![0.1, 0.2, 0.3];
        phi.ys[0] = dvector![-1.0, 0.5, 2.0];
        phi.ys[1] = dvector![0.0, 1.0, -1.0];
        phi.zs[0] = dvector![0.7, -0.2];
        let once = eval_phi(&p, &frames, &x, &phi).unwrap();
        let mut phi3 = phi.clone();
        phi3.x *= 3.0;
        for y in phi3.ys.iter_mut() {
            *y *= 3.0;
        }
        for z in phi3.zs.iter_mut() {
            *z *= 3.0;
        }
        assert!((eval_phi(&p, &frames, &x, &phi3).unwrap() - once * 3.0).amax() < 1e-13);
        // zero maps to zero
        let zero = ExtState::zero(&frames);
        assert_eq!(eval_phi(&p, &frames, &x, &zero).unwrap().amax(), 0.0);
        // square blocks nonsingular
        let svd = svd_analysis(&phi_g_matrix(&p, &frames, &anchor).unwrap()).unwrap();
        assert!(svd.sigma_min() > 1e-8);
        let svd = svd_analysis(&phi_h_matrix(&p, &frames, &anchor).unwrap()).unwrap();
        assert!(svd.sigma_min() > 1e-8);
    }

    #[test]
    fn s_delta_blocks() {
        let (p, frames, anchor) = pitchfork_frames();
        let mut s = ExtState::zero(&frames);
        s.x = frames.anchor_x(&anchor);
        // with y_i = 0, the B y_i - d_i block equals -d_i exactly
        let out = eval_s(&p, &frames, &s).unwrap();
        let xd = frames.xdim();
        assert_eq!(out.rows(xd, 2).into_owned(), dvector![-1.0, 0.0]);
        assert_eq!(out.rows(2 * xd, 2).into_owned(), dvector![0.0, -1.0]);
    }

    #[test]
    fn jac_s_matches_fd() {
        let (p, frames, _) = pitchfork_frames();
        let mut s = ExtState::zero(&frames);
        s.x = dvector![0.1, 0.2, 0.3];
        s.ys[0] = dvector![0.5, -0.4, 0.8];
        s.ys[1] = dvector![-0.2, 0.6, 0.1];
        s.zs[0] = dvector![0.3, -0.9];
        let jac = jac_s(&p, &frames, &s).unwrap();
        // central FD of eval_s
        let flat = s.flatten();
        let hstep = 1e-6 * (1.0 + flat.amax());
        let dim = frames.ext_dim();
        let mut fd = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let mut up = flat.clone();
            up[j] += hstep;
            let mut dn = flat.clone();
            dn[j] -= hstep;
            let fu = eval_s(&p, &frames, &ExtState::unflatten(&frames, &up).unwrap()).unwrap();
            let fd_ = eval_s(&p, &frames, &ExtState::unflatten(&frames, &dn).unwrap()).unwrap();
            fd.column_mut(j).copy_from(&((fu - fd_) / (2.0 * hstep)));
        }
        let scale = jac.amax().max(1.0);
        assert!((jac - fd).amax() / scale < 1e-5);
    }

    #[test]
    fn jac_s_independent_of_slack() {
        let (p, frames, _) = pitchfork_frames();
        let mut s = ExtState::zero(&frames);
        s.x = dvector![0.3, 0.2, 0.3];
        s.ys[0] = dvector![0.5, -0.4, 0.8];
        s.zs[0] = dvector![0.3, -0.9];
        let j1 = jac_s(&p, &frames, &s).unwrap();
        s.x[0] = -2.0; // perturb f only
        let j2 = jac_s(&p, &frames, &s).unwrap();
        assert_eq!(j1, j2);
    }

    #[test]
    fn jac_s_block_diagonal_for_linear_problem() {
        // linear F: all second-derivative couplings vanish
        let p = ProblemDef::new("linear", 1, 2, |pt: &PointLU<f64>| {
            Ok(dvector![pt.u[0] - pt.lambda[0], 0.0])
        });
        let anchor = PointLU::new(dvector![0.0], dvector![0.0, 0.0]);
        let frames = choose_frames(&p, &anchor, DEFAULT_RTOL).unwrap();
        let mut s = ExtState::zero(&frames);
        s.x = frames.anchor_x(&anchor);
        for y in s.ys.iter_mut() {
            y.fill(0.5);
        }
        for z in s.zs.iter_mut() {
            z.fill(-0.3);
        }
        let jac = jac_s(&p, &frames, &s).unwrap();
        // coupling region: rows of y/z blocks, columns of x beyond the
        // diagonal blocks must be zero
        let xd = frames.xdim();
        let coupling = jac.view((xd, 0), (frames.ext_dim() - xd, xd));
        assert!(coupling.amax() < 1e-9);
    }

    #[test]
    fn direction_lemma_on_pitchfork() {
        // Phi_G, Phi_H nonsingular at the bifurcation point => DS nonsingular
        // at the solved extended state (and the converse via sigma checks)
        let (p, frames, anchor) = pitchfork_frames();
        let mut s = ExtState::zero(&frames);
        s.x = frames.anchor_x(&anchor);
        let phig = phi_g_matrix(&p, &frames, &anchor).unwrap();
        let phih = phi_h_matrix(&p, &frames, &anchor).unwrap();
        for i in 0..frames.q + frames.m {
            let mut rhs = DVector::zeros(frames.xdim());
            rhs.rows_mut(0, frames.q + frames.m)
                .copy_from(&frames.basis_qm.column(i).into_owned());
            s.ys[i] = solve(&phig, &rhs, SolveMode::Exact).unwrap();
        }
        for k in 0..frames.n {
            let mut rhs = DVector::zeros(frames.zdim());
            rhs.rows_mut(0, frames.n).copy_from(&frames.basis_n.column(k).into_owned());
            s.zs[k] = solve(&phih, &rhs, SolveMode::Exact).unwrap();
        }
        assert!(eval_s(&p, &frames, &s).unwrap().amax() < 1e-12);
        let svd = svd_analysis(&jac_s(&p, &frames, &s).unwrap()).unwrap();
        assert!(svd.sigma_min() > 1e-8, "sigma_min(DS) = {}", svd.sigma_min());
    }

    #[test]
    fn random_frames_stay_admissible() {
        let entry = testbeds::chafee_infante::<f64>(8).unwrap();
        let truth = entry.known_truth.clone().unwrap();
        let base = choose_frames(&entry.problem, &truth.point, DEFAULT_RTOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let f = random_admissible_frames(&entry.problem, &truth.point, &base, &mut rng).unwrap();
            assert_eq!((f.q, f.n), (base.q, base.n));
        }
    }

    #[test]
    fn ext_state_roundtrip() {
        let (_, frames, _) = pitchfork_frames();
        let mut s = ExtState::zero(&frames);
        s.x = dvector![1.0, 2.0, 3.0];
        s.ys[1] = dvector![4.0, 5.0, 6.0];
        s.zs[0] = dvector![7.0, 8.0];
        let back = ExtState::unflatten(&frames, &s.flatten()).unwrap();
        assert_eq!(back, s);
    }
}
