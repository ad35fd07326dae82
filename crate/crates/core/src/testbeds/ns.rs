//! Desk-scale staggered-grid (MAC) Stokes solver and the augmented
//! Navier–Stokes composition it feeds.
//!
//! Velocities live on cell faces, pressure at cell centers, all on the unit
//! square with homogeneous velocity boundary. The Stokes solve realizes the
//! linear operator `T_S` (body force -> velocity and zero-mean pressure);
//! the nonlinear map is the fixed-point form
//!
//! ```text
//! FF(lambda, p, u, q) = [ p - q/lambda ;
//!                         u + vel T_S( lambda (u . grad u - f) ) ;
//!                         q + lambda pres T_S( lambda (u . grad u - f) ) ]
//! ```
//!
//! with the auxiliary variable `q = lambda p`. Everything is assembled dense
//! and LU-factorized once per resolution; the factorization cache is
//! read-only after first build.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, Dyn};
use once_cell::sync::Lazy;

use crate::error::{BifError, Result};
use crate::problem::{PointLU, ProblemDef};
use crate::scalar::{cvt, to_f64, Scalar};

/// Staggered-grid layout for an `n x n` cell mesh on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(BifError::BadParams(format!("grid needs res >= 4, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Interior x-velocity faces: `(n-1) * n`.
    pub fn nu(&self) -> usize {
        (self.n - 1) * self.n
    }

    /// Interior y-velocity faces: `n * (n-1)`.
    pub fn nv(&self) -> usize {
        self.n * (self.n - 1)
    }

    pub fn np(&self) -> usize {
        self.n * self.n
    }

    /// Velocity unknowns (u faces then v faces).
    pub fn nvel(&self) -> usize {
        self.nu() + self.nv()
    }

    /// u-face index, `i in 1..=n-1`, `j in 0..n`.
    fn ui(&self, i: usize, j: usize) -> usize {
        (i - 1) * self.n + j
    }

    /// v-face index within the v block, `i in 0..n`, `j in 1..=n-1`.
    fn vi(&self, i: usize, j: usize) -> usize {
        i * (self.n - 1) + (j - 1)
    }

    fn pi(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    fn u_xy(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        (i as f64 * h, (j as f64 + 0.5) * h)
    }

    fn v_xy(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        ((i as f64 + 0.5) * h, j as f64 * h)
    }
}

struct StokesSolver {
    grid: Grid,
    lu: nalgebra::linalg::LU<f64, Dyn, Dyn>,
}

static SOLVER_CACHE: Lazy<Mutex<HashMap<usize, Arc<StokesSolver>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Assemble the saddle-point matrix `[A G 0; D 0 1; 0 1^T 0]` with ghost-cell
/// no-slip for tangential velocity and a scalar multiplier pinning the
/// pressure mean.
fn assemble(grid: Grid) -> DMatrix<f64> {
    let n = grid.n;
    let h = grid.h();
    let ih2 = 1.0 / (h * h);
    let ih = 1.0 / h;
    let (nu, nv, np) = (grid.nu(), grid.nv(), grid.np());
    let msize = nu + nv + np + 1;
    let mut k = DMatrix::<f64>::zeros(msize, msize);

    // x-momentum: -Lap u + dp/dx
    for i in 1..n {
        for j in 0..n {
            let r = grid.ui(i, j);
            let mut diag = 4.0;
            if i > 1 {
                k[(r, grid.ui(i - 1, j))] = -ih2;
            }
            if i + 1 < n {
                k[(r, grid.ui(i + 1, j))] = -ih2;
            }
            if j > 0 {
                k[(r, grid.ui(i, j - 1))] = -ih2;
            } else {
                diag += 1.0; // ghost reflection at the bottom wall
            }
            if j + 1 < n {
                k[(r, grid.ui(i, j + 1))] = -ih2;
            } else {
                diag += 1.0;
            }
            k[(r, r)] = diag * ih2;
            k[(r, nu + nv + grid.pi(i, j))] = ih;
            k[(r, nu + nv + grid.pi(i - 1, j))] = -ih;
        }
    }
    // y-momentum: -Lap v + dp/dy
    for i in 0..n {
        for j in 1..n {
            let r = nu + grid.vi(i, j);
            let mut diag = 4.0;
            if j > 1 {
                k[(r, nu + grid.vi(i, j - 1))] = -ih2;
            }
            if j + 1 < n {
                k[(r, nu + grid.vi(i, j + 1))] = -ih2;
            }
            if i > 0 {
                k[(r, nu + grid.vi(i - 1, j))] = -ih2;
            } else {
                diag += 1.0;
            }
            if i + 1 < n {
                k[(r, nu + grid.vi(i + 1, j))] = -ih2;
            } else {
                diag += 1.0;
            }
            k[(r, r)] = diag * ih2;
            k[(r, nu + nv + grid.pi(i, j))] = ih;
            k[(r, nu + nv + grid.pi(i, j - 1))] = -ih;
        }
    }
    // continuity per cell, with the mean-pressure multiplier
    for i in 0..n {
        for j in 0..n {
            let r = nu + nv + grid.pi(i, j);
            if i + 1 < n {
                k[(r, grid.ui(i + 1, j))] = ih;
            }
            if i >= 1 {
                k[(r, grid.ui(i, j))] = -ih;
            }
            if j + 1 < n {
                k[(r, nu + grid.vi(i, j + 1))] = ih;
            }
            if j >= 1 {
                k[(r, nu + grid.vi(i, j))] = -ih;
            }
            k[(r, msize - 1)] = 1.0;
            k[(msize - 1, r)] = 1.0; // zero-mean pressure row
        }
    }
    k
}

fn solver(res: usize) -> Result<Arc<StokesSolver>> {
    let mut cache = SOLVER_CACHE.lock().expect("stokes cache poisoned");
    if let Some(s) = cache.get(&res) {
        return Ok(Arc::clone(s));
    }
    let grid = Grid::new(res)?;
    let k = assemble(grid);
    let lu = k.lu();
    if !lu.is_invertible() {
        return Err(BifError::SingularOperator { sigma_min: 0.0 });
    }
    let s = Arc::new(StokesSolver { grid, lu });
    cache.insert(res, Arc::clone(&s));
    Ok(s)
}

/// Solve the discrete Stokes problem with body force `f` on the velocity
/// faces. Returns `(velocity, pressure)` with zero-mean pressure.
pub fn ns_stokes_solve(res: usize, f: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let s = solver(res)?;
    let grid = s.grid;
    if f.len() != grid.nvel() {
        return Err(BifError::DimensionMismatch(format!(
            "force has {} entries, grid res {} needs {}",
            f.len(),
            res,
            grid.nvel()
        )));
    }
    let msize = grid.nvel() + grid.np() + 1;
    let mut rhs = DVector::<f64>::zeros(msize);
    rhs.rows_mut(0, grid.nvel()).copy_from(f);
    let sol = s.lu.solve(&rhs).ok_or(BifError::SingularOperator { sigma_min: 0.0 })?;
    let vel = sol.rows(0, grid.nvel()).into_owned();
    let mut pres = sol.rows(grid.nvel(), grid.np()).into_owned();
    let mean = pres.sum() / grid.np() as f64;
    pres.add_scalar_mut(-mean);
    Ok((vel, pres))
}

/// Discrete divergence of a face-velocity field, one value per cell.
pub fn discrete_divergence(res: usize, vel: &DVector<f64>) -> Result<DVector<f64>> {
    let grid = Grid::new(res)?;
    let n = grid.n;
    let ih = 1.0 / grid.h();
    let nu = grid.nu();
    let mut div = DVector::<f64>::zeros(grid.np());
    for i in 0..n {
        for j in 0..n {
            let mut d = 0.0;
            if i + 1 < n {
                d += vel[grid.ui(i + 1, j)];
            }
            if i >= 1 {
                d -= vel[grid.ui(i, j)];
            }
            if j + 1 < n {
                d += vel[nu + grid.vi(i, j + 1)];
            }
            if j >= 1 {
                d -= vel[nu + grid.vi(i, j)];
            }
            div[grid.pi(i, j)] = d * ih;
        }
    }
    Ok(div)
}

fn u_at(grid: Grid, vel: &DVector<f64>, i: isize, j: isize, center: f64) -> f64 {
    let n = grid.n as isize;
    if i <= 0 || i >= n {
        return 0.0; // x-boundary faces carry the no-penetration value
    }
    if j < 0 || j >= n {
        return -center; // ghost reflection across the no-slip wall
    }
    vel[grid.ui(i as usize, j as usize)]
}

fn v_at(grid: Grid, vel: &DVector<f64>, i: isize, j: isize, center: f64) -> f64 {
    let n = grid.n as isize;
    if j <= 0 || j >= n {
        return 0.0;
    }
    if i < 0 || i >= n {
        return -center;
    }
    vel[grid.nu() + grid.vi(i as usize, j as usize)]
}

/// Discrete advection `(trans . grad) field` on the staggered grid; bilinear
/// in its two arguments.
pub fn advect(res: usize, trans: &DVector<f64>, field: &DVector<f64>) -> Result<DVector<f64>> {
    let grid = Grid::new(res)?;
    let n = grid.n;
    let nu = grid.nu();
    let inv2h = 0.5 / grid.h();
    let mut out = DVector::<f64>::zeros(grid.nvel());
    for i in 1..n {
        for j in 0..n {
            let (ii, jj) = (i as isize, j as isize);
            let fc = field[grid.ui(i, j)];
            let dudx = (u_at(grid, field, ii + 1, jj, fc) - u_at(grid, field, ii - 1, jj, fc)) * inv2h;
            let dudy = (u_at(grid, field, ii, jj + 1, fc) - u_at(grid, field, ii, jj - 1, fc)) * inv2h;
            let tc = trans[grid.ui(i, j)];
            let vbar = 0.25
                * (v_at(grid, trans, ii - 1, jj, 0.0)
                    + v_at(grid, trans, ii, jj, 0.0)
                    + v_at(grid, trans, ii - 1, jj + 1, 0.0)
                    + v_at(grid, trans, ii, jj + 1, 0.0));
            out[grid.ui(i, j)] = tc * dudx + vbar * dudy;
        }
    }
    for i in 0..n {
        for j in 1..n {
            let (ii, jj) = (i as isize, j as isize);
            let fc = field[nu + grid.vi(i, j)];
            let dvdx = (v_at(grid, field, ii + 1, jj, fc) - v_at(grid, field, ii - 1, jj, fc)) * inv2h;
            let dvdy = (v_at(grid, field, ii, jj + 1, fc) - v_at(grid, field, ii, jj - 1, fc)) * inv2h;
            let tc = trans[nu + grid.vi(i, j)];
            let ubar = 0.25
                * (u_at(grid, trans, ii, jj - 1, 0.0)
                    + u_at(grid, trans, ii + 1, jj - 1, 0.0)
                    + u_at(grid, trans, ii, jj, 0.0)
                    + u_at(grid, trans, ii + 1, jj, 0.0));
            out[nu + grid.vi(i, j)] = ubar * dvdx + tc * dvdy;
        }
    }
    Ok(out)
}

// Manufactured fields: divergence-free velocity from the stream function
// psi = (1/pi) sin^2(pi x) sin^2(pi y), pressure cos(pi x) cos(pi y).

fn u_star(x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    PI * (PI * x).sin().powi(2) * (2.0 * PI * y).sin()
}

fn v_star(x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    -PI * (2.0 * PI * x).sin() * (PI * y).sin().powi(2)
}

fn p_star(x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    (PI * x).cos() * (PI * y).cos()
}

/// Body force `-Lap u* + grad p*` of the manufactured Stokes solution.
fn force_star(x: f64, y: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    let pi3 = PI.powi(3);
    let lap_u = 2.0 * pi3 * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()
        - 4.0 * pi3 * (PI * x).sin().powi(2) * (2.0 * PI * y).sin();
    let lap_v = -2.0 * pi3 * (2.0 * PI * y).cos() * (2.0 * PI * x).sin()
        + 4.0 * pi3 * (PI * y).sin().powi(2) * (2.0 * PI * x).sin();
    let dpx = -PI * (PI * x).sin() * (PI * y).cos();
    let dpy = -PI * (PI * x).cos() * (PI * y).sin();
    (-lap_u + dpx, -lap_v + dpy)
}

fn sample_faces(res: usize, fu: impl Fn(f64, f64) -> f64, fv: impl Fn(f64, f64) -> f64) -> DVector<f64> {
    let grid = Grid::new(res).expect("res checked by caller");
    let n = grid.n;
    let mut out = DVector::<f64>::zeros(grid.nvel());
    for i in 1..n {
        for j in 0..n {
            let (x, y) = grid.u_xy(i, j);
            out[grid.ui(i, j)] = fu(x, y);
        }
    }
    for i in 0..n {
        for j in 1..n {
            let (x, y) = grid.v_xy(i, j);
            out[grid.nu() + grid.vi(i, j)] = fv(x, y);
        }
    }
    out
}

/// Manufactured velocity sampled on the faces of `res`.
pub fn manufactured_velocity(res: usize) -> DVector<f64> {
    sample_faces(res, u_star, v_star)
}

/// Manufactured pressure sampled at cell centers, mean removed.
pub fn manufactured_pressure(res: usize) -> DVector<f64> {
    let grid = Grid::new(res).expect("res checked by caller");
    let h = grid.h();
    let mut p = DVector::from_fn(grid.np(), |k, _| {
        let (i, j) = (k / grid.n, k % grid.n);
        p_star((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)
    });
    let mean = p.sum() / grid.np() as f64;
    p.add_scalar_mut(-mean);
    p
}

/// Manufactured body force sampled on the faces of `res`. This is the fixed
/// smooth forcing used by the registry entry and the transfer study.
pub fn manufactured_forcing(res: usize) -> DVector<f64> {
    sample_faces(res, |x, y| force_star(x, y).0, |x, y| force_star(x, y).1)
}

/// Piecewise-linear interpolation of a face field at an arbitrary point,
/// honoring the homogeneous boundary values.
fn sample_velocity_at(grid: Grid, vel: &DVector<f64>, x: f64, y: f64, component: usize) -> f64 {
    let n = grid.n;
    let h = grid.h();
    // knots along the "in-face" axis: 0, h, ..., 1 (boundary zeros included);
    // knots along the staggered axis: 0, h/2, 3h/2, ..., 1 (wall zeros)
    let value = |fi: isize, cj: isize| -> f64 {
        if component == 0 {
            u_at(grid, vel, fi, cj, 0.0)
        } else {
            v_at(grid, vel, cj, fi, 0.0)
        }
    };
    let (a, b) = if component == 0 { (x, y) } else { (y, x) };
    // in-face axis
    let fa = (a / h).clamp(0.0, n as f64);
    let i0 = (fa.floor() as isize).min(n as isize - 1).max(0);
    let ta = fa - i0 as f64;
    // staggered axis with wall half-cells
    let centers = |j: isize| -> f64 { (j as f64 + 0.5) * h };
    let (j0, tb) = if b <= centers(0) {
        // between wall (value 0) and the first center
        (-1isize, (b / centers(0)).clamp(0.0, 1.0))
    } else if b >= centers(n as isize - 1) {
        let t = ((b - centers(n as isize - 1)) / (1.0 - centers(n as isize - 1))).clamp(0.0, 1.0);
        (n as isize - 1, t)
    } else {
        let f = (b / h - 0.5).floor();
        let j = f as isize;
        (j, (b / h - 0.5) - f)
    };
    let wall_lo = j0 < 0;
    let wall_hi = j0 + 1 > n as isize - 1;
    let v00 = if wall_lo { 0.0 } else { value(i0, j0) };
    let v10 = if wall_lo { 0.0 } else { value(i0 + 1, j0) };
    let v01 = if wall_hi { 0.0 } else { value(i0, j0 + 1) };
    let v11 = if wall_hi { 0.0 } else { value(i0 + 1, j0 + 1) };
    (1.0 - ta) * ((1.0 - tb) * v00 + tb * v01) + ta * ((1.0 - tb) * v10 + tb * v11)
}

/// Transfer a face-velocity field between resolutions by sampling the
/// piecewise-linear interpolant at the target faces. Coarse-to-fine is the
/// embedding, fine-to-coarse the restriction.
pub fn transfer_velocity(from_res: usize, vel: &DVector<f64>, to_res: usize) -> Result<DVector<f64>> {
    let from = Grid::new(from_res)?;
    let to = Grid::new(to_res)?;
    if vel.len() != from.nvel() {
        return Err(BifError::DimensionMismatch(format!(
            "field has {} entries, res {} needs {}",
            vel.len(),
            from_res,
            from.nvel()
        )));
    }
    let n = to.n;
    let mut out = DVector::<f64>::zeros(to.nvel());
    for i in 1..n {
        for j in 0..n {
            let (x, y) = to.u_xy(i, j);
            out[to.ui(i, j)] = sample_velocity_at(from, vel, x, y, 0);
        }
    }
    for i in 0..n {
        for j in 1..n {
            let (x, y) = to.v_xy(i, j);
            out[to.nu() + to.vi(i, j)] = sample_velocity_at(from, vel, x, y, 1);
        }
    }
    Ok(out)
}

/// Augmented state layout: pressure block, velocity block, `q` block.
pub fn ns_state_dim(res: usize) -> Result<usize> {
    let grid = Grid::new(res)?;
    Ok(2 * grid.np() + grid.nvel())
}

fn split_state(grid: Grid, state: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (np, nvel) = (grid.np(), grid.nvel());
    if state.len() != 2 * np + nvel {
        return Err(BifError::DimensionMismatch(format!(
            "state has {} entries, expected {}",
            state.len(),
            2 * np + nvel
        )));
    }
    Ok((
        state.rows(0, np).into_owned(),
        state.rows(np, nvel).into_owned(),
        state.rows(np + nvel, np).into_owned(),
    ))
}

fn ns_eval_inner(res: usize, lambda: f64, state: &DVector<f64>, forcing: &DVector<f64>) -> Result<DVector<f64>> {
    if lambda <= 0.0 {
        return Err(BifError::EvalFailure(format!(
            "the composed map is defined for lambda > 0 only, got {lambda}"
        )));
    }
    let grid = Grid::new(res)?;
    let (p, w, q) = split_state(grid, state)?;
    let g = (advect(res, &w, &w)? - forcing) * lambda;
    let (vel_s, pres_s) = ns_stokes_solve(res, &g)?;
    let np = grid.np();
    let mut out = DVector::<f64>::zeros(state.len());
    out.rows_mut(0, np).copy_from(&(&p - &q / lambda));
    out.rows_mut(np, grid.nvel()).copy_from(&(&w + vel_s));
    out.rows_mut(np + grid.nvel(), np).copy_from(&(&q + pres_s * lambda));
    Ok(out)
}

/// Evaluate the augmented map at `(lambda, state)` with the registry's fixed
/// smooth forcing.
#[allow(non_snake_case)]
pub fn ns_F_eval(res: usize, lambda: f64, state: &DVector<f64>) -> Result<DVector<f64>> {
    ns_eval_inner(res, lambda, state, &manufactured_forcing(res))
}

/// Exact directional derivative of the augmented map; `T_S` is linear and
/// advection bilinear, so one extra Stokes solve per direction suffices.
fn ns_directional(
    res: usize,
    lambda: f64,
    state: &DVector<f64>,
    forcing: &DVector<f64>,
    dlambda: f64,
    dstate: &DVector<f64>,
) -> Result<DVector<f64>> {
    let grid = Grid::new(res)?;
    let (_, w, q) = split_state(grid, state)?;
    let (dp, dw, dq) = split_state(grid, dstate)?;
    let adv = advect(res, &w, &w)?;
    let g = (&adv - forcing) * lambda;
    let (_, pres_s) = ns_stokes_solve(res, &g)?;
    let dg = (&adv - forcing) * dlambda + (advect(res, &dw, &w)? + advect(res, &w, &dw)?) * lambda;
    let (dvel, dpres) = ns_stokes_solve(res, &dg)?;
    let np = grid.np();
    let mut out = DVector::<f64>::zeros(state.len());
    out.rows_mut(0, np)
        .copy_from(&(&dp - &dq / lambda + &q * (dlambda / (lambda * lambda))));
    out.rows_mut(np, grid.nvel()).copy_from(&(&dw + dvel));
    out.rows_mut(np + grid.nvel(), np)
        .copy_from(&(&dq + pres_s * dlambda + dpres * lambda));
    Ok(out)
}

/// The augmented composition as a [`ProblemDef`]: `m = 1` (lambda),
/// state `(p, u, q)`, analytic Jacobian via per-column Stokes solves.
pub fn ns_problem<T: Scalar>(res: usize) -> Result<ProblemDef<T>> {
    let dim = ns_state_dim(res)?;
    let forcing = manufactured_forcing(res);
    let forcing_jac = forcing.clone();
    let name = format!("ns_lite({res})");
    let to64 = |v: &DVector<T>| DVector::<f64>::from_fn(v.len(), |i, _| to_f64(v[i]));
    let from64 = |v: &DVector<f64>| DVector::<T>::from_fn(v.len(), |i, _| cvt::<T>(v[i]));
    Ok(ProblemDef::new(&name, 1, dim, move |pt: &PointLU<T>| {
        let out = ns_eval_inner(res, to_f64(pt.lambda[0]), &to64(&pt.u), &forcing)?;
        Ok(from64(&out))
    })
    .with_jac(move |pt: &PointLU<T>| {
        let lambda = to_f64(pt.lambda[0]);
        let state = to64(&pt.u);
        let mut jac = DMatrix::<T>::zeros(dim, dim + 1);
        let zero = DVector::<f64>::zeros(dim);
        let col = ns_directional(res, lambda, &state, &forcing_jac, 1.0, &zero)?;
        jac.column_mut(0).copy_from(&from64(&col));
        for j in 0..dim {
            let mut d = DVector::<f64>::zeros(dim);
            d[j] = 1.0;
            let col = ns_directional(res, lambda, &state, &forcing_jac, 0.0, &d)?;
            jac.column_mut(j + 1).copy_from(&from64(&col));
        }
        Ok(jac)
    }))
}

/// One row of the grid-transfer study.
#[derive(Debug, Clone)]
pub struct NsStudyRow {
    pub res: usize,
    /// Round-trip projection error of the manufactured velocity.
    pub proj_err: f64,
    /// `max |vel T_S f - E vel T_{S,h} f|` for the fixed smooth forcing.
    pub stokes_gap: f64,
    /// Advection-term gap between the grids on the manufactured velocity.
    pub nonlin_shift: f64,
    /// Aggregate first-derivative constant (all three summands).
    pub eta2: f64,
    /// Aggregate partial-derivative constant (operator summands only).
    pub eta4: f64,
}

/// Compare coarse Stokes operators against a fine reference on fixed smooth
/// data, reporting the three summands separately per resolution.
pub fn ns_transfer_study(res_fine: usize, res_list: &[usize]) -> Result<Vec<NsStudyRow>> {
    if res_list.iter().any(|&r| r > res_fine) {
        return Err(BifError::BadParams(
            "every study resolution must be at most the fine one".into(),
        ));
    }
    let w_fine = manufactured_velocity(res_fine);
    let f_fine = manufactured_forcing(res_fine);
    let (ts_fine, _) = ns_stokes_solve(res_fine, &f_fine)?;
    let adv_fine = advect(res_fine, &w_fine, &w_fine)?;
    let mut rows = Vec::with_capacity(res_list.len());
    for &res in res_list {
        let restricted = transfer_velocity(res_fine, &w_fine, res)?;
        let round_trip = transfer_velocity(res, &restricted, res_fine)?;
        let proj_err = (&w_fine - round_trip).amax();

        let (ts_c, _) = ns_stokes_solve(res, &manufactured_forcing(res))?;
        let stokes_gap = (&ts_fine - transfer_velocity(res, &ts_c, res_fine)?).amax();

        let w_c = manufactured_velocity(res);
        let adv_c = advect(res, &w_c, &w_c)?;
        let nonlin_shift = (&adv_fine - transfer_velocity(res, &adv_c, res_fine)?).amax();

        rows.push(NsStudyRow {
            res,
            proj_err,
            stokes_gap,
            nonlin_shift,
            eta2: proj_err + stokes_gap + nonlin_shift,
            eta4: stokes_gap + nonlin_shift,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{solve, SolveMode};

    #[test]
    fn zero_force_zero_solution() {
        let grid = Grid::new(6).unwrap();
        let f = DVector::<f64>::zeros(grid.nvel());
        let (vel, pres) = ns_stokes_solve(6, &f).unwrap();
        assert!(vel.amax() < 1e-13);
        assert!(pres.amax() < 1e-13);
    }

    #[test]
    fn stokes_divergence_and_mean() {
        for res in [6usize, 8] {
            let f = manufactured_forcing(res);
            let (vel, pres) = ns_stokes_solve(res, &f).unwrap();
            let div = discrete_divergence(res, &vel).unwrap();
            assert!(div.amax() < 1e-10, "div = {} at res {res}", div.amax());
            assert!(pres.sum().abs() / (pres.len() as f64) < 1e-12);
        }
    }

    #[test]
    fn manufactured_convergence() {
        let mut prev = f64::INFINITY;
        for res in [6usize, 8, 12, 16] {
            let f = manufactured_forcing(res);
            let (vel, _) = ns_stokes_solve(res, &f).unwrap();
            let err = (vel - manufactured_velocity(res)).amax();
            assert!(err < prev, "error {err} not below {prev} at res {res}");
            prev = err;
        }
    }

    #[test]
    fn manufactured_velocity_divergence_free() {
        let div = discrete_divergence(16, &manufactured_velocity(16)).unwrap();
        // discretely divergence-free only up to truncation error
        assert!(div.amax() < 0.2);
    }

    #[test]
    fn rest_state_with_zero_forcing() {
        let res = 6;
        let dim = ns_state_dim(res).unwrap();
        let grid = Grid::new(res).unwrap();
        let out = ns_eval_inner(res, 0.7, &DVector::zeros(dim), &DVector::zeros(grid.nvel())).unwrap();
        assert_eq!(out.amax(), 0.0);
    }

    #[test]
    fn lambda_must_be_positive() {
        let dim = ns_state_dim(6).unwrap();
        assert!(matches!(
            ns_F_eval(6, 0.0, &DVector::zeros(dim)),
            Err(BifError::EvalFailure(_))
        ));
        assert!(matches!(
            ns_F_eval(6, -1.0, &DVector::zeros(dim)),
            Err(BifError::EvalFailure(_))
        ));
    }

    #[test]
    fn advection_is_bilinear() {
        let res = 6;
        let grid = Grid::new(res).unwrap();
        let a = DVector::from_fn(grid.nvel(), |i, _| (i as f64 * 0.17).sin());
        let b = DVector::from_fn(grid.nvel(), |i, _| (i as f64 * 0.05 + 1.0).cos());
        let lh = advect(res, &(&a * 2.0), &b).unwrap();
        let rh = advect(res, &a, &b).unwrap() * 2.0;
        assert!((lh - rh).amax() < 1e-12);
        let sum_arg = advect(res, &a, &(&b + &a)).unwrap();
        let split = advect(res, &a, &b).unwrap() + advect(res, &a, &a).unwrap();
        assert!((sum_arg - split).amax() < 1e-12);
    }

    #[test]
    fn fd_check_on_augmented_map() {
        let res = 6;
        let p = ns_problem::<f64>(res).unwrap();
        let dim = ns_state_dim(res).unwrap();
        let pt = PointLU::new(
            DVector::from_element(1, 0.8),
            DVector::from_fn(dim, |i, _| 0.01 * ((i as f64) * 0.37).sin()),
        );
        let err = p.fd_check(&pt).unwrap();
        assert!(err < 1e-6, "fd_check = {err}");
    }

    #[test]
    fn newton_zero_satisfies_consistency() {
        // solve FF = 0 at small lambda by Newton, then check p = q/lambda
        let res = 6;
        let lambda = 0.2;
        let p = ns_problem::<f64>(res).unwrap();
        let dim = ns_state_dim(res).unwrap();
        let mut state = DVector::<f64>::zeros(dim);
        for _ in 0..20 {
            let pt = PointLU::new(DVector::from_element(1, lambda), state.clone());
            let r = p.eval_f(&pt).unwrap();
            if r.amax() < 1e-13 {
                break;
            }
            let jac = p.jac_df(&pt).unwrap().columns(1, dim).into_owned();
            let step = solve(&jac, &r, SolveMode::Exact).unwrap();
            state -= step;
        }
        let pt = PointLU::new(DVector::from_element(1, lambda), state.clone());
        assert!(p.eval_f(&pt).unwrap().amax() < 1e-12);
        let grid = Grid::new(res).unwrap();
        let pres = state.rows(0, grid.np());
        let q = state.rows(grid.np() + grid.nvel(), grid.np());
        assert!((pres - q / lambda).amax() < 1e-12);
    }

    #[test]
    fn transfer_identity_row_vanishes() {
        let rows = ns_transfer_study(8, &[8]).unwrap();
        assert!(rows[0].proj_err < 1e-13);
        assert!(rows[0].stokes_gap < 1e-13);
        assert!(rows[0].nonlin_shift < 1e-13);
    }

    #[test]
    fn transfer_gaps_decrease() {
        let rows = ns_transfer_study(16, &[6, 8, 12]).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].stokes_gap < pair[0].stokes_gap);
            assert!(pair[1].eta4 < pair[0].eta4);
            assert!(pair[1].eta2 < pair[0].eta2);
        }
    }
}
