//! Registry of concrete test problems with known ground truth: algebraic
//! normal forms, the 1D Chafee–Infante finite-difference system, and a
//! desk-scale staggered-grid Stokes/Navier–Stokes composition.

pub mod ns;

use nalgebra::{DMatrix, DVector};

use crate::error::{BifError, Result};
use crate::problem::{PointLU, ProblemDef};
use crate::scalar::{cvt, Scalar};

/// Ground-truth annotation for a registry entry.
#[derive(Debug, Clone)]
pub struct KnownTruth<T: Scalar> {
    pub point: PointLU<T>,
    pub type_n: usize,
    pub type_q: usize,
    pub oracle: String,
}

/// A named problem with optional known truth.
#[derive(Debug, Clone)]
pub struct RegistryEntry<T: Scalar> {
    pub name: String,
    pub problem: ProblemDef<T>,
    pub known_truth: Option<KnownTruth<T>>,
}

/// `F(lambda, u) = lambda*u - u^3`, the pitchfork normal form.
pub fn pitchfork<T: Scalar>() -> RegistryEntry<T> {
    let three = cvt::<T>(3.0);
    let problem = ProblemDef::new("pitchfork", 1, 1, |p: &PointLU<T>| {
        let (l, u) = (p.lambda[0], p.u[0]);
        Ok(DVector::from_element(1, l * u - u * u * u))
    })
    .with_jac(move |p: &PointLU<T>| {
        let (l, u) = (p.lambda[0], p.u[0]);
        Ok(DMatrix::from_row_slice(1, 2, &[u, l - three * u * u]))
    });
    RegistryEntry {
        name: "pitchfork".into(),
        problem,
        known_truth: Some(KnownTruth {
            point: PointLU::new(DVector::zeros(1), DVector::zeros(1)),
            type_n: 1,
            type_q: 1,
            oracle: "DF(0,0) is the zero map on R^2 -> R^1".into(),
        }),
    }
}

/// `F(lambda, u) = lambda*u - u^2`, the transcritical normal form.
pub fn transcritical<T: Scalar>() -> RegistryEntry<T> {
    let two = cvt::<T>(2.0);
    let problem = ProblemDef::new("transcritical", 1, 1, |p: &PointLU<T>| {
        let (l, u) = (p.lambda[0], p.u[0]);
        Ok(DVector::from_element(1, l * u - u * u))
    })
    .with_jac(move |p: &PointLU<T>| {
        let (l, u) = (p.lambda[0], p.u[0]);
        Ok(DMatrix::from_row_slice(1, 2, &[u, l - two * u]))
    });
    RegistryEntry {
        name: "transcritical".into(),
        problem,
        known_truth: Some(KnownTruth {
            point: PointLU::new(DVector::zeros(1), DVector::zeros(1)),
            type_n: 1,
            type_q: 1,
            oracle: "DF(0,0) is the zero map".into(),
        }),
    }
}

/// `F(lambda, u) = lambda*u - u^3 - eps`: the pitchfork with its crossing
/// destroyed by a constant imperfection.
pub fn perturbed_pitchfork<T: Scalar>(eps: f64) -> RegistryEntry<T> {
    let e = cvt::<T>(eps);
    let three = cvt::<T>(3.0);
    let problem = ProblemDef::new("perturbed_pitchfork", 1, 1, move |p: &PointLU<T>| {
        let (l, u) = (p.lambda[0], p.u[0]);
        Ok(DVector::from_element(1, l * u - u * u * u - e))
    })
    .with_jac(move |p: &PointLU<T>| {
        let (l, u) = (p.lambda[0], p.u[0]);
        Ok(DMatrix::from_row_slice(1, 2, &[u, l - three * u * u]))
    });
    RegistryEntry {
        name: format!("perturbed_pitchfork({eps})"),
        problem,
        known_truth: None,
    }
}

/// Tridiagonal Dirichlet Laplacian on `(0, pi)` with `ng` interior nodes.
/// Entry `(i,i) = -2/h^2`, off-diagonals `1/h^2`, `h = pi/(ng+1)`.
pub fn fd_laplacian<T: Scalar>(ng: usize) -> DMatrix<T> {
    let h = std::f64::consts::PI / (ng as f64 + 1.0);
    let inv_h2 = cvt::<T>(1.0 / (h * h));
    let two = cvt::<T>(2.0);
    let mut l = DMatrix::<T>::zeros(ng, ng);
    for i in 0..ng {
        l[(i, i)] = -two * inv_h2;
        if i + 1 < ng {
            l[(i, i + 1)] = inv_h2;
            l[(i + 1, i)] = inv_h2;
        }
    }
    l
}

/// Closed-form eigenpairs of the negated FD Dirichlet Laplacian on `(0, pi)`:
/// eigenvalues `(4/h^2) sin^2(k h / 2)` ascending, eigenvectors the discrete
/// sine modes `sin(k i h)`, unit-normalized.
pub fn tridiag_eigen_oracle(ng: usize) -> (Vec<f64>, Vec<DVector<f64>>) {
    let h = std::f64::consts::PI / (ng as f64 + 1.0);
    let mut vals = Vec::with_capacity(ng);
    let mut vecs = Vec::with_capacity(ng);
    for k in 1..=ng {
        let s = (k as f64 * h / 2.0).sin();
        vals.push(4.0 / (h * h) * s * s);
        let mut v = DVector::from_fn(ng, |i, _| (k as f64 * (i as f64 + 1.0) * h).sin());
        v /= v.norm();
        vecs.push(v);
    }
    (vals, vecs)
}

fn chafee_infante_core<T: Scalar>(ng: usize, bump: Option<f64>) -> Result<ProblemDef<T>> {
    if ng < 2 {
        return Err(BifError::BadParams(format!(
            "chafee_infante needs at least 2 grid nodes, got {ng}"
        )));
    }
    let lap = fd_laplacian::<T>(ng);
    let lap_jac = lap.clone();
    let three = cvt::<T>(3.0);
    let forcing: Option<(usize, T)> = bump.map(|e| (ng / 2, cvt::<T>(e)));
    let name = if bump.is_some() { "chafee_infante_asym" } else { "chafee_infante" };
    Ok(ProblemDef::new(name, 1, ng, move |p: &PointLU<T>| {
        let l = p.lambda[0];
        let mut out = &lap * &p.u;
        for i in 0..p.u.len() {
            let u = p.u[i];
            out[i] += l * (u - u * u * u);
        }
        if let Some((j, e)) = forcing {
            out[j] += e;
        }
        Ok(out)
    })
    .with_jac(move |p: &PointLU<T>| {
        let l = p.lambda[0];
        let n = p.u.len();
        let mut jac = DMatrix::<T>::zeros(n, n + 1);
        for i in 0..n {
            let u = p.u[i];
            jac[(i, 0)] = u - u * u * u;
        }
        let mut block = lap_jac.clone();
        for i in 0..n {
            let u = p.u[i];
            block[(i, i)] += l * (T::one() - three * u * u);
        }
        jac.columns_mut(1, n).copy_from(&block);
        Ok(jac)
    }))
}

/// 1D Chafee–Infante reaction–diffusion: `F = L_h u + lambda (u - u^3)` with
/// `L_h` the FD Dirichlet Laplacian on `(0, pi)`.
pub fn chafee_infante<T: Scalar>(ng: usize) -> Result<RegistryEntry<T>> {
    let problem = chafee_infante_core::<T>(ng, None)?;
    let (vals, _) = tridiag_eigen_oracle(ng);
    Ok(RegistryEntry {
        name: format!("chafee_infante({ng})"),
        problem,
        known_truth: Some(KnownTruth {
            point: PointLU::new(DVector::from_element(1, cvt::<T>(vals[0])), DVector::zeros(ng)),
            type_n: 1,
            type_q: 1,
            oracle: "smallest FD eigenvalue (4/h^2) sin^2(h/2) of the negated Laplacian".into(),
        }),
    })
}

/// Chafee–Infante in compact (integral-operator) form: `F = u - lambda K (u
/// - u^3)` with `K = (-L_h)^{-1}`. Zeros coincide with [`chafee_infante`]'s
/// and the trivial branch loses stability at the same `lambda_1`, but `DF`
/// stays bounded uniformly in the grid size, which makes operator-norm
/// consistency of coarsened versions attainable.
pub fn chafee_infante_compact<T: Scalar>(ng: usize) -> Result<RegistryEntry<T>> {
    if ng == 0 {
        return Err(BifError::BadParams("grid size must be positive".into()));
    }
    let k_op = (-fd_laplacian::<T>(ng))
        .try_inverse()
        .ok_or(BifError::SingularOperator { sigma_min: 0.0 })?;
    let three = cvt::<T>(3.0);
    let k_eval = k_op.clone();
    let problem = ProblemDef::new("chafee_infante_compact", 1, ng, move |p: &PointLU<T>| {
        let l = p.lambda[0];
        let cubic = DVector::from_fn(ng, |i, _| p.u[i] - p.u[i] * p.u[i] * p.u[i]);
        Ok(&p.u - &k_eval * cubic * l)
    })
    .with_jac(move |p: &PointLU<T>| {
        let l = p.lambda[0];
        let cubic = DVector::from_fn(ng, |i, _| p.u[i] - p.u[i] * p.u[i] * p.u[i]);
        let mut jac = DMatrix::zeros(ng, 1 + ng);
        jac.column_mut(0).copy_from(&(-(&k_op * cubic)));
        let mut block = -&k_op * l;
        for j in 0..ng {
            let scale = T::one() - three * p.u[j] * p.u[j];
            for i in 0..ng {
                block[(i, j)] *= scale;
            }
            block[(j, j)] += T::one();
        }
        jac.columns_mut(1, ng).copy_from(&block);
        Ok(jac)
    });
    let (vals, _) = tridiag_eigen_oracle(ng);
    Ok(RegistryEntry {
        name: format!("chafee_infante_compact({ng})"),
        problem,
        known_truth: Some(KnownTruth {
            point: PointLU::new(DVector::from_element(1, cvt::<T>(vals[0])), DVector::zeros(ng)),
            type_n: 1,
            type_q: 1,
            oracle: "1/nu_max(K) equals the smallest FD eigenvalue of -L_h".into(),
        }),
    })
}

/// Chafee–Infante with a constant bump `eps` at the middle node, which
/// detaches the branch crossing (imperfect bifurcation).
pub fn chafee_infante_asym<T: Scalar>(ng: usize, eps: f64) -> Result<RegistryEntry<T>> {
    let problem = chafee_infante_core::<T>(ng, Some(eps))?;
    Ok(RegistryEntry {
        name: format!("chafee_infante_asym({ng},{eps})"),
        problem,
        known_truth: None,
    })
}

/// Desk-scale staggered-grid Navier–Stokes composition; see [`ns`].
pub fn ns_lite<T: Scalar>(res: usize) -> Result<RegistryEntry<T>> {
    let problem = ns::ns_problem::<T>(res)?;
    Ok(RegistryEntry {
        name: format!("ns_lite({res})"),
        problem,
        known_truth: None,
    })
}

/// Look up a registry entry by name, e.g. `"pitchfork"`,
/// `"perturbed_pitchfork(1e-3)"`, `"chafee_infante(32)"`,
/// `"chafee_infante_asym(32,1e-3)"`, `"ns_lite(8)"`.
pub fn registry<T: Scalar>(spec: &str) -> Result<RegistryEntry<T>> {
    let spec = spec.trim();
    let (name, args) = match spec.find('(') {
        Some(i) => {
            let rest = spec[i + 1..]
                .strip_suffix(')')
                .ok_or_else(|| BifError::BadParams(format!("unbalanced parentheses in '{spec}'")))?;
            let args: Vec<f64> = rest
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| BifError::BadParams(format!("bad numeric argument '{s}' in '{spec}'")))
                })
                .collect::<Result<_>>()?;
            (&spec[..i], args)
        }
        None => (spec, Vec::new()),
    };
    let want = |k: usize| -> Result<()> {
        if args.len() == k {
            Ok(())
        } else {
            Err(BifError::BadParams(format!(
                "'{name}' takes {k} argument(s), got {}",
                args.len()
            )))
        }
    };
    let grid = |x: f64| -> Result<usize> {
        if x.fract() == 0.0 && x >= 2.0 {
            Ok(x as usize)
        } else {
            Err(BifError::BadParams(format!("grid size must be an integer >= 2, got {x}")))
        }
    };
    match name {
        "pitchfork" => {
            want(0)?;
            Ok(pitchfork())
        }
        "transcritical" => {
            want(0)?;
            Ok(transcritical())
        }
        "perturbed_pitchfork" => {
            want(1)?;
            Ok(perturbed_pitchfork(args[0]))
        }
        "chafee_infante" => {
            want(1)?;
            chafee_infante(grid(args[0])?)
        }
        "chafee_infante_compact" => {
            want(1)?;
            chafee_infante_compact(grid(args[0])?)
        }
        "chafee_infante_asym" => {
            want(2)?;
            chafee_infante_asym(grid(args[0])?, args[1])
        }
        "ns_lite" => {
            want(1)?;
            ns_lite(grid(args[0])?)
        }
        other => Err(BifError::UnknownName(other.to_string())),
    }
}
