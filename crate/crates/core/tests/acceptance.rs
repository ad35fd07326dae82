//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line (run with `--nocapture` to see them). Oracles are
//! independent closed forms (tridiagonal eigenpairs, normal-form roots,
//! hand arithmetic) frozen here, not recomputed by the code under test.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biftk::certify::{certificate, error_bound, lipschitz_pair, RadiiMode};
use biftk::classify::{build_extended_solution, classify, verify_extended, VerifyTols};
use biftk::discretize::{build_projection, h_study_with, ProjectionKind};
use biftk::extended::{choose_frames, random_admissible_frames, ExtState};
use biftk::linalg::{solve, SolveMode, DEFAULT_RTOL};
use biftk::problem::{PointLU, ProblemDef};
use biftk::recovery::{
    branch_min_gap, recover, shift_problem, trace_branches, trace_from, RecoveryOptions,
};
use biftk::testbeds::{self, ns, tridiag_eigen_oracle};

fn criterion(num: usize, label: &str, budget: Duration, body: impl FnOnce()) {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = t0.elapsed();
    match outcome {
        Ok(()) => {
            println!("criterion {num} ({label}): PASS in {elapsed:.2?}");
            assert!(
                elapsed <= budget,
                "criterion {num} exceeded its {budget:?} budget: {elapsed:?}"
            );
        }
        Err(e) => {
            println!("criterion {num} ({label}): FAIL after {elapsed:.2?}");
            resume_unwind(e);
        }
    }
}

fn bifurcation_entries() -> Vec<testbeds::RegistryEntry<f64>> {
    vec![
        testbeds::pitchfork::<f64>(),
        testbeds::transcritical::<f64>(),
        testbeds::chafee_infante::<f64>(16).unwrap(),
        testbeds::chafee_infante_compact::<f64>(16).unwrap(),
    ]
}

#[test]
fn criterion_1_classification_ground_truth() {
    criterion(1, "classification ground truth", Duration::from_secs(4), || {
        for entry in [testbeds::pitchfork::<f64>(), testbeds::transcritical::<f64>()] {
            let t0 = Instant::now();
            let origin = PointLU::new(dvector![0.0], dvector![0.0]);
            let rep = classify(&entry.problem, &origin, DEFAULT_RTOL).unwrap();
            assert_eq!((rep.n, rep.q), (1, 1), "{}", entry.name);
            assert!(t0.elapsed() < Duration::from_secs(1));
        }
        for ng in [8usize, 16, 32] {
            let t0 = Instant::now();
            let entry = testbeds::chafee_infante::<f64>(ng).unwrap();
            let truth = entry.known_truth.clone().unwrap();
            // independent closed form: lambda_1 = (4/h^2) sin^2(h/2)
            let h = std::f64::consts::PI / (ng as f64 + 1.0);
            let lam1 = 4.0 / (h * h) * (h / 2.0).sin().powi(2);
            assert!((truth.point.lambda[0] - lam1).abs() <= 1e-10);
            let (vals, _) = tridiag_eigen_oracle(ng);
            assert!((vals[0] - lam1).abs() <= 1e-10);
            let rep = classify(&entry.problem, &truth.point, DEFAULT_RTOL).unwrap();
            assert_eq!((rep.n, rep.q), (1, 1), "chafee_infante({ng})");
            assert!(t0.elapsed() < Duration::from_secs(1));
        }
    });
}

#[test]
fn criterion_2_theorem_equivalence_round_trip() {
    criterion(2, "extended-system equivalence round-trip", Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for entry in bifurcation_entries() {
            let truth = entry.known_truth.clone().unwrap();
            let base = choose_frames(&entry.problem, &truth.point, DEFAULT_RTOL).unwrap();
            let s0 = build_extended_solution(&entry.problem, &base, &truth.point).unwrap();
            let rep =
                verify_extended(&entry.problem, &base, &s0, VerifyTols::default()).unwrap();
            assert!(rep.residual_s <= 1e-8, "{}: |S| = {}", entry.name, rep.residual_s);
            assert!(rep.sigma_min_ds > 1e-8, "{}: sigma = {}", entry.name, rep.sigma_min_ds);
            assert!(
                rep.zero_components_max <= 1e-7,
                "{}: zeros = {}",
                entry.name,
                rep.zero_components_max
            );
            // frame re-choice invariance
            for trial in 0..20 {
                let frames =
                    random_admissible_frames(&entry.problem, &truth.point, &base, &mut rng)
                        .unwrap();
                let s = build_extended_solution(&entry.problem, &frames, &truth.point).unwrap();
                let r =
                    verify_extended(&entry.problem, &frames, &s, VerifyTols::default()).unwrap();
                assert!(r.passes, "{} trial {trial}", entry.name);
                assert_eq!(r.implied_type, (truth.type_n, truth.type_q));
            }
        }
    });
}

/// Newton on `u` at fixed `lambda`.
fn newton_u(p: &ProblemDef<f64>, lambda: f64, u0: DVector<f64>) -> Option<DVector<f64>> {
    let mut u = u0;
    for _ in 0..40 {
        let pt = PointLU::new(dvector![lambda], u.clone());
        let f = p.eval_f(&pt).ok()?;
        if f.norm() <= 1e-12 * (1.0 + u.norm()) {
            return Some(u);
        }
        let jac = p.jac_du_f(&pt).ok()?;
        let step = solve(&jac, &f, SolveMode::LeastSquares).ok()?;
        u -= step;
    }
    None
}

#[test]
fn criterion_3_recovery_restores_broken_bifurcation() {
    criterion(3, "shift recovery restores the crossing", Duration::from_secs(30), || {
        // normal-form family: oracle is the unperturbed pitchfork at the origin
        for eps in [1e-2, 1e-3, 1e-4] {
            let p = testbeds::perturbed_pitchfork::<f64>(eps).problem;
            let anchor = PointLU::new(dvector![0.05], dvector![0.05]);
            let rec = recover(&p, &anchor, &RecoveryOptions::default()).unwrap();
            assert!((rec.rho[0] + eps).abs() <= 1e-8, "eps {eps}: rho = {}", rec.rho[0]);
            assert!(
                rec.point.flatten().norm() <= 1e-8,
                "eps {eps}: point {:?}",
                rec.point.flatten().as_slice()
            );
        }
        // imperfect Chafee-Infante
        let ng = 32;
        let eps = 1e-3;
        let entry = testbeds::chafee_infante_asym::<f64>(ng, eps).unwrap();
        let (vals, _) = tridiag_eigen_oracle(ng);
        let anchor = PointLU::new(dvector![vals[0] + 0.02], DVector::zeros(ng));
        let rec = recover(&entry.problem, &anchor, &RecoveryOptions::default()).unwrap();
        assert!(rec.converged);
        let shifted = shift_problem(&entry.problem, &rec.rho);
        let rep = classify(&shifted, &rec.point, DEFAULT_RTOL).unwrap();
        assert_eq!((rep.n, rep.q), (1, 1));
        // shifted problem: branches traced through the restored point cross there
        let pts = trace_branches(&entry.problem, &rec.rho, &rec.point, 12, 0.01).unwrap();
        let b0: Vec<_> = pts.iter().filter(|p| p.branch == 0).cloned().collect();
        let b1: Vec<_> = pts.iter().filter(|p| p.branch == 1).cloned().collect();
        assert!(!b0.is_empty() && !b1.is_empty());
        assert!(branch_min_gap(&b0, &b1) <= 1e-6);
        // unshifted problem: the same two branches avoid each other
        let lam_lo = vals[0] - 0.1;
        let lam_hi = vals[0] + 0.1;
        let u_lo = newton_u(&entry.problem, lam_lo, DVector::zeros(ng)).unwrap();
        let h = std::f64::consts::PI / (ng as f64 + 1.0);
        let seed_hi = DVector::from_fn(ng, |i, _| 0.3 * ((i + 1) as f64 * h).sin());
        let u_hi = newton_u(&entry.problem, lam_hi, seed_hi).unwrap();
        assert!(u_hi.norm() > 0.05, "seeded Newton fell back to the small branch");
        let mut tangent = DVector::zeros(1 + ng);
        tangent[0] = 1.0;
        let low = trace_from(
            &entry.problem,
            &PointLU::new(dvector![lam_lo], u_lo),
            &tangent,
            25,
            0.01,
            0,
        )
        .unwrap();
        let high = trace_from(
            &entry.problem,
            &PointLU::new(dvector![lam_hi], u_hi),
            &tangent,
            25,
            0.01,
            1,
        )
        .unwrap();
        let gap = branch_min_gap(&low, &high);
        assert!(gap > 1e-4, "unshifted branches got within {gap}");
    });
}

#[test]
fn criterion_4_certificate_lemma_inequalities() {
    criterion(4, "certificate lemma inequalities", Duration::from_secs(20), || {
        // kappa <= gamma and the Lipschitz sandwich on every known point
        for entry in bifurcation_entries() {
            let truth = entry.known_truth.clone().unwrap();
            let frames = choose_frames(&entry.problem, &truth.point, DEFAULT_RTOL).unwrap();
            let cert = certificate(
                &entry.problem,
                &frames,
                &truth.point,
                0.04,
                1e-3,
                64,
                7,
                RadiiMode::HUniform,
            )
            .unwrap();
            assert!(cert.kappa <= cert.gamma, "{}", entry.name);
            let s0 = build_extended_solution(&entry.problem, &frames, &truth.point).unwrap();
            let (l_s, l) =
                lipschitz_pair(&entry.problem, &frames, &s0, 0.1, 64, 7).unwrap();
            assert!(0.5 * l_s <= l * 1.05, "{}: L_S/2 = {} > L = {l}", entry.name, 0.5 * l_s);
        }
        // hand arithmetic on the linear testbed (constant analytic Jacobian)
        let linear = ProblemDef::new("linear", 1, 2, |pt: &PointLU<f64>| {
            Ok(dvector![pt.lambda[0], 0.0])
        })
        .with_jac(|_: &PointLU<f64>| {
            Ok(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
        });
        let origin = PointLU::new(dvector![0.0], dvector![0.0, 0.0]);
        let frames = choose_frames(&linear, &origin, DEFAULT_RTOL).unwrap();
        let eps = 0.1;
        let cert =
            certificate(&linear, &frames, &origin, eps, 1e-3, 16, 7, RadiiMode::HUniform).unwrap();
        assert!(cert.l_eps.abs() <= 1e-12 && cert.l_s_eps.abs() <= 1e-12);
        let km = 2.0 * cert.kappa * cert.m_bound;
        let tau = 0.99 * (1.0 + km) / (2.0 + km) * eps;
        let a_u = tau / (1.0 + km);
        let b_v = tau / (2.0 * cert.kappa);
        let a_star = a_u.min(cert.kappa * b_v);
        assert!((cert.tau - tau).abs() <= 1e-12);
        assert!((cert.a_star - a_star).abs() <= 1e-12);
        assert!((cert.c - 1.0 / cert.kappa).abs() <= 1e-12);
        // exact, not approximate: b* is defined as c * a*
        assert_eq!(cert.b_star, cert.c * cert.a_star);
    });
}

#[test]
fn criterion_5_a_posteriori_error_bound() {
    criterion(5, "a-posteriori error bound", Duration::from_secs(30), || {
        let cases: Vec<(ProblemDef<f64>, PointLU<f64>)> = vec![
            (
                testbeds::perturbed_pitchfork::<f64>(1e-3).problem,
                PointLU::new(dvector![0.02], dvector![0.02]),
            ),
            (testbeds::chafee_infante_asym::<f64>(8, 1e-3).unwrap().problem, {
                let (vals, _) = tridiag_eigen_oracle(8);
                PointLU::new(dvector![vals[0] + 0.02], DVector::zeros(8))
            }),
        ];
        let mut violations = 0usize;
        for (p, anchor) in &cases {
            let rec = recover(p, anchor, &RecoveryOptions::default()).unwrap();
            let shifted = shift_problem(p, &rec.rho);
            let s0 = &rec.ext_state;
            let dim = rec.frames.ext_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut done = 0usize;
            while done < 50 {
                let mut d = DVector::<f64>::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
                let n = d.norm();
                if n == 0.0 {
                    continue;
                }
                d *= rng.gen_range(0.1..1.0) * 1e-3 / n;
                let r = ExtState::unflatten(&rec.frames, &(s0.flatten() + d)).unwrap();
                // only trials where the bound's contraction condition holds
                match error_bound(&shifted, &rec.frames, s0, &r, 32, 7) {
                    Ok(bound) => {
                        let actual = (s0.flatten() - r.flatten()).norm();
                        if actual > bound + 1e-12 {
                            violations += 1;
                        }
                        done += 1;
                    }
                    Err(_) => continue,
                }
            }
        }
        assert_eq!(violations, 0);
    });
}

#[test]
fn criterion_6_transfer_theorem_soundness() {
    criterion(6, "isomorphism-transfer soundness over the h-study", Duration::from_secs(120), || {
        let fine = 64;
        let entry = testbeds::chafee_infante_compact::<f64>(fine).unwrap();
        let truth = entry.known_truth.clone().unwrap();
        let frames = choose_frames(&entry.problem, &truth.point, DEFAULT_RTOL).unwrap();
        let pairs: Vec<_> = [16usize, 24, 32, 48]
            .iter()
            .map(|&c| build_projection::<f64>(fine, c, ProjectionKind::Truncation).unwrap())
            .collect();
        let rows = h_study_with(
            &entry.problem,
            &pairs,
            &frames,
            &truth.point,
            &RecoveryOptions::default(),
            |pair| Ok(testbeds::chafee_infante_compact::<f64>(pair.coarse)?.problem),
        )
        .unwrap();
        let (vals_fine, _) = tridiag_eigen_oracle(fine);
        let mut admissible_rows = 0usize;
        for (row, &coarse) in rows.iter().zip(&[16usize, 24, 32, 48]) {
            if row.q_g < 1.0 && row.q_h < 1.0 {
                admissible_rows += 1;
                assert!(row.transfer.inv_norm_actual_g.is_finite());
                assert!(
                    row.transfer.inv_norm_actual_g
                        <= row.transfer.inv_norm_bound_g * (1.0 + 1e-9),
                    "coarse {coarse}: G inverse norm exceeds the bound"
                );
                assert!(
                    row.transfer.inv_norm_actual_h
                        <= row.transfer.inv_norm_bound_h * (1.0 + 1e-9),
                    "coarse {coarse}: H inverse norm exceeds the bound"
                );
                // type preservation on admissible rows
                assert_eq!((row.type_n, row.type_q), (1, 1), "coarse {coarse}");
            }
            // eigenvalue-gap oracle: the coarse bifurcation parameter is the
            // coarse grid's own first eigenvalue
            let (vals_c, _) = tridiag_eigen_oracle(coarse);
            let oracle_gap = (vals_c[0] - vals_fine[0]).abs();
            let gap = (row.lambda0h - truth.point.lambda[0]).abs();
            assert!(
                (gap - oracle_gap).abs() <= 1e-6,
                "coarse {coarse}: |lambda0h - lambda0| = {gap}, oracle {oracle_gap}"
            );
        }
        assert!(admissible_rows > 0, "the study produced no admissible rows");
        for w in rows.windows(2) {
            assert!(w[1].eta2 < w[0].eta2, "eta2 not strictly decreasing");
            assert!(w[1].eta4 < w[0].eta4, "eta4 not strictly decreasing");
            assert!(w[1].delta_h < w[0].delta_h, "delta_h not strictly decreasing");
        }
    });
}

#[test]
fn criterion_7_ns_lite_structure() {
    criterion(7, "staggered-grid Stokes/NS structure", Duration::from_secs(120), || {
        // manufactured-solution convergence
        let mut prev = f64::INFINITY;
        for res in [8usize, 12, 16, 24] {
            let f = ns::manufactured_forcing(res);
            let (vel, pres) = ns::ns_stokes_solve(res, &f).unwrap();
            let err = (&vel - ns::manufactured_velocity(res)).amax();
            assert!(err < prev, "res {res}: error {err} not below {prev}");
            prev = err;
            let div = ns::discrete_divergence(res, &vel).unwrap();
            assert!(div.amax() <= 1e-10, "res {res}: divergence {}", div.amax());
            let mean = pres.sum().abs() / pres.len() as f64;
            assert!(mean <= 1e-12, "res {res}: pressure mean {mean}");
        }
        // p = q/lambda at an F*-zero found by Newton
        let res = 6;
        let lambda = 0.2;
        let p = ns::ns_problem::<f64>(res).unwrap();
        let dim = ns::ns_state_dim(res).unwrap();
        let mut state = DVector::<f64>::zeros(dim);
        for _ in 0..20 {
            let pt = PointLU::new(dvector![lambda], state.clone());
            let r = p.eval_f(&pt).unwrap();
            if r.amax() < 1e-13 {
                break;
            }
            let jac = p.jac_df(&pt).unwrap().columns(1, dim).into_owned();
            let step = solve(&jac, &r, SolveMode::Exact).unwrap();
            state -= step;
        }
        let pt = PointLU::new(dvector![lambda], state.clone());
        assert!(p.eval_f(&pt).unwrap().amax() <= 1e-12);
        let grid = ns::Grid::new(res).unwrap();
        let pres = state.rows(0, grid.np()).into_owned();
        let q = state.rows(grid.np() + grid.nvel(), grid.np()).into_owned();
        assert!((pres - q / lambda).amax() <= 1e-12);
        // Stokes-operator gap strictly decreasing toward the fine grid
        let study = ns::ns_transfer_study(24, &[8, 12, 16]).unwrap();
        for w in study.windows(2) {
            assert!(w[1].stokes_gap < w[0].stokes_gap, "Stokes gap not decreasing");
        }
    });
}

fn run_cli(args: &[&str]) -> (Vec<u8>, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_biftk"))
        .args(args)
        .output()
        .expect("binary runs");
    (out.stdout, out.status.code().unwrap_or(-1))
}

#[test]
fn criterion_8_cli_determinism() {
    criterion(8, "byte-identical CLI runs", Duration::from_secs(60), || {
        let dir = std::env::temp_dir().join(format!("biftk-acceptance-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg_path = dir.join("run.cfg");
        std::fs::write(
            &cfg_path,
            "[certify]\nproblem = pitchfork\nanchor = 0,0\nepsilon = 0.04\nseed = 7\n\n\
             [recover]\nproblem = perturbed_pitchfork\neps = 1e-3\nanchor = 0.05,0.05\n",
        )
        .unwrap();
        let cfg = cfg_path.to_str().unwrap();
        for args in [
            vec!["certify", "--config", cfg],
            vec!["recover", "--config", cfg],
            vec![
                "discretize",
                "--problem",
                "chafee_infante_compact(32)",
                "--coarse",
                "8,16",
                "--native",
            ],
            vec!["trace", "--problem", "pitchfork", "--point", "0,0", "--steps", "5", "--ds", "0.05"],
        ] {
            let (out1, code1) = run_cli(&args);
            let (out2, code2) = run_cli(&args);
            assert!(!out1.is_empty());
            assert_eq!(out1, out2, "stdout differs across runs: {args:?}");
            assert_eq!(code1, code2);
            assert_eq!(code1, 0, "{args:?}");
        }
        // exit-code convention: a failing certificate is exit 2, not an error
        let (_, code) = run_cli(&[
            "certify", "--problem", "pitchfork", "--anchor", "0.9,0.4", "--epsilon", "0.01",
            "--seed", "7",
        ]);
        assert_eq!(code, 2);
        std::fs::remove_dir_all(&dir).ok();
    });
}
