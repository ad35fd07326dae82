//! Report serialization: versioned JSON envelopes (sorted keys, shortest
//! round-trip floats) and the frozen CSV schemas for branch traces and
//! h-studies. All numbers are produced by library operations; nothing here
//! computes, it only formats.

use serde_json::{json, Map, Value};

use crate::certify::{Certificate, RadiiMode};
use crate::classify::{ClassifyReport, VerifyReport};
use crate::discretize::StudyRow;
use crate::recovery::{RecoveryResult, TracePoint};

/// JSON report schema version.
pub const SCHEMA_VERSION: u64 = 1;

/// Frozen h-study CSV header.
pub const STUDY_CSV_HEADER: &str =
    "h_label,C_est,eta1,eta2,eta3,eta4,qG,qH,delta_h,rho_norm,lambda0h,gap,bound,type_n,type_q";

fn num(x: f64) -> Value {
    // serde_json renders f64 via shortest round-trip; non-finite values have
    // no JSON number form, so encode them as strings
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(format!("{x}"))
    }
}

fn vec_json(v: &nalgebra::DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

/// Wrap a result body with the schema version, library version, the command
/// name, and the resolved run configuration.
pub fn envelope(command: &str, config: Value, body: Value) -> Value {
    let mut map = Map::new();
    map.insert("schema".into(), json!(SCHEMA_VERSION));
    map.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    map.insert("command".into(), json!(command));
    map.insert("config".into(), config);
    map.insert("result".into(), body);
    Value::Object(map)
}

pub fn classify_json(r: &ClassifyReport<f64>) -> Value {
    json!({
        "n": r.n,
        "q": r.q,
        "sigma_df": Value::Array(r.sigma_df.iter().map(|&x| num(x)).collect()),
        "sigma_duf": Value::Array(r.sigma_duf.iter().map(|&x| num(x)).collect()),
        "rtol_used": num(r.rtol_used),
        "rank_ambiguous": r.rank_ambiguous,
        "fredholm_index_note": r.fredholm_index_note,
    })
}

pub fn verify_json(r: &VerifyReport<f64>) -> Value {
    json!({
        "residual_s": num(r.residual_s),
        "sigma_min_ds": num(r.sigma_min_ds),
        "zero_components_max": num(r.zero_components_max),
        "implied_type_n": r.implied_type.0,
        "implied_type_q": r.implied_type.1,
        "passes": r.passes,
    })
}

pub fn recovery_json(r: &RecoveryResult<f64>) -> Value {
    let mut map = Map::new();
    map.insert("lambda".into(), vec_json(&r.point.lambda));
    map.insert("u".into(), vec_json(&r.point.u));
    map.insert("rho".into(), vec_json(&r.rho));
    map.insert("rho_norm".into(), num(r.rho.norm()));
    map.insert("type_n".into(), json!(r.frames.n));
    map.insert("type_q".into(), json!(r.frames.q));
    map.insert("iterations".into(), json!(r.iterations));
    map.insert("converged".into(), json!(r.converged));
    map.insert(
        "residual_history".into(),
        Value::Array(r.residual_history.iter().map(|&x| num(x)).collect()),
    );
    map.insert("verify".into(), verify_json(&r.verify));
    if let Some(w) = r.within_ball {
        map.insert("within_ball".into(), json!(w));
    }
    if let Some(ks) = &r.kernel_shift {
        map.insert("kernel_shift".into(), vec_json(ks));
    }
    Value::Object(map)
}

pub fn certificate_json(c: &Certificate<f64>) -> Value {
    json!({
        "gamma": num(c.gamma),
        "kappa": num(c.kappa),
        "l_eps": num(c.l_eps),
        "l_s_eps": num(c.l_s_eps),
        "epsilon": num(c.epsilon),
        "alpha": num(c.alpha),
        "a_hat": num(c.a_hat),
        "m_bound": num(c.m_bound),
        "c": num(c.c),
        "tau": num(c.tau),
        "a_star": num(c.a_star),
        "b_star": num(c.b_star),
        "delta": num(c.delta),
        "cond_contraction": c.cond_contraction,
        "cond_gamma": c.cond_gamma,
        "cond_delta": c.cond_delta,
        "passes": c.passes(),
        "rho_bound_1": num(c.rho_bound_1),
        "rho_bound_2": num(c.rho_bound_2),
        "radii_mode": match c.radii_mode {
            RadiiMode::HUniform => "h_uniform",
            RadiiMode::General => "general",
        },
        "samples": c.sample_count,
        "seed": c.seed,
    })
}

pub fn study_row_json(r: &StudyRow<f64>) -> Value {
    json!({
        "h_label": num(r.h_label),
        "c_est": num(r.c_est),
        "eta1": num(r.eta1),
        "eta2": num(r.eta2),
        "eta3": num(r.eta3),
        "eta4": num(r.eta4),
        "q_g": num(r.q_g),
        "q_h": num(r.q_h),
        "delta_h": num(r.delta_h),
        "rho_norm": num(r.rho_norm),
        "lambda0h": num(r.lambda0h),
        "gap": num(r.gap),
        "bound": num(r.bound),
        "type_n": r.type_n,
        "type_q": r.type_q,
        "admissible": r.transfer.admissible,
        "inv_norm_actual_g": num(r.transfer.inv_norm_actual_g),
        "inv_norm_bound_g": num(r.transfer.inv_norm_bound_g),
        "inv_norm_actual_h": num(r.transfer.inv_norm_actual_h),
        "inv_norm_bound_h": num(r.transfer.inv_norm_bound_h),
    })
}

/// Shortest round-trip decimal for CSV cells.
fn cell(x: f64) -> String {
    format!("{x}")
}

/// The frozen h-study CSV: header plus one line per row.
pub fn study_csv(rows: &[StudyRow<f64>]) -> String {
    let mut out = String::from(STUDY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            cell(r.h_label),
            cell(r.c_est),
            cell(r.eta1),
            cell(r.eta2),
            cell(r.eta3),
            cell(r.eta4),
            cell(r.q_g),
            cell(r.q_h),
            cell(r.delta_h),
            cell(r.rho_norm),
            cell(r.lambda0h),
            cell(r.gap),
            cell(r.bound),
            r.type_n,
            r.type_q,
        ));
    }
    out
}

/// Branch-trace CSV: `branch,step,s,lambda,u_norm,u_0..u_{N-1}`, one line
/// per continuation record in emission order.
pub fn trace_csv(points: &[TracePoint<f64>]) -> String {
    let n = points.first().map_or(0, |p| p.u.len());
    let mut out = String::from("branch,step,s,lambda,u_norm");
    for i in 0..n {
        out.push_str(&format!(",u_{i}"));
    }
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}",
            p.branch,
            p.step,
            cell(p.s),
            cell(p.lambda),
            cell(p.u_norm)
        ));
        for i in 0..n {
            out.push_str(&format!(",{}", cell(p.u[i])));
        }
        out.push('\n');
    }
    out
}
