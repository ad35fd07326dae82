//! Command-line front end: problem selection, configuration, and running
//! classify / recover / certify / discretize / trace with reproducible
//! reports. Exit codes: 0 success, 1 error, 2 run completed but the
//! certificate or transfer condition is negative.

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::{json, Value};

use biftk::certify::{certificate, RadiiMode};
use biftk::classify::classify;
use biftk::discretize::{build_projection, h_study, h_study_with, ProjectionKind};
use biftk::error::BifError;
use biftk::extended::{choose_frames, choose_frames_with_type};
use biftk::linalg::DEFAULT_RTOL;
use biftk::problem::PointLU;
use biftk::recovery::{recover, recover_functional, trace_branches, RecoveryOptions};
use biftk::report;
use biftk::testbeds;

#[derive(Parser)]
#[command(name = "biftk", version, about = "Bifurcation-point classification, shift recovery and certification")]
struct Cli {
    /// Flat key-value config file with `[section]` headers; flags win.
    #[arg(long, global = true)]
    config: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the problem registry.
    List,
    /// Classify a solution point: kernel dimension n and range deficiency q.
    Classify(ClassifyArgs),
    /// Recover the constant (or functional) shift restoring a bifurcation.
    Recover(RecoverArgs),
    /// Certify contraction, radii and shift bounds at an anchor.
    Certify(CertifyArgs),
    /// Coarsen a problem over projection pairs and run the transfer study.
    Discretize(DiscretizeArgs),
    /// Trace solution branches through a bifurcation point.
    Trace(TraceArgs),
}

#[derive(Args)]
struct ClassifyArgs {
    /// Registry name, e.g. `pitchfork` or `chafee_infante(32)`.
    #[arg(long)]
    problem: Option<String>,
    /// Comma-separated `lambda..,u..` coordinates of the point.
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    rtol: Option<f64>,
    /// Write the JSON report here as well as to standard output.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    problem: Option<String>,
    /// Perturbation size appended to a bare problem name, e.g.
    /// `--problem perturbed_pitchfork --eps 1e-3`.
    #[arg(long)]
    eps: Option<f64>,
    /// Comma-separated `lambda..,u..` anchor coordinates.
    #[arg(long)]
    anchor: Option<String>,
    /// Use the functional shift `rho(lambda,u) = DF(lambda,u)(mu',w')`.
    #[arg(long)]
    functional: bool,
    #[arg(long)]
    type_n: Option<usize>,
    #[arg(long)]
    type_q: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    anchor: Option<String>,
    /// Sampling-ball radius for the Lipschitz moduli.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `h_uniform` (default) or `general` radii formulas.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    type_n: Option<usize>,
    #[arg(long)]
    type_q: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct DiscretizeArgs {
    /// Fine problem, e.g. `chafee_infante_compact(64)`.
    #[arg(long)]
    problem: Option<String>,
    /// Comma-separated coarse sizes, e.g. `16,24,32,48`.
    #[arg(long)]
    coarse: Option<String>,
    /// `truncation` (default), `injection` or `interpolation`.
    #[arg(long)]
    kind: Option<String>,
    /// Use native coarse discretizations of the same family instead of the
    /// Galerkin restriction `P F E` (grid-parameterized problems only).
    #[arg(long)]
    native: bool,
    /// Write the frozen-schema study CSV here.
    #[arg(long)]
    csv: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    /// Anchor for a recovery run; the traced problem is `F - rho` at the
    /// recovered point.
    #[arg(long)]
    anchor: Option<String>,
    /// Trace from this exact point with `--rho` (default zero) instead of
    /// recovering first.
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    ds: Option<f64>,
    #[arg(long)]
    csv: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

/// Flat `key = value` pairs with optional `[section]` headers; keys are
/// stored both bare and as `section.key`. `#` starts a comment.
fn parse_config(text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if section.is_empty() {
                map.insert(k, v);
            } else {
                map.insert(format!("{section}.{k}"), v);
            }
        }
    }
    map
}

struct Config {
    map: BTreeMap<String, String>,
    section: &'static str,
}

impl Config {
    fn get(&self, key: &str) -> Option<&String> {
        self.map
            .get(&format!("{}.{key}", self.section))
            .or_else(|| self.map.get(key))
    }

    fn fill<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.get(key) {
            Some(s) => s
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("config key '{key}': cannot parse '{s}'")),
            None => Ok(None),
        }
    }

    fn fill_flag(&self, flag: bool, key: &str) -> bool {
        flag || self.get(key).map(|s| s == "true" || s == "1").unwrap_or(false)
    }
}

fn parse_vec(s: &str, what: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("{what}: cannot parse '{t}' as a number"))
        })
        .collect()
}

fn parse_point(s: &str, m: usize, n_state: usize, what: &str) -> Result<PointLU<f64>, String> {
    let vals = parse_vec(s, what)?;
    if vals.len() != m + n_state {
        return Err(format!(
            "{what}: expected {m}+{n_state} coordinates, got {}",
            vals.len()
        ));
    }
    Ok(PointLU::new(
        DVector::from_row_slice(&vals[..m]),
        DVector::from_row_slice(&vals[m..]),
    ))
}

/// Resolve a problem spec, appending `--eps` to a bare name if given.
fn problem_spec(name: Option<String>, eps: Option<f64>) -> Result<String, String> {
    let name = name.ok_or("missing --problem")?;
    Ok(match eps {
        Some(e) if !name.contains('(') => format!("{name}({e})"),
        _ => name,
    })
}

fn write_outputs(report: &Value, out: Option<&str>) -> Result<(), String> {
    let text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text.as_bytes()).map_err(|e| format!("{path}: {e}"))?;
    }
    Ok(())
}

fn bif_err(e: BifError) -> String {
    e.to_string()
}

fn run_list() -> Result<u8, String> {
    let body = json!({
        "problems": [
            "pitchfork",
            "transcritical",
            "perturbed_pitchfork(eps)",
            "chafee_infante(grid)",
            "chafee_infante_compact(grid)",
            "chafee_infante_asym(grid,eps)",
            "ns_lite(res)",
        ]
    });
    write_outputs(&report::envelope("list", json!({}), body), None)?;
    Ok(0)
}

fn run_classify(a: ClassifyArgs, cfg: &Config) -> Result<u8, String> {
    let problem = cfg.fill(a.problem, "problem")?;
    let point = cfg.fill(a.point, "point")?.ok_or("missing --point")?;
    let rtol = cfg.fill(a.rtol, "rtol")?.unwrap_or(DEFAULT_RTOL);
    let out = cfg.fill(a.out, "out")?;
    let spec = problem_spec(problem, None)?;
    let entry = testbeds::registry::<f64>(&spec).map_err(bif_err)?;
    let pt = parse_point(&point, entry.problem.m, entry.problem.n_state, "--point")?;
    let rep = classify(&entry.problem, &pt, rtol).map_err(bif_err)?;
    let config = json!({"problem": spec, "point": point, "rtol": rtol});
    write_outputs(
        &report::envelope("classify", config, report::classify_json(&rep)),
        out.as_deref(),
    )?;
    Ok(0)
}

fn run_recover(a: RecoverArgs, cfg: &Config) -> Result<u8, String> {
    let problem = cfg.fill(a.problem, "problem")?;
    let eps = cfg.fill(a.eps, "eps")?;
    let anchor = cfg.fill(a.anchor, "anchor")?.ok_or("missing --anchor")?;
    let functional = cfg.fill_flag(a.functional, "functional");
    let out = cfg.fill(a.out, "out")?;
    let spec = problem_spec(problem, eps)?;
    let entry = testbeds::registry::<f64>(&spec).map_err(bif_err)?;
    let pt = parse_point(&anchor, entry.problem.m, entry.problem.n_state, "--anchor")?;
    let mut opts = RecoveryOptions::default();
    opts.type_n = cfg.fill(a.type_n, "type_n")?.unwrap_or(opts.type_n);
    opts.type_q = cfg.fill(a.type_q, "type_q")?.unwrap_or(opts.type_q);
    let result = if functional {
        recover_functional(&entry.problem, &pt, &opts)
    } else {
        recover(&entry.problem, &pt, &opts)
    }
    .map_err(bif_err)?;
    let config = json!({
        "problem": spec,
        "anchor": anchor,
        "functional": functional,
        "type_n": opts.type_n,
        "type_q": opts.type_q,
    });
    write_outputs(
        &report::envelope("recover", config, report::recovery_json(&result)),
        out.as_deref(),
    )?;
    Ok(0)
}

fn run_certify(a: CertifyArgs, cfg: &Config) -> Result<u8, String> {
    let problem = cfg.fill(a.problem, "problem")?;
    let eps = cfg.fill(a.eps, "eps")?;
    let anchor = cfg.fill(a.anchor, "anchor")?.ok_or("missing --anchor")?;
    let epsilon = cfg.fill(a.epsilon, "epsilon")?.ok_or("missing --epsilon")?;
    let alpha = cfg.fill(a.alpha, "alpha")?.unwrap_or(1e-3);
    let samples = cfg.fill(a.samples, "samples")?.unwrap_or(64);
    let seed = cfg.fill(a.seed, "seed")?.ok_or("missing --seed (sampling requires one)")?;
    let type_n = cfg.fill(a.type_n, "type_n")?.unwrap_or(1);
    let type_q = cfg.fill(a.type_q, "type_q")?.unwrap_or(1);
    let mode_s = cfg
        .fill(a.mode, "mode")?
        .unwrap_or_else(|| "h_uniform".to_string());
    let out = cfg.fill(a.out, "out")?;
    let mode = match mode_s.as_str() {
        "h_uniform" => RadiiMode::HUniform,
        "general" => RadiiMode::General,
        other => return Err(format!("unknown radii mode '{other}'")),
    };
    let spec = problem_spec(problem, eps)?;
    let entry = testbeds::registry::<f64>(&spec).map_err(bif_err)?;
    let pt = parse_point(&anchor, entry.problem.m, entry.problem.n_state, "--anchor")?;
    let frames = choose_frames_with_type(&entry.problem, &pt, type_n, type_q).map_err(bif_err)?;
    let cert = certificate(&entry.problem, &frames, &pt, epsilon, alpha, samples, seed, mode)
        .map_err(bif_err)?;
    let config = json!({
        "problem": spec,
        "anchor": anchor,
        "epsilon": epsilon,
        "alpha": alpha,
        "samples": samples,
        "seed": seed,
        "mode": mode_s,
        "type_n": type_n,
        "type_q": type_q,
    });
    write_outputs(
        &report::envelope("certify", config, report::certificate_json(&cert)),
        out.as_deref(),
    )?;
    Ok(if cert.passes() { 0 } else { 2 })
}

fn run_discretize(a: DiscretizeArgs, cfg: &Config) -> Result<u8, String> {
    let problem = cfg.fill(a.problem, "problem")?;
    let coarse_s = cfg.fill(a.coarse, "coarse")?.ok_or("missing --coarse")?;
    let kind_s = cfg
        .fill(a.kind, "kind")?
        .unwrap_or_else(|| "truncation".to_string());
    let native = cfg.fill_flag(a.native, "native");
    let csv_path = cfg.fill(a.csv, "csv")?;
    let out = cfg.fill(a.out, "out")?;
    let kind = match kind_s.as_str() {
        "truncation" => ProjectionKind::Truncation,
        "injection" => ProjectionKind::Injection,
        "interpolation" => ProjectionKind::Interpolation,
        other => return Err(format!("unknown projection kind '{other}'")),
    };
    let spec = problem_spec(problem, None)?;
    let entry = testbeds::registry::<f64>(&spec).map_err(bif_err)?;
    let truth = entry
        .known_truth
        .clone()
        .ok_or_else(|| format!("'{spec}' has no known bifurcation point to study"))?;
    let coarse: Vec<usize> = coarse_s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("--coarse: cannot parse '{t}'"))
        })
        .collect::<Result<_, _>>()?;
    let fine = entry.problem.n_state;
    let pairs = coarse
        .iter()
        .map(|&c| build_projection::<f64>(fine, c, kind))
        .collect::<Result<Vec<_>, _>>()
        .map_err(bif_err)?;
    let frames = choose_frames(&entry.problem, &truth.point, DEFAULT_RTOL).map_err(bif_err)?;
    let opts = RecoveryOptions::default();
    let rows = if native {
        let family = spec.split('(').next().unwrap_or("").to_string();
        h_study_with(&entry.problem, &pairs, &frames, &truth.point, &opts, |pair| {
            Ok(testbeds::registry::<f64>(&format!("{family}({})", pair.coarse))?.problem)
        })
    } else {
        h_study(&entry.problem, &pairs, &frames, &truth.point, &opts)
    }
    .map_err(bif_err)?;
    if let Some(path) = &csv_path {
        std::fs::write(path, report::study_csv(&rows)).map_err(|e| format!("{path}: {e}"))?;
    }
    let all_admissible = rows.iter().all(|r| r.transfer.admissible);
    let config = json!({
        "problem": spec,
        "coarse": coarse,
        "kind": kind_s,
        "native": native,
    });
    let body = json!({
        "rows": rows.iter().map(report::study_row_json).collect::<Vec<_>>(),
        "all_admissible": all_admissible,
    });
    write_outputs(&report::envelope("discretize", config, body), out.as_deref())?;
    Ok(if all_admissible { 0 } else { 2 })
}

fn run_trace(a: TraceArgs, cfg: &Config) -> Result<u8, String> {
    let problem = cfg.fill(a.problem, "problem")?;
    let eps = cfg.fill(a.eps, "eps")?;
    let anchor = cfg.fill(a.anchor, "anchor")?;
    let point = cfg.fill(a.point, "point")?;
    let rho_s = cfg.fill(a.rho, "rho")?;
    let steps = cfg.fill(a.steps, "steps")?.unwrap_or(60);
    let ds = cfg.fill(a.ds, "ds")?.unwrap_or(0.02);
    let csv_path = cfg.fill(a.csv, "csv")?;
    let out = cfg.fill(a.out, "out")?;
    let spec = problem_spec(problem, eps)?;
    let entry = testbeds::registry::<f64>(&spec).map_err(bif_err)?;
    let (m, n_state) = (entry.problem.m, entry.problem.n_state);
    let (pt, rho) = match (&anchor, &point) {
        (Some(anc), None) => {
            let apt = parse_point(anc, m, n_state, "--anchor")?;
            let rec = recover(&entry.problem, &apt, &RecoveryOptions::default()).map_err(bif_err)?;
            (rec.point, rec.rho)
        }
        (None, Some(p)) => {
            let pt = parse_point(p, m, n_state, "--point")?;
            let rho = match &rho_s {
                Some(s) => {
                    let v = parse_vec(s, "--rho")?;
                    if v.len() != n_state {
                        return Err(format!("--rho: expected {n_state} components, got {}", v.len()));
                    }
                    DVector::from_row_slice(&v)
                }
                None => DVector::zeros(n_state),
            };
            (pt, rho)
        }
        _ => return Err("trace needs exactly one of --anchor (recover first) or --point".into()),
    };
    let pts = trace_branches(&entry.problem, &rho, &pt, steps, ds).map_err(bif_err)?;
    if let Some(path) = &csv_path {
        std::fs::write(path, report::trace_csv(&pts)).map_err(|e| format!("{path}: {e}"))?;
    }
    let branches = pts.iter().map(|p| p.branch).max().map_or(0, |b| b + 1);
    let config = json!({
        "problem": spec,
        "anchor": anchor,
        "point": point,
        "steps": steps,
        "ds": ds,
    });
    let body = json!({
        "records": pts.len(),
        "branches": branches,
        "lambda": pts.first().map(|p| p.lambda),
        "rho_norm": rho.norm(),
    });
    write_outputs(&report::envelope("trace", config, body), out.as_deref())?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are successes; usage errors exit 1
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let map = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => parse_config(&text),
            Err(e) => {
                eprintln!("error: {path}: {e}");
                return ExitCode::from(1);
            }
        },
        None => BTreeMap::new(),
    };
    let section = match &cli.command {
        Command::List => "list",
        Command::Classify(_) => "classify",
        Command::Recover(_) => "recover",
        Command::Certify(_) => "certify",
        Command::Discretize(_) => "discretize",
        Command::Trace(_) => "trace",
    };
    let cfg = Config { map, section };
    let result = match cli.command {
        Command::List => run_list(),
        Command::Classify(a) => run_classify(a, &cfg),
        Command::Recover(a) => run_recover(a, &cfg),
        Command::Certify(a) => run_certify(a, &cfg),
        Command::Discretize(a) => run_discretize(a, &cfg),
        Command::Trace(a) => run_trace(a, &cfg),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
