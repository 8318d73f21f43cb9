use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use kslayers_core::analysis::{self, Bands, FixedPointOptions, ResidualEnvelope, ResidualReport};
use kslayers_core::ansatz::multilayer::{multilayer_ansatz, MultilayerOptions};
use kslayers_core::ansatz::{build_ansatz, AnsatzOptions};
use kslayers_core::bvp::{self, BranchPoint, ContinuationOptions};
use kslayers_core::greens::solve_layers;
use kslayers_core::nondegen::sweep_point;
use kslayers_core::{GridSpec, KsError, Profile};

use crate::args::*;
use crate::output::{num, Table};

/// Exit status 2 for bad input, 3 for solver failures.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<KsError> for Failure {
    fn from(e: KsError) -> Self {
        Self { code: if e.is_validation() { 2 } else { 3 }, message: e.to_string() }
    }
}

/// What a command produced: a JSON result and optionally a table.
pub struct Outcome {
    pub result: Value,
    pub table: Option<Table>,
    /// Solver error raised after partial output was collected.
    pub failure: Option<Failure>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn done(result: Value, table: Option<Table>) -> Result<Outcome, Failure> {
    Ok(Outcome { result, table, failure: None })
}

pub fn run(command: &Command, config: &Value) -> Result<Outcome, Failure> {
    match command {
        Command::Green(a) => green(a),
        Command::Nondegen(a) => nondegen(a, config),
        Command::Ansatz(a) => ansatz(a, config),
        Command::Residual(a) => residual(a),
        Command::Fixpoint(a) => fixpoint(a, config),
        Command::Solve(a) => solve(a, config),
        Command::Branch(a) => branch(a, config),
        Command::Report(a) => report(a),
    }
}

fn green(a: &GreenArgs) -> Result<Outcome, Failure> {
    let (cfg, g) = solve_layers(a.k, a.b, a.outer.mode())?;
    let result = json!({
        "config": cfg,
        "free_alphas": cfg.free_alphas(),
        "reflection_defects": g.reflection_defects(),
    });
    done(result, None)
}

fn nondegen(a: &NondegenArgs, config: &Value) -> Result<Outcome, Failure> {
    if a.kmax == 0 || a.b_grid.is_empty() {
        return Err(Failure::usage("nondegen needs kmax >= 1 and a nonempty b grid"));
    }
    let jobs: Vec<(usize, f64)> = (1..=a.kmax).flat_map(|k| a.b_grid.iter().map(move |b| (k, *b))).collect();
    // Order is fixed by `jobs`, so the output does not depend on the thread count.
    let rows: Vec<_> = jobs.par_iter().map(|(k, b)| sweep_point(*k, *b)).collect::<Result<Vec<_>, _>>()?;
    let mut t = Table::new("nondegen", config, &["k", "b", "det", "cond", "alphas"]);
    for r in &rows {
        let alphas: Vec<String> = r.alphas.iter().map(|x| num(*x)).collect();
        t.row(&[r.k.to_string(), num(r.b), num(r.det), num(r.cond), alphas.join(";")]);
    }
    done(to_value(&rows), Some(t))
}

/// Profile, bands and parameters of the single- or multilayer ansatz.
struct Built {
    profile: Profile,
    bands: Bands,
    params: Value,
}

fn build(lambda: f64, shape: &AnsatzShape) -> Result<Built, Failure> {
    match shape.k {
        None => {
            let a = build_ansatz(lambda, AnsatzOptions { eta: shape.eta, nodes: shape.nodes })?;
            let bands = Bands::from(&a.params);
            let params = json!({ "params": a.params, "matching": a.report, "green_b": a.green_b() });
            Ok(Built { profile: a.profile, bands, params })
        }
        Some(k) => {
            let opts = MultilayerOptions { eta: shape.eta, nodes: shape.nodes, ..MultilayerOptions::default() };
            let m = multilayer_ansatz(k, lambda, shape.outer.mode(), opts)?;
            let bands = Bands { eps: m.eps, delta: m.delta, delta1: m.delta1, mu: m.mu0 };
            let params = json!({
                "k": m.k,
                "outer": m.outer_mode.name(),
                "lambda": m.lambda,
                "eps": m.eps,
                "b": m.b,
                "config": m.config,
                "parameters": m.parameters,
                "constants": m.constants,
                "radii": m.radii,
                "widths": m.widths,
                "delta": m.delta,
                "delta1": m.delta1,
                "r_tilde": m.r_tilde,
                "mu0": m.mu0,
                "transition_gaps": m.transition_gaps,
                "green_gap": m.green_gap,
            });
            Ok(Built { profile: m.profile, bands, params })
        }
    }
}

fn profile_table(command: &str, config: &Value, p: &Profile) -> Table {
    let mut t = Table::new(command, config, &["r", "u", "du", "d2u", "piece"]);
    for i in 0..p.len() {
        t.row(&[num(p.grid[i]), num(p.values[i]), num(p.d1[i]), num(p.d2[i]), p.piece[i].label()]);
    }
    t
}

fn ansatz(a: &AnsatzArgs, config: &Value) -> Result<Outcome, Failure> {
    let b = build(a.lambda, &a.shape)?;
    let t = profile_table("ansatz", config, &b.profile);
    done(b.params, Some(t))
}

#[derive(Serialize)]
struct ResidualEntry {
    lambda: f64,
    eps: f64,
    report: ResidualReport,
    envelope: ResidualEnvelope,
}

fn residual(a: &ResidualArgs) -> Result<Outcome, Failure> {
    let mut entries = Vec::new();
    for &lambda in &a.lambda {
        let b = build(lambda, &a.shape)?;
        let (field, report) = analysis::residual(&b.profile, lambda)?;
        let envelope = analysis::residual_envelope(&b.profile.grid, &field, lambda, &b.bands);
        entries.push(ResidualEntry { lambda, eps: b.bands.eps, report, envelope });
    }
    // ‖R‖_** ≈ C ε^{1+σ} fitted over the ladder.
    let sigma_fit = (entries.len() >= 2).then(|| {
        let eps: Vec<f64> = entries.iter().map(|e| e.eps).collect();
        let ss: Vec<f64> = entries.iter().map(|e| e.report.starstar).collect();
        analysis::log_slope(&eps, &ss) - 1.0
    });
    for e in &mut entries {
        e.report.sigma_fit = sigma_fit;
    }
    done(json!({ "entries": entries, "sigma_fit": sigma_fit }), None)
}

fn fixpoint(a: &FixpointArgs, config: &Value) -> Result<Outcome, Failure> {
    let b = build(a.lambda, &a.shape)?;
    let opts = FixedPointOptions { rho: a.rho, sigma: a.sigma, max_iter: a.max_iter, tol: a.tol };
    let fp = analysis::fixed_point(&b.profile, a.lambda, opts)?;
    let mut t = Table::new("fixpoint", config, &["iteration", "phi_norm", "increment", "factor"]);
    for it in &fp.history {
        t.row(&[it.iteration.to_string(), num(it.phi_norm), num(it.increment), it.factor.map(num).unwrap_or_default()]);
    }
    let result = json!({
        "eps": fp.eps,
        "rho": fp.rho,
        "radius": fp.radius,
        "contraction_factor": fp.contraction_factor,
        "iterations": fp.history.len(),
        "raw": fp.raw,
        "corrected": fp.corrected,
        "drop": fp.drop,
    });
    done(result, Some(t))
}

/// Reads `r` and `u` columns and an optional `# lambda=` header from a profile CSV.
pub fn read_profile(path: &str) -> Result<(Profile, Option<f64>), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {path}: {e}")))?;
    let mut lambda = None;
    let mut header: Option<Vec<String>> = None;
    let (mut r, mut u) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(v) = c.trim().strip_prefix("lambda=") {
                lambda = v.parse().ok();
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => header = Some(cells.iter().map(|s| s.to_string()).collect()),
            Some(h) => {
                let col = |name: &str| h.iter().position(|c| c == name);
                let (Some(ir), Some(iu)) = (col("r"), col("u")) else {
                    return Err(Failure::usage(format!("{path}: header needs r and u columns")));
                };
                let parse = |i: usize| -> Result<f64, Failure> {
                    cells.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Failure::usage(format!("{path}:{}: bad number", n + 1)))
                };
                r.push(parse(ir)?);
                u.push(parse(iu)?);
            }
        }
    }
    Ok((Profile::from_values(r, u)?, lambda))
}

fn point_summary(p: &BranchPoint) -> Value {
    json!({
        "lambda": p.lambda,
        "mu": p.mu,
        "u0": p.u0_value,
        "zero_count": p.zero_count,
        "newton_iters": p.newton_iters,
        "residual_norm": p.residual_norm,
        "history": p.history,
        "convergence_orders": bvp::convergence_orders(&p.history),
        "mass": p.mass(1.0),
    })
}

fn solve(a: &SolveArgs, config: &Value) -> Result<Outcome, Failure> {
    let guess = match a.init {
        Init::Ansatz => build(a.lambda, &a.shape)?.profile,
        Init::Constant => {
            let grid = GridSpec::new(a.shape.nodes, 1e-2, 1e-2).build()?;
            let n = grid.len();
            Profile::from_values(grid, vec![a.value.unwrap_or(0.0); n])?
        }
        Init::File => {
            let path = a.input.as_deref().ok_or_else(|| Failure::usage("--init file needs --in <profile.csv>"))?;
            read_profile(path)?.0
        }
    };
    let p = bvp::solve_bvp(a.lambda, &guess)?;
    // The config echo carries `# lambda=`, which `report` reads back.
    let t = profile_table("solve", config, &p.profile);
    done(point_summary(&p), Some(t))
}

fn branch(a: &BranchArgs, config: &Value) -> Result<Outcome, Failure> {
    let opts = ContinuationOptions { nodes: a.nodes, ..ContinuationOptions::default() };
    let (points, failure) = match bvp::bifurcation_branch(a.i, a.sign.as_i32(), a.steps, &opts) {
        Ok(b) => (b.points, None),
        Err((e, pts)) => {
            if pts.is_empty() {
                return Err(e.into());
            }
            (pts, Some(Failure::from(e)))
        }
    };
    let mut t = Table::new("branch", config, &["mu", "lambda", "u0", "zero_count"]);
    for p in &points {
        t.row(&[num(p.mu.unwrap_or(f64::NAN)), num(p.lambda), num(p.u0_value), p.zero_count.to_string()]);
    }
    let summary: Vec<Value> = points.iter().map(|p| json!({"mu": p.mu, "lambda": p.lambda, "u0": p.u0_value, "zero_count": p.zero_count, "newton_iters": p.newton_iters})).collect();
    let result = json!({ "index": a.i, "sign": a.sign.as_i32(), "points": summary });
    Ok(Outcome { result, table: Some(t), failure })
}

fn report(a: &ReportArgs) -> Result<Outcome, Failure> {
    let (profile, header_lambda) = read_profile(&a.input)?;
    let lambda = a.lambda.or(header_lambda).ok_or_else(|| Failure::usage("profile has no lambda header; pass --lambda"))?;
    let p = bvp::solve_bvp(lambda, &profile)?;
    let eps = kslayers_core::ansatz::solve_epsilon(lambda)?;
    let (cfg, _) = solve_layers(a.k, 2.0 * std::f64::consts::SQRT_2 * eps, a.outer.mode())?;
    let rep = bvp::concentration_report(&p, &cfg)?;
    done(json!({ "report": rep, "reference": cfg, "newton_iters": p.newton_iters }), None)
}
