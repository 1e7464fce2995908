//! The four subcommands. Each reads a validated [`RunConfig`], writes its
//! files through a [`Sink`] and reports an [`Outcome`] or a [`Failure`].

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use ks_core::carleman::{
    carleman_audit, conjugate_decompose, inner_product_ledger, lambda_scan, make_default_weight,
    random_ensemble, AuditRow, CarlemanConfig, EnsembleSpec, LowerOrder, WDerivatives,
};
use ks_core::grid::{extract_traces, GridSpec, ScalarField1D, Trajectory};
use ks_core::inverse::{recover_gamma, stability_report, synthesize_measurements, InverseConfig};
use ks_core::linear::{BoundaryData, CoefficientField, LinearSolverConfig};
use ks_core::nonlinear::{solve_ks, NonlinearSolveConfig, PicardReport};
use ks_core::KsError;

use crate::config::{parse_expr, Command, ConfigError, RunConfig};
use crate::output::{Cell, Sink};

pub enum Outcome {
    Success,
    /// The run completed but its pass criterion failed.
    CheckFailed(String),
}

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Solver(KsError),
    Io(std::io::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<KsError> for Failure {
    fn from(e: KsError) -> Self {
        Failure::Solver(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;
pub const EXIT_INF_CONDITION: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;
pub const EXIT_RUNTIME: i32 = 6;

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Io(_) => EXIT_RUNTIME,
            Failure::Solver(e) => match e {
                KsError::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
                KsError::HypothesisViolation { .. } => EXIT_HYPOTHESIS,
                KsError::InfConditionViolated { .. } => EXIT_INF_CONDITION,
                // bad inputs that survive config validation
                KsError::InvalidInput(_)
                | KsError::InvalidGrid(_)
                | KsError::GridTooCoarse { .. }
                | KsError::CompatibilityViolation(_)
                | KsError::NonFinite(_)
                | KsError::LengthMismatch { .. }
                | KsError::GridMismatch(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e}"),
            Failure::Solver(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    cfg.validate(cmd)?;
    let mut sink = Sink::new(out, cfg.output.wants("csv"), cfg.output.wants("json"))?;
    let start = Instant::now();
    let mut ctx = Ctx {
        cfg,
        sink: &mut sink,
        start,
    };
    match cmd {
        Command::Simulate => simulate(&mut ctx),
        Command::CarlemanAudit => audit(&mut ctx),
        Command::Invert => invert(&mut ctx),
        Command::StabilityScan => stability_scan(&mut ctx),
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    sink: &'a mut Sink,
    start: Instant,
}

impl Ctx<'_> {
    fn report(&mut self, seed: Value, results: Value, mut timings: Value) -> Result<(), Failure> {
        if self.cfg.output.wall_clock {
            timings["wall_seconds"] = json!(self.start.elapsed().as_secs_f64());
        }
        let report = json!({
            "config": serde_json::to_value(self.cfg).expect("config serializes"),
            "seed": seed,
            "results": results,
            "timings": timings,
        });
        self.sink.json("report.json", &report)?;
        Ok(())
    }
}

fn grid(cfg: &RunConfig) -> Result<GridSpec, Failure> {
    Ok(GridSpec::new(cfg.grid.nx, cfg.grid.nt, cfg.grid.t_final)?)
}

fn field(grid: GridSpec, name: &str, src: &str) -> Result<ScalarField1D, Failure> {
    let e = parse_expr(name, src, false)?;
    Ok(ScalarField1D::from_fn(grid, |x| e.eval(x, 0.0))?)
}

fn coefficients(cfg: &RunConfig, grid: GridSpec, gamma_src: &str) -> Result<CoefficientField, Failure> {
    let sigma = field(grid, "coefficients.sigma", &cfg.coefficients.sigma)?;
    let gamma = field(grid, "gamma", gamma_src)?;
    Ok(CoefficientField::with_certified_min(sigma, gamma)?)
}

fn boundary_data(cfg: &RunConfig, grid: GridSpec) -> Result<BoundaryData, Failure> {
    let d = cfg.data.as_ref().expect("validated");
    let series = |name: &str, src: &str| -> Result<Vec<f64>, Failure> {
        let e = parse_expr(name, src, true)?;
        Ok(grid.ts().iter().map(|&t| e.eval(0.0, t)).collect())
    };
    let h = [
        series("data.h1", &d.h1)?,
        series("data.h2", &d.h2)?,
        series("data.h3", &d.h3)?,
        series("data.h4", &d.h4)?,
    ];
    let y0 = field(grid, "data.y0", &d.y0)?;
    let ge = parse_expr("data.g", &d.g, true)?;
    let g = Trajectory::from_fn(grid, |t, x| ge.eval(x, t))?;
    Ok(BoundaryData::new(h, y0, g)?)
}

fn forward_cfg(cfg: &RunConfig) -> NonlinearSolveConfig {
    let s = &cfg.solver;
    NonlinearSolveConfig {
        max_picard: s.max_picard,
        picard_tol: s.picard_tol,
        divergence_window: s.divergence_window,
        linear: LinearSolverConfig {
            lin_tol: s.lin_tol,
            comp_tol: s.comp_tol,
        },
        ..Default::default()
    }
}

fn picard_rows(rep: &PicardReport) -> Vec<Vec<Cell>> {
    rep.update_norms
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let ratio = if k == 0 { f64::NAN } else { rep.ratios[k - 1] };
            vec![Cell::U(k as u64 + 1), Cell::F(*u), Cell::F(ratio)]
        })
        .collect()
}

fn simulate(ctx: &mut Ctx) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let g = grid(cfg)?;
    let coeff = coefficients(cfg, g, &cfg.coefficients.gamma)?;
    let bd = boundary_data(cfg, g)?;
    let (y, rep) = match solve_ks(&coeff, &bd, &forward_cfg(cfg), &g) {
        Ok(v) => v,
        Err(KsError::NoConvergence { reason, report }) => {
            // partial diagnostics before reporting the failure
            ctx.sink
                .csv("picard.csv", &["iter", "update_norm", "ratio"], picard_rows(&report))?;
            ctx.report(
                Value::Null,
                json!({ "status": "no_convergence", "reason": reason, "picard": *report }),
                json!({ "picard_iterations": report.iterations }),
            )?;
            return Err(KsError::NoConvergence { reason, report }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let exact = match cfg.data.as_ref().and_then(|d| d.exact.as_ref()) {
        Some(src) => Some(parse_expr("data.exact", src, true)?),
        None => None,
    };
    let mut max_err = 0.0_f64;
    let mut rows = Vec::with_capacity(g.t_len() * g.x_len());
    for n in 0..g.t_len() {
        for i in 0..g.x_len() {
            let (t, x, v) = (g.t(n), g.x(i), y.at(n, i));
            let mut row = vec![Cell::F(t), Cell::F(x), Cell::F(v)];
            if let Some(e) = &exact {
                let ex = e.eval(x, t);
                max_err = max_err.max((v - ex).abs());
                row.extend([Cell::F(ex), Cell::F((v - ex).abs())]);
            }
            rows.push(row);
        }
    }
    let header: &[&str] = if exact.is_some() {
        &["t", "x", "y", "exact", "abs_error"]
    } else {
        &["t", "x", "y"]
    };
    ctx.sink.csv("trajectory.csv", header, rows)?;
    let tr = extract_traces(&y)?;
    ctx.sink.csv(
        "traces.csv",
        &["t", "yxx0", "yxxx0"],
        (0..g.t_len()).map(|n| vec![Cell::F(g.t(n)), Cell::F(tr.second[n]), Cell::F(tr.third[n])]),
    )?;
    ctx.sink
        .csv("picard.csv", &["iter", "update_norm", "ratio"], picard_rows(&rep))?;
    ctx.report(
        Value::Null,
        json!({
            "status": "converged",
            "iterations": rep.iterations,
            "final_residual": rep.final_residual,
            "max_ratio": rep.max_ratio(),
            "max_abs_error": exact.as_ref().map(|_| max_err),
            "picard": rep,
        }),
        json!({ "picard_iterations": rep.iterations }),
    )?;
    Ok(Outcome::Success)
}

fn audit(ctx: &mut Ctx) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let c = cfg.carleman.as_ref().expect("validated");
    let g = grid(cfg)?;
    let sigma = field(g, "coefficients.sigma", &cfg.coefficients.sigma)?;
    let weight = make_default_weight(g, &sigma, c.t0)?;
    let eta = c.eta.unwrap_or(g.t_final() / 10.0);
    let ccfg = CarlemanConfig {
        lambda_grid: c.lambdas.clone(),
        eta,
        ledger_tol: c.ledger_tol,
        c_cap: c.c_cap,
        lambda0: c.lambda0.unwrap_or(c.lambdas[0]),
        ..CarlemanConfig::with_defaults(g.t_final())
    };
    ccfg.validate(g.t_final())?;
    let spec = EnsembleSpec {
        members: c.members,
        modes: c.modes,
        seed: c.seed,
    };
    let members: Vec<WDerivatives> = random_ensemble(&spec)?
        .iter()
        .map(|m| m.derivatives(g, eta))
        .collect::<Result<_, _>>()?;
    let audits: Vec<Vec<AuditRow>> = members
        .par_iter()
        .map(|wd| carleman_audit(wd, &weight, &LowerOrder::zero(), &ccfg).map(|r| r.rows))
        .collect::<Result<_, _>>()?;

    // per λ: the member with the largest constant, and whether every member passes
    let mut rows = Vec::new();
    let mut worst = Vec::new();
    for (k, &lambda) in ccfg.lambda_grid.iter().enumerate() {
        let (idx, row) = audits
            .iter()
            .enumerate()
            .map(|(m, a)| (m, a[k]))
            .filter(|(_, r)| !r.degenerate)
            .max_by(|a, b| a.1.c_hat.total_cmp(&b.1.c_hat))
            .unwrap_or((0, audits[0][k]));
        let pass = audits.iter().all(|a| a[k].pass);
        rows.push((lambda, row, pass));
        worst.push(json!({ "lambda": lambda, "member": idx, "c_hat": row.c_hat }));
    }
    let all_pass = rows
        .iter()
        .filter(|(l, _, _)| *l >= ccfg.lambda0)
        .all(|(_, _, p)| *p);
    ctx.sink.csv(
        "audit.csv",
        &["lambda", "lhs", "rhs_interior", "rhs_boundary0", "rhs_boundary1", "c_hat", "pass"],
        rows.iter().map(|(l, r, p)| {
            vec![
                Cell::F(*l),
                Cell::F(r.lhs),
                Cell::F(r.rhs_interior),
                Cell::F(r.rhs_boundary0),
                Cell::F(r.rhs_boundary1),
                Cell::F(r.c_hat),
                Cell::B(*p),
            ]
        }),
    )?;

    let scan = lambda_scan(&members, &weight, &ccfg.lambda_grid, eta)?;
    let hardest = scan
        .rows
        .iter()
        .min_by(|a, b| a.min_delta_hat.total_cmp(&b.min_delta_hat))
        .expect("non-empty lambda grid");
    let wl = weight.with_lambda(hardest.lambda);
    let wd = &members[hardest.worst_member];
    let ledger = inner_product_ledger(wd, &wl, eta)?;
    let identity = conjugate_decompose(wd, &wl, &LowerOrder::zero(), eta)?.identity_residual;
    let mut ledger_rows = vec![
        vec![Cell::S("lambda".into()), Cell::F(hardest.lambda)],
        vec![Cell::S("member".into()), Cell::U(hardest.worst_member as u64)],
        vec![Cell::S("identity_residual".into()), Cell::F(identity)],
    ];
    ledger_rows.extend(
        ledger
            .terms()
            .into_iter()
            .map(|(k, v)| vec![Cell::S(k.into()), Cell::F(v)]),
    );
    ctx.sink.csv("ledger.csv", &["term", "value"], ledger_rows)?;
    let ledger_ok = scan.rows.iter().all(|r| r.max_mismatch <= ccfg.ledger_tol);
    ctx.report(
        json!(c.seed),
        json!({
            "all_pass": all_pass,
            "lambda0_declared": ccfg.lambda0,
            "lambda0_empirical": scan.lambda0,
            "ledger_within_tolerance": ledger_ok,
            "weight_r": weight.r(),
            "weight_epsilon": weight.epsilon(),
            "eta": eta,
            "worst_audit_member": worst,
            "scan": scan.rows,
        }),
        json!({ "members": members.len(), "lambdas": ccfg.lambda_grid.len() }),
    )?;
    Ok(if all_pass {
        Outcome::Success
    } else {
        Outcome::CheckFailed("audit rows fail for lambda >= lambda0".into())
    })
}

fn inverse_cfg(cfg: &RunConfig) -> InverseConfig {
    let v = cfg.inverse.as_ref().expect("validated");
    InverseConfig {
        m1: v.m1,
        m2: v.m2,
        r_floor: v.r_floor,
        tikhonov_alpha: v.tikhonov_alpha,
        max_outer: v.max_outer,
        grad_tol: v.grad_tol,
        modes: v.modes,
        fd_step: v.fd_step,
        forward: forward_cfg(cfg),
    }
}

fn invert(ctx: &mut Ctx) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let v = cfg.inverse.as_ref().expect("validated");
    let g = grid(cfg)?;
    let truth = coefficients(cfg, g, &cfg.coefficients.gamma)?;
    let bd = boundary_data(cfg, g)?;
    let icfg = inverse_cfg(cfg);
    let meas = synthesize_measurements(&truth, &bd, &g, v.t0, v.noise, v.seed, &icfg.forward)?;
    let gamma_tilde = field(g, "inverse.gamma_tilde", &v.gamma_tilde)?;
    let base = truth.with_gamma(gamma_tilde.clone())?;
    let (gamma_hat, rep) = recover_gamma(&meas, &base, &bd, &g, &icfg)?;

    let gt = truth.gamma().values();
    ctx.sink.csv(
        "gamma_hat.csv",
        &["x", "gamma_true", "gamma_tilde", "gamma_hat"],
        (0..g.x_len()).map(|i| {
            vec![
                Cell::F(g.x(i)),
                Cell::F(gt[i]),
                Cell::F(gamma_tilde.values()[i]),
                Cell::F(gamma_hat.values()[i]),
            ]
        }),
    )?;
    ctx.sink.csv(
        "recovery.csv",
        &["iter", "J", "grad_norm", "l2_error"],
        rep.trace.iter().map(|r| {
            vec![
                Cell::U(r.iter as u64),
                Cell::F(r.objective),
                Cell::F(r.grad_norm),
                Cell::F(r.l2_error.unwrap_or(f64::NAN)),
            ]
        }),
    )?;
    ctx.sink.csv(
        "measurements.csv",
        &["t", "trace2", "trace3"],
        (0..g.t_len()).map(|n| vec![Cell::F(g.t(n)), Cell::F(meas.trace2[n]), Cell::F(meas.trace3[n])]),
    )?;
    ctx.sink.csv(
        "snapshot.csv",
        &["x", "y"],
        (0..g.x_len()).map(|i| vec![Cell::F(g.x(i)), Cell::F(meas.snapshot[i])]),
    )?;
    ctx.report(
        json!(v.seed),
        json!({
            "objective": rep.objective,
            "l2_error": rep.l2_error,
            "relative_error": rep.relative_error,
            "stop": rep.stop,
            "max_outer_reached": rep.stop == ks_core::inverse::StopReason::MaxOuterReached,
            "coefficients": rep.coefficients,
            "snapshot_time": meas.snapshot_time,
            "snapshot_index": meas.snapshot_index,
            "noise_level": meas.noise_level,
        }),
        json!({ "forward_solves": rep.forward_solves, "outer_iterations": rep.trace.len() }),
    )?;
    Ok(Outcome::Success)
}

/// Least-squares slope of `log lhs` against `log middle`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let p: Vec<(f64, f64)> = points
        .iter()
        .filter(|(l, m)| *l > 0.0 && *m > 0.0)
        .map(|(l, m)| (m.ln(), l.ln()))
        .collect();
    if p.len() < 2 {
        return None;
    }
    let n = p.len() as f64;
    let (mx, my) = (
        p.iter().map(|q| q.0).sum::<f64>() / n,
        p.iter().map(|q| q.1).sum::<f64>() / n,
    );
    let sxx: f64 = p.iter().map(|q| (q.0 - mx).powi(2)).sum();
    let sxy: f64 = p.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn stability_scan(ctx: &mut Ctx) -> Result<Outcome, Failure> {
    let cfg = ctx.cfg;
    let v = cfg.inverse.as_ref().expect("validated");
    let g = grid(cfg)?;
    let coeff = coefficients(cfg, g, &cfg.coefficients.gamma)?;
    let bd = boundary_data(cfg, g)?;
    let icfg = inverse_cfg(cfg);
    let shape = field(g, "inverse.perturbation", &v.perturbation)?;
    let reports = v
        .amplitudes
        .iter()
        .map(|&s| {
            let gt: Vec<f64> = coeff
                .gamma()
                .values()
                .iter()
                .zip(shape.values())
                .map(|(a, b)| a + s * b)
                .collect();
            stability_report(&coeff, &ScalarField1D::new(gt, g)?, &bd, &g, v.t0, &icfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let row_ok = |r: &ks_core::inverse::StabilityReport| r.degenerate || r.lhs <= v.c_cap * r.middle;
    ctx.sink.csv(
        "stability.csv",
        &["s", "lhs", "middle", "far_rhs", "c_lower", "c_upper", "degenerate"],
        v.amplitudes.iter().zip(&reports).map(|(s, r)| {
            vec![
                Cell::F(*s),
                Cell::F(r.lhs),
                Cell::F(r.middle),
                Cell::F(r.far_rhs),
                Cell::F(r.c_lower),
                Cell::F(r.c_upper),
                Cell::B(r.degenerate),
            ]
        }),
    )?;
    let slope = loglog_slope(&reports.iter().map(|r| (r.lhs, r.middle)).collect::<Vec<_>>());
    let all_ok = reports.iter().all(row_ok);
    ctx.report(
        Value::Null,
        json!({
            "all_pass": all_ok,
            "loglog_slope": slope,
            "rows": v.amplitudes.iter().zip(&reports).map(|(s, r)| json!({ "s": s, "report": r })).collect::<Vec<_>>(),
        }),
        json!({ "forward_solves": 2 * reports.len() }),
    )?;
    Ok(if all_ok {
        Outcome::Success
    } else {
        Outcome::CheckFailed(format!("lhs > {} * middle on some row", v.c_cap))
    })
}
