//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ks_core::carleman::{
    bump_member, carleman_audit, conjugate_decompose, lambda_scan, make_default_weight,
    random_ensemble, CarlemanConfig, CarlemanWeight, EnsembleSpec, LowerOrder, ScanReport,
    WDerivatives,
};
use ks_core::grid::{l2q_squared, GridSpec, ScalarField1D, Trajectory};
use ks_core::inverse::reference_problem;
use ks_core::linear::{clamped_boundary_values, BoundaryData, CoefficientField, LinearSolver};
use ks_core::nonlinear::{smallness_sweep, solve_ks, NonlinearSolveConfig};
use ks_core::{Hypothesis, KsError};
use serde_json::Value;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn kslab(sub: &str, config: &str, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_kslab"))
        .args([sub, "--config"])
        .arg(configs().join(config))
        .arg("--out")
        .arg(out)
        .output()
        .expect("kslab runs")
        .status
        .code()
        .expect("exit code")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn q(x: f64) -> f64 {
    x * x * (1.0 - x) * (1.0 - x)
}
fn q1(x: f64) -> f64 {
    2.0 * x - 6.0 * x * x + 4.0 * x * x * x
}
fn q2(x: f64) -> f64 {
    2.0 - 12.0 * x + 12.0 * x * x
}

fn max_err(z: &Trajectory, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let g = z.grid();
    let mut m = 0.0_f64;
    for n in 0..g.t_len() {
        for i in 0..g.x_len() {
            m = m.max((z.at(n, i) - exact(g.t(n), g.x(i))).abs());
        }
    }
    m
}

fn nonlinear_problem(g: GridSpec, delta: f64) -> ks_core::Result<(CoefficientField, BoundaryData)> {
    let c = CoefficientField::constant(g, 1.0, 1.0)?;
    let src = Trajectory::from_fn(g, |t, x| {
        let e = (-t).exp();
        delta * e * (24.0 - q(x) + q2(x)) + delta * delta * e * e * q(x) * q1(x)
    })?;
    let y0 = ScalarField1D::from_fn(g, |x| delta * q(x))?;
    Ok((c, BoundaryData::homogeneous(y0, src)?))
}

fn manufactured_convergence() -> Verdict {
    let linear = |nx: usize, nt: usize| {
        let g = GridSpec::new(nx, nt, 1.0).unwrap();
        let c = CoefficientField::constant(g, 1.0, 0.0).unwrap();
        let f = Trajectory::from_fn(g, |t, x| (-t).exp() * (24.0 - q(x))).unwrap();
        let z0 = ScalarField1D::from_fn(g, q).unwrap();
        let z = LinearSolver::default().solve_principal(&c, &f, &z0, &g).unwrap();
        max_err(&z, |t, x| (-t).exp() * q(x))
    };
    let nonlinear = |nx: usize, nt: usize| {
        let g = GridSpec::new(nx, nt, 1.0).unwrap();
        let (c, bd) = nonlinear_problem(g, 1e-2).unwrap();
        let (y, _) = solve_ks(&c, &bd, &NonlinearSolveConfig::default(), &g).unwrap();
        max_err(&y, |t, x| 1e-2 * (-t).exp() * q(x))
    };
    let timed = |f: &dyn Fn(usize, usize) -> f64| {
        let s = Instant::now();
        let (a, b) = (f(64, 128), f(128, 256));
        ((a / b).log2(), s.elapsed())
    };
    let (p_lin, t_lin) = timed(&linear);
    let (p_nl, t_nl) = timed(&nonlinear);
    let limit = Duration::from_secs(60);
    check(
        p_lin >= 1.7 && p_nl >= 1.7 && t_lin <= limit && t_nl <= limit,
        format!(
            "orders linear {p_lin:.3}, nonlinear {p_nl:.3}; pair times {:.2}s, {:.2}s",
            t_lin.as_secs_f64(),
            t_nl.as_secs_f64()
        ),
    )
}

fn fixed_point_behavior() -> Verdict {
    let g = GridSpec::new(64, 128, 1.0).unwrap();
    let cfg = NonlinearSolveConfig::default();
    let (c, bd) = nonlinear_problem(g, 1e-2).unwrap();
    let (_, rep) = solve_ks(&c, &bd, &cfg, &g).unwrap();
    let contracting = rep.ratios.iter().all(|r| *r < 1.0);
    let deltas = [1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4];
    let sweep = smallness_sweep(&deltas, &cfg, &g, |d| nonlinear_problem(g, d)).unwrap();
    let ratios: Vec<f64> = sweep.rows[..3.min(sweep.rows.len())]
        .iter()
        .map(|r| r.max_ratio.unwrap_or(f64::NAN))
        .collect();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3e}")).collect();
    let growing = ratios.len() == 3 && ratios.windows(2).all(|w| w[1] > w[0]);
    check(
        contracting && growing && sweep.threshold.is_some(),
        format!(
            "delta=1e-2 max ratio {:.3e}; sweep max ratios [{}]; threshold {:?}",
            rep.max_ratio().unwrap_or(0.0),
            shown.join(", "),
            sweep.threshold
        ),
    )
}

fn lifting_exactness() -> Verdict {
    let g = GridSpec::new(64, 128, 1.0).unwrap();
    let (c, bd) = reference_problem(g, 0.5).unwrap();
    let (y, _) = solve_ks(&c, &bd, &NonlinearSolveConfig::default(), &g).unwrap();
    let mut worst = 0.0_f64;
    for n in 0..g.t_len() {
        let b = clamped_boundary_values(y.row(n), g.dx());
        for (k, v) in b.iter().enumerate() {
            worst = worst.max((v - bd.h(k)[n]).abs());
        }
    }
    check(worst <= 1e-8, format!("max trace mismatch {worst:.3e}"))
}

const ETA: f64 = 0.2;

fn weight(nx: usize) -> (GridSpec, CarlemanWeight) {
    let g = GridSpec::new(nx, 2 * nx, 2.0).unwrap();
    let w = make_default_weight(g, &ScalarField1D::constant(g, 1.0), 1.0).unwrap();
    (g, w)
}

fn conjugation_identity() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for lambda in [2.0, 8.0] {
        let consistency = |nx: usize| {
            let (g, w) = weight(nx);
            let w = w.with_lambda(lambda);
            let m = bump_member();
            let exact =
                conjugate_decompose(&m.derivatives(g, ETA).unwrap(), &w, &LowerOrder::zero(), ETA)
                    .unwrap();
            let fd = WDerivatives::from_trajectory(&m.trajectory(g, ETA).unwrap()).unwrap();
            let d = conjugate_decompose(&fd, &w, &LowerOrder::zero(), ETA).unwrap();
            let split = d.p1.axpy(1.0, &d.p2).unwrap().axpy(1.0, &d.r).unwrap();
            let rel = (l2q_squared(&split.sub(&exact.direct).unwrap())
                / l2q_squared(&exact.direct))
            .sqrt();
            (exact.identity_residual, rel)
        };
        let (id128, c128) = consistency(128);
        let (_, c64) = consistency(64);
        ok &= id128 <= 1e-6 && c128 < c64;
        lines.push(format!(
            "lambda {lambda}: identity {id128:.2e}, split-vs-operator {c64:.2e} -> {c128:.2e}"
        ));
    }
    check(ok, lines.join("; "))
}

fn ensemble(g: GridSpec) -> Vec<WDerivatives> {
    random_ensemble(&EnsembleSpec::default())
        .unwrap()
        .iter()
        .map(|m| m.derivatives(g, ETA).unwrap())
        .collect()
}

const LAMBDAS: [f64; 4] = [2.0, 4.0, 8.0, 16.0];

fn scan(nx: usize) -> ScanReport {
    let (g, w) = weight(nx);
    lambda_scan(&ensemble(g), &w, &LAMBDAS, ETA).unwrap()
}

fn inner_product_ledger_check() -> Verdict {
    let (coarse, fine) = (scan(64), scan(128));
    let mismatch = fine.rows.iter().map(|r| r.max_mismatch).fold(0.0, f64::max);
    let Some(l0) = fine.lambda0 else {
        return Err(format!("no lambda0 on the 128 grid: {:?}", fine.rows));
    };
    let mut stable = coarse.lambda0 == Some(l0);
    let mut deltas = Vec::new();
    for r in fine.rows.iter().filter(|r| r.lambda >= l0) {
        let c = coarse.row(r.lambda).unwrap().min_delta_hat;
        stable &= r.min_delta_hat > 0.0 && (c / r.min_delta_hat - 1.0).abs() <= 0.3;
        deltas.push(format!("{}: {c:.3e}/{:.3e}", r.lambda, r.min_delta_hat));
    }
    check(
        mismatch <= 1e-4 && stable,
        format!(
            "max mismatch {mismatch:.2e}; lambda0 {:?} -> {l0}; delta_hat 64/128 [{}]",
            coarse.lambda0,
            deltas.join(", ")
        ),
    )
}

fn carleman_audit_check() -> Verdict {
    let worst16 = |nx: usize| -> Result<f64, String> {
        let (g, w) = weight(nx);
        let cfg = CarlemanConfig {
            lambda_grid: LAMBDAS.to_vec(),
            eta: ETA,
            ..CarlemanConfig::with_defaults(2.0)
        };
        let mut c16 = 0.0_f64;
        for wd in ensemble(g) {
            let rep = carleman_audit(&wd, &w, &LowerOrder::zero(), &cfg).unwrap();
            if let Some(r) = rep.rows.iter().find(|r| !r.c_hat.is_finite()) {
                return Err(format!("non-finite constant at lambda {}", r.lambda));
            }
            c16 = c16.max(rep.row(16.0).unwrap().c_hat);
        }
        Ok(c16)
    };
    let (a, b) = match (worst16(64), worst16(128)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let g = GridSpec::new(128, 256, 2.0).unwrap();
    let steep = ScalarField1D::from_fn(g, |x| 1.0 + 10.0 * x).unwrap();
    let raised = matches!(
        make_default_weight(g, &steep, 1.0),
        Err(KsError::HypothesisViolation { hypothesis: Hypothesis::Hip4B, .. })
    );
    check(
        (a / b - 1.0).abs() <= 0.3 && raised,
        format!("worst C(16) 64/128: {a:.4} / {b:.4}; steep sigma rejected: {raised}"),
    )
}

fn stability_two_sidedness() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let code = kslab("stability-scan", "stability_scan.toml", dir.path());
    let elapsed = start.elapsed();
    if code != 0 {
        return Err(format!("stability-scan exited {code}"));
    }
    let slope = report(dir.path())["results"]["loglog_slope"].as_f64().unwrap_or(f64::NAN);
    let csv = dir.path().join("stability.csv");
    let spread = |v: Vec<f64>| {
        let first = v[0];
        v.iter().all(|c| c.is_finite() && (c / first - 1.0).abs() <= 0.5)
    };
    let (lo, hi) = (column(&csv, "c_lower"), column(&csv, "c_upper"));
    let detail = format!(
        "slope {slope:.4}; c_lower {lo:.3?}; c_upper {hi:.3?}; {:.2}s",
        elapsed.as_secs_f64()
    );
    check(
        (0.8..=1.2).contains(&slope) && spread(lo) && spread(hi) && elapsed <= Duration::from_secs(300),
        detail,
    )
}

fn closed_loop_recovery() -> Verdict {
    let run = |config: &str| {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(kslab("invert", config, dir.path()), 0, "{config}");
        let rel = report(dir.path())["results"]["relative_error"].as_f64().unwrap();
        let j = column(&dir.path().join("recovery.csv"), "J");
        (rel, j.windows(2).all(|w| w[1] <= w[0]))
    };
    let (clean, clean_mono) = run("invert_noise_free.toml");
    let (noisy, noisy_mono) = run("invert_noisy.toml");
    let dir = tempfile::tempdir().unwrap();
    let zero = kslab("invert", "failures/zero_data.toml", dir.path());
    check(
        clean <= 0.05 && noisy <= 0.2 && clean_mono && noisy_mono && zero == 4,
        format!(
            "relative error noise 0: {clean:.3e}, noise 1e-3: {noisy:.3e}; \
             monotone J {clean_mono}/{noisy_mono}; zero data exit {zero}"
        ),
    )
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism_and_interfaces() -> Verdict {
    let mut ok = true;
    let mut lines = Vec::new();
    for (sub, config) in [
        ("simulate", "simulate_manufactured.toml"),
        ("invert", "invert_noisy.toml"),
    ] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let same = kslab(sub, config, a.path()) == 0
            && kslab(sub, config, b.path()) == 0
            && files(a.path()) == files(b.path());
        ok &= same;
        lines.push(format!("{config} identical: {same}"));
    }
    for (sub, config, want) in [
        ("carleman-audit", "failures/config_error.toml", 1),
        ("simulate", "failures/no_convergence.toml", 2),
        ("carleman-audit", "failures/hypothesis.toml", 3),
        ("invert", "failures/zero_data.toml", 4),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let got = kslab(sub, config, dir.path());
        ok &= got == want;
        lines.push(format!("{config} exit {got} (want {want})"));
    }
    check(ok, lines.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("manufactured-solution convergence", manufactured_convergence),
        ("fixed-point behavior", fixed_point_behavior),
        ("lifting exactness", lifting_exactness),
        ("conjugation identity", conjugation_identity),
        ("inner-product ledger", inner_product_ledger_check),
        ("weighted-estimate audit", carleman_audit_check),
        ("stability two-sidedness", stability_two_sidedness),
        ("closed-loop recovery", closed_loop_recovery),
        ("determinism and interfaces", determinism_and_interfaces),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(d) => println!("criterion {} {name}: PASS ({d})", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({d})", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
