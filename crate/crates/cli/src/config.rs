//! TOML run configuration and its validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridBlock,
    pub coefficients: CoefficientBlock,
    /// Required by every command except `carleman-audit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataBlock>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carleman: Option<CarlemanBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub nx: usize,
    pub nt: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientBlock {
    pub sigma: String,
    pub gamma: String,
}

/// `h1 = y(t,0)`, `h2 = y(t,1)`, `h3 = y_x(t,0)`, `h4 = y_x(t,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    pub y0: String,
    pub g: String,
    pub h1: String,
    pub h2: String,
    pub h3: String,
    pub h4: String,
    /// Closed-form solution, when known; adds error columns to the output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub max_picard: usize,
    pub picard_tol: f64,
    pub divergence_window: usize,
    pub lin_tol: f64,
    pub comp_tol: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let d = ks_core::NonlinearSolveConfig::default();
        Self {
            max_picard: d.max_picard,
            picard_tol: d.picard_tol,
            divergence_window: d.divergence_window,
            lin_tol: d.linear.lin_tol,
            comp_tol: d.linear.comp_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanBlock {
    #[serde(rename = "T0")]
    pub t0: f64,
    pub lambdas: Vec<f64>,
    /// Defaults to `T/10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Defaults to the smallest `λ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default = "default_c_cap")]
    pub c_cap: f64,
    #[serde(default = "default_ledger_tol")]
    pub ledger_tol: f64,
    #[serde(default = "default_members")]
    pub members: usize,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_ensemble_seed")]
    pub seed: u64,
}

fn default_c_cap() -> f64 {
    1e3
}
fn default_ledger_tol() -> f64 {
    1e-4
}
fn default_members() -> usize {
    50
}
fn default_modes() -> usize {
    4
}
fn default_ensemble_seed() -> u64 {
    2024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseBlock {
    #[serde(rename = "T0")]
    pub t0: f64,
    /// Anchor `γ̃` of the recovery; `coefficients.gamma` is the truth used to
    /// synthesize the measurements.
    pub gamma_tilde: String,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_m1", rename = "M1")]
    pub m1: f64,
    #[serde(default = "default_m2", rename = "M2")]
    pub m2: f64,
    #[serde(default = "default_r_floor")]
    pub r_floor: f64,
    #[serde(default = "default_alpha")]
    pub tikhonov_alpha: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_k")]
    pub modes: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Stability scan: `γ̃ = γ + s·perturbation` for each `s`.
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    #[serde(default = "default_perturbation")]
    pub perturbation: String,
    /// Stability scan passes when `lhs <= c_cap * middle` on every row.
    #[serde(default = "default_c_cap")]
    pub c_cap: f64,
}

fn default_m1() -> f64 {
    ks_core::inverse::InverseConfig::default().m1
}
fn default_m2() -> f64 {
    ks_core::inverse::InverseConfig::default().m2
}
fn default_r_floor() -> f64 {
    ks_core::inverse::InverseConfig::default().r_floor
}
fn default_alpha() -> f64 {
    ks_core::inverse::InverseConfig::default().tikhonov_alpha
}
fn default_max_outer() -> usize {
    ks_core::inverse::InverseConfig::default().max_outer
}
fn default_grad_tol() -> f64 {
    ks_core::inverse::InverseConfig::default().grad_tol
}
fn default_k() -> usize {
    ks_core::inverse::InverseConfig::default().modes
}
fn default_fd_step() -> f64 {
    ks_core::inverse::InverseConfig::default().fd_step
}
fn default_perturbation() -> String {
    "sin(pi*x)".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: PathBuf,
    /// Subset of `csv`, `json`.
    pub formats: Vec<String>,
    /// Record wall-clock seconds in `report.json`; off by default so reruns
    /// stay byte-identical.
    pub wall_clock: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into()],
            wall_clock: false,
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

/// Configuration problem, reported with the offending field or TOML position.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub msg: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.msg)
    }
}

fn bad(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    CarlemanAudit,
    Invert,
    StabilityScan,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let field = match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "config".into(),
            };
            bad(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    /// Checks every block the command reads.
    pub fn validate(&self, cmd: Command) -> Result<(), ConfigError> {
        let g = &self.grid;
        if g.nx < 8 || g.nx > 4096 {
            return Err(bad("grid.nx", format!("{} outside [8, 4096]", g.nx)));
        }
        if g.nt < 1 || g.nt > 1 << 20 {
            return Err(bad("grid.nt", format!("{} outside [1, 2^20]", g.nt)));
        }
        if !(g.t_final > 0.0 && g.t_final.is_finite()) {
            return Err(bad("grid.T", "must be positive and finite"));
        }
        parse_expr("coefficients.sigma", &self.coefficients.sigma, false)?;
        parse_expr("coefficients.gamma", &self.coefficients.gamma, false)?;
        match (&self.data, cmd) {
            (Some(d), _) => validate_data(d)?,
            (None, Command::CarlemanAudit) => {}
            (None, _) => return Err(bad("data", "block required for this command")),
        }
        let s = &self.solver;
        if s.max_picard < 1 || s.divergence_window < 1 {
            return Err(bad("solver", "max_picard and divergence_window must be >= 1"));
        }
        for (name, v) in [
            ("solver.picard_tol", s.picard_tol),
            ("solver.lin_tol", s.lin_tol),
            ("solver.comp_tol", s.comp_tol),
        ] {
            if !(v > 0.0) {
                return Err(bad(name, "must be positive"));
            }
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(bad("output.formats", format!("unknown format '{f}'")));
            }
        }
        match cmd {
            Command::Simulate => Ok(()),
            Command::CarlemanAudit => self.validate_carleman(),
            Command::Invert => self.validate_inverse(false),
            Command::StabilityScan => self.validate_inverse(true),
        }
    }

    fn validate_carleman(&self) -> Result<(), ConfigError> {
        let c = self
            .carleman
            .as_ref()
            .ok_or_else(|| bad("carleman", "block required for carleman-audit"))?;
        let t = self.grid.t_final;
        if !(c.t0 > 0.0 && c.t0 < t) {
            return Err(bad("carleman.T0", format!("must lie in (0, {t})")));
        }
        if c.lambdas.is_empty() {
            return Err(bad("carleman.lambdas", "empty lambda list"));
        }
        if c.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(bad("carleman.lambdas", "every lambda must be positive"));
        }
        if c.lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("carleman.lambdas", "must be strictly increasing"));
        }
        if let Some(e) = c.eta {
            if !(e > 0.0 && e < 0.5 * t) {
                return Err(bad("carleman.eta", format!("must lie in (0, {})", 0.5 * t)));
            }
        }
        if c.members == 0 || c.modes == 0 {
            return Err(bad("carleman", "members and modes must be >= 1"));
        }
        if !(c.c_cap > 0.0 && c.ledger_tol > 0.0) {
            return Err(bad("carleman", "c_cap and ledger_tol must be positive"));
        }
        Ok(())
    }

    fn validate_inverse(&self, scan: bool) -> Result<(), ConfigError> {
        let v = self
            .inverse
            .as_ref()
            .ok_or_else(|| bad("inverse", "block required for this command"))?;
        let t = self.grid.t_final;
        if !(v.t0 > 0.0 && v.t0 <= t) {
            return Err(bad("inverse.T0", format!("must lie in (0, {t}]")));
        }
        parse_expr("inverse.gamma_tilde", &v.gamma_tilde, false)?;
        parse_expr("inverse.perturbation", &v.perturbation, false)?;
        if !(v.noise >= 0.0 && v.noise.is_finite()) {
            return Err(bad("inverse.noise", "must be >= 0"));
        }
        for (name, x) in [
            ("inverse.M1", v.m1),
            ("inverse.M2", v.m2),
            ("inverse.r_floor", v.r_floor),
            ("inverse.grad_tol", v.grad_tol),
            ("inverse.fd_step", v.fd_step),
            ("inverse.c_cap", v.c_cap),
        ] {
            if !(x > 0.0) {
                return Err(bad(name, "must be positive"));
            }
        }
        if !(v.tikhonov_alpha >= 0.0) {
            return Err(bad("inverse.tikhonov_alpha", "must be >= 0"));
        }
        if v.max_outer < 1 {
            return Err(bad("inverse.max_outer", "must be >= 1"));
        }
        if scan && v.amplitudes.is_empty() {
            return Err(bad("inverse.amplitudes", "stability-scan needs at least one amplitude"));
        }
        if v.amplitudes.iter().any(|s| !s.is_finite()) {
            return Err(bad("inverse.amplitudes", "must be finite"));
        }
        Ok(())
    }
}

fn validate_data(d: &DataBlock) -> Result<(), ConfigError> {
    parse_expr("data.y0", &d.y0, false)?;
    parse_expr("data.g", &d.g, true)?;
    for (k, h) in [&d.h1, &d.h2, &d.h3, &d.h4].into_iter().enumerate() {
        let e = parse_expr(&format!("data.h{}", k + 1), h, true)?;
        if e.uses(Var::X) {
            return Err(bad(format!("data.h{}", k + 1), "boundary series depend on t only"));
        }
    }
    if let Some(ex) = &d.exact {
        parse_expr("data.exact", ex, true)?;
    }
    Ok(())
}

/// Parses `src`; `time_ok` allows the variable `t`.
pub fn parse_expr(field: &str, src: &str, time_ok: bool) -> Result<Expr, ConfigError> {
    let e = Expr::parse(src).map_err(|e| bad(field, format!("'{src}' {e}")))?;
    if !time_ok && e.uses(Var::T) {
        return Err(bad(field, "must not depend on t"));
    }
    Ok(e)
}
