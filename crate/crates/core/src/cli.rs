//! Run configuration, experiment dispatch and report files.
//!
//! A run is described by one JSON document (TOML is accepted when the file
//! ends in `.toml`). Unknown keys are rejected. Every experiment writes
//! `report.json`; field tables go to CSV next to it.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, inner, l2_norm, ControlBox, Domain, Grid, GridFunction};
use crate::integral::{build_integral_with_order, DEFAULT_QUADRATURE_ORDER};
use crate::nonlinearity::{check_growth, GrowthReport, Nonlinearity, PowerLaw};
use crate::operator::{Backend, FractionalOperator};
use crate::optimizer::{
    first_order_residual, projected_gradient, quadratic_growth_sample, semismooth_newton, ssc_probe, ControlProblem, FirstOrderReport,
    GrowthSampling, Method, OptimalityReport,
};
use crate::sensitivity::{gradient_check, hessian_check, DerivativeCheckRow, SensitivityContext};
use crate::spectral::{build_spectral, EllipticCoefficient, SpectralOperator};
use crate::state::{solve_state, StateOptions, StateSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INVALID_CONFIG: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub n: usize,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub nonlinearity: NonlinearitySpec,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub target: FieldSpec,
    /// Control fed to the state solver; initial guess for control solves.
    #[serde(default)]
    pub control: FieldSpec,
    #[serde(default)]
    pub bounds: BoundsSpec,
}

fn default_mu() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    Spectral {
        s: f64,
        #[serde(default)]
        coefficient: CoefficientSpec,
    },
    Integral {
        s: f64,
        #[serde(default = "default_quadrature")]
        quadrature_order: usize,
    },
}

fn default_quadrature() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

impl OperatorSpec {
    pub fn s(&self) -> f64 {
        match self {
            OperatorSpec::Spectral { s, .. } | OperatorSpec::Integral { s, .. } => *s,
        }
    }
}

/// a(x) for the spectral backend. Polynomials are in x, 1D only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant { value: f64 },
    Polynomial { coefficients: Vec<f64>, floor: f64 },
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    #[default]
    Zero,
    /// f(t) = b|t|^{q−1}t.
    Power {
        q: f64,
        #[serde(default = "one")]
        b: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Nodal field description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    #[default]
    Zero,
    Constant { value: f64 },
    /// amplitude · ∏ sin(mode π (x_i − a_i)/(b_i − a_i)).
    Sine {
        amplitude: f64,
        #[serde(default = "one_usize")]
        mode: usize,
    },
    Values { values: Vec<f64> },
}

fn one_usize() -> usize {
    1
}

impl FieldSpec {
    pub fn build(&self, grid: &Grid) -> Result<GridFunction> {
        match self {
            FieldSpec::Zero => Ok(GridFunction::zeros(grid)),
            FieldSpec::Constant { value } => GridFunction::new(*grid, vec![*value; grid.len()]),
            FieldSpec::Sine { amplitude, mode } => {
                let axes = grid.domain().axes();
                let k = *mode as f64 * std::f64::consts::PI;
                GridFunction::new(
                    *grid,
                    grid.nodes()
                        .map(|x| amplitude * x.iter().zip(&axes).map(|(xi, (a, b))| (k * (xi - a) / (b - a)).sin()).product::<f64>())
                        .collect(),
                )
            }
            FieldSpec::Values { values } => GridFunction::new(*grid, values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub lower: FieldSpec,
    pub upper: FieldSpec,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        BoundsSpec {
            lower: FieldSpec::Constant { value: -1e6 },
            upper: FieldSpec::Constant { value: 1e6 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
    pub state: StateOptions,
    /// τ values whose strongly active sets go into control reports.
    pub taus: Vec<f64>,
    pub sign_threshold: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_iter: 1000,
            method: Method::SemismoothNewton,
            state: StateOptions::with_tol(1e-12),
            taus: vec![0.0, 1e-3, 1e-2],
            sign_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    SolveState,
    SolveControl,
    CheckGradient {
        #[serde(default = "default_gradient_h")]
        h: Vec<f64>,
        #[serde(default = "default_hessian_h")]
        hessian_h: Vec<f64>,
        #[serde(default = "default_direction")]
        direction: FieldSpec,
        #[serde(default = "default_max_error")]
        max_error: f64,
        #[serde(default = "default_order_tolerance")]
        order_tolerance: f64,
    },
    CheckKkt,
    CheckSsc {
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        iters: Option<usize>,
    },
    CheckGrowthQuadratic {
        #[serde(default = "default_rho")]
        rho: f64,
        /// Defaults to δ_est/4.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(default = "default_growth_samples")]
        samples: usize,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    CheckGrowthCondition {
        /// Defaults to 2^{1−q}.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
        #[serde(default = "default_condition_samples")]
        samples: usize,
        #[serde(default = "default_radius")]
        radius: f64,
    },
    ConvergenceStudy {
        #[serde(default = "default_ns")]
        ns: Vec<usize>,
    },
    OperatorOracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tolerance: Option<f64>,
    },
}

fn default_gradient_h() -> Vec<f64> {
    vec![1e-3, 1e-4]
}
fn default_hessian_h() -> Vec<f64> {
    vec![1e-2, 1e-3]
}
fn default_direction() -> FieldSpec {
    FieldSpec::Constant { value: 1.0 }
}
fn default_max_error() -> f64 {
    1e-5
}
fn default_order_tolerance() -> f64 {
    0.2
}
fn default_tau() -> f64 {
    1e-3
}
fn default_rho() -> f64 {
    0.1
}
fn default_growth_samples() -> usize {
    200
}
fn default_condition_samples() -> usize {
    10_000
}
fn default_radius() -> f64 {
    10.0
}
fn default_ns() -> Vec<usize> {
    vec![32, 64, 128, 256]
}

pub const EXPERIMENTS: [&str; 9] = [
    "solve-state",
    "solve-control",
    "check-gradient",
    "check-kkt",
    "check-ssc",
    "check-growth-quadratic",
    "check-growth-condition",
    "convergence-study",
    "operator-oracle",
];

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::SolveState => "solve-state",
            Experiment::SolveControl => "solve-control",
            Experiment::CheckGradient { .. } => "check-gradient",
            Experiment::CheckKkt => "check-kkt",
            Experiment::CheckSsc { .. } => "check-ssc",
            Experiment::CheckGrowthQuadratic { .. } => "check-growth-quadratic",
            Experiment::CheckGrowthCondition { .. } => "check-growth-condition",
            Experiment::ConvergenceStudy { .. } => "convergence-study",
            Experiment::OperatorOracle { .. } => "operator-oracle",
        }
    }

    /// The named experiment with default parameters.
    pub fn with_defaults(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::json!({ "kind": name })).map_err(|e| config_err("experiment.kind", e))
    }
}

fn config_err(path: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.to_string(),
        reason: reason.to_string(),
    }
}

/// Reads a config file; `.toml` goes through the TOML front end.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e))?;
    let cfg: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| config_err(&path.display().to_string(), e))?
    } else {
        serde_json::from_str(&text).map_err(|e| config_err(&path.display().to_string(), e))?
    };
    Ok(cfg)
}

/// Operator, nonlinearity and fields built from a validated config.
pub struct Built {
    pub grid: Grid,
    pub op: Arc<dyn FractionalOperator>,
    pub spectral: Option<Arc<SpectralOperator>>,
    pub nl: Nonlinearity,
    pub power: Option<PowerLaw>,
    pub target: GridFunction,
    pub control: GridFunction,
    pub bounds: ControlBox,
}

impl std::fmt::Debug for Built {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Built")
            .field("grid", &self.grid)
            .field("backend", &self.op.backend())
            .field("nl", &self.nl.name())
            .finish_non_exhaustive()
    }
}

impl Built {
    pub fn problem(&self, cfg: &RunConfig) -> Result<ControlProblem> {
        Ok(ControlProblem::new(self.op.clone(), self.nl.clone(), cfg.problem.mu, self.target.clone(), self.bounds.clone())
            .map_err(|e| config_err("problem", e))?
            .with_state_options(cfg.solver.state))
    }
}

fn polynomial(coeffs: Vec<f64>) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    move |x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

impl RunConfig {
    /// Checks every statically checkable invariant and builds the objects.
    pub fn build(&self) -> Result<Built> {
        let p = &self.problem;
        let grid = Grid::new(p.domain, p.n).map_err(|e| config_err("problem.domain/n", e))?;
        let s = p.operator.s();
        if !(s > 0.0 && s < 1.0) {
            return Err(config_err("problem.operator.s", format!("fractional order must lie in (0, 1), got {s}")));
        }
        if !(p.mu > 0.0 && p.mu.is_finite()) {
            return Err(config_err("problem.mu", format!("must be positive, got {}", p.mu)));
        }
        let sv = &self.solver;
        if !(sv.tol > 0.0) {
            return Err(config_err("solver.tol", format!("must be positive, got {}", sv.tol)));
        }
        if !(sv.state.tol > 0.0) {
            return Err(config_err("solver.state.tol", format!("must be positive, got {}", sv.state.tol)));
        }
        if let Some(t) = sv.taus.iter().find(|t| !(**t >= 0.0)) {
            return Err(config_err("solver.taus", format!("τ must be non-negative, got {t}")));
        }
        let (op, spectral): (Arc<dyn FractionalOperator>, _) = match &p.operator {
            OperatorSpec::Spectral { s, coefficient } => {
                let coeff = match coefficient {
                    CoefficientSpec::Constant { value } => EllipticCoefficient::Constant(*value),
                    CoefficientSpec::Polynomial { coefficients, floor } => {
                        EllipticCoefficient::variable(polynomial(coefficients.clone()), *floor)
                    }
                };
                let sp = Arc::new(build_spectral(&grid, &coeff, *s).map_err(|e| config_err("problem.operator", e))?);
                (sp.clone(), Some(sp))
            }
            OperatorSpec::Integral { s, quadrature_order } => (
                Arc::new(build_integral_with_order(&grid, *s, *quadrature_order).map_err(|e| config_err("problem.operator", e))?),
                None,
            ),
        };
        let (nl, power) = match &p.nonlinearity {
            NonlinearitySpec::Zero => (Nonlinearity::zero(), None),
            NonlinearitySpec::Power { q, b } => {
                let pl = PowerLaw::constant(*b, *q).map_err(|e| config_err("problem.nonlinearity", e))?;
                (pl.nonlinearity(), Some(pl))
            }
        };
        let field = |spec: &FieldSpec, path: &str| spec.build(&grid).map_err(|e| config_err(path, e));
        let target = field(&p.target, "problem.target")?;
        let control = field(&p.control, "problem.control")?;
        let bounds = ControlBox::new(field(&p.bounds.lower, "problem.bounds.lower")?, field(&p.bounds.upper, "problem.bounds.upper")?)
            .map_err(|e| config_err("problem.bounds", e))?;
        if let Some(exp) = &self.experiment {
            validate_experiment(exp, &grid)?;
        }
        Ok(Built {
            grid,
            op,
            spectral,
            nl,
            power,
            target,
            control,
            bounds,
        })
    }
}

fn validate_experiment(exp: &Experiment, grid: &Grid) -> Result<()> {
    let positive = |v: f64, path: &str| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(config_err(path, format!("must be positive, got {v}")))
        }
    };
    match exp {
        Experiment::CheckGradient { h, hessian_h, max_error, order_tolerance, direction } => {
            for v in h.iter().chain(hessian_h) {
                positive(*v, "experiment.h")?;
            }
            positive(*max_error, "experiment.max_error")?;
            positive(*order_tolerance, "experiment.order_tolerance")?;
            direction.build(grid).map_err(|e| config_err("experiment.direction", e))?;
        }
        Experiment::CheckSsc { tau, .. } => {
            if !(*tau >= 0.0) {
                return Err(config_err("experiment.tau", format!("must be non-negative, got {tau}")));
            }
        }
        Experiment::CheckGrowthQuadratic { rho, beta, tau, .. } => {
            positive(*rho, "experiment.rho")?;
            if let Some(b) = beta {
                if !(*b >= 0.0) {
                    return Err(config_err("experiment.beta", format!("must be non-negative, got {b}")));
                }
            }
            if !(*tau >= 0.0) {
                return Err(config_err("experiment.tau", format!("must be non-negative, got {tau}")));
            }
        }
        Experiment::CheckGrowthCondition { c, radius, .. } => {
            positive(*radius, "experiment.radius")?;
            if let Some(c) = c {
                positive(*c, "experiment.c")?;
            }
        }
        Experiment::ConvergenceStudy { ns } => {
            if grid.dim() != 1 {
                return Err(config_err("problem.domain", "convergence-study needs an interval"));
            }
            if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
                return Err(config_err("experiment.ns", "grid sizes must be positive and strictly increasing"));
            }
        }
        Experiment::OperatorOracle { tolerance: Some(t) } => positive(*t, "experiment.tolerance")?,
        _ => {}
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            pass: value <= threshold,
            value,
            threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            pass: value >= threshold,
            value,
            threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    /// Max relative error on the center half of the domain.
    pub error_max: f64,
    /// Discrete L² relative error on the center half.
    pub error_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub s: f64,
    pub exact: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# columns: n, mesh width, max relative error and discrete L2 relative error on the center half, observed order of error_max\n");
        out.push_str("n,h,error_max,error_l2,order\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n,
                fmt_f64(r.h),
                fmt_f64(r.error_max),
                fmt_f64(r.error_l2),
                r.order.map(fmt_f64).unwrap_or_default()
            ));
        }
        out
    }

    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error_max < w[0].error_max)
    }
}

/// (−Δ)^s (r² − |x−c|²)^s_+ in 1D.
pub fn getoor_constant(s: f64) -> f64 {
    4f64.powf(s) * gamma(0.5 + s) * gamma(1.0 + s) / gamma(0.5)
}

/// Integral operator applied to the nodal Getoor profile on `(a, b)`.
pub fn getoor_study(a: f64, b: f64, s: f64, ns: &[usize], quadrature_order: usize) -> Result<ConvergenceTable> {
    let exact = getoor_constant(s);
    let (c, r) = ((a + b) / 2.0, (b - a) / 2.0);
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &n in ns {
        let grid = Grid::interval(a, b, n)?;
        let op = build_integral_with_order(&grid, s, quadrature_order)?;
        let u = GridFunction::from_fn(&grid, |x| (r * r - (x[0] - c).powi(2)).max(0.0).powf(s));
        let au = op.apply_integral(&u)?;
        let (mut emax, mut sum, mut count): (f64, f64, usize) = (0.0, 0.0, 0);
        for (i, x) in grid.nodes().enumerate() {
            if (x[0] - c).abs() <= r / 2.0 {
                let e = (au.values()[i] - exact).abs() / exact;
                emax = emax.max(e);
                sum += e * e;
                count += 1;
            }
        }
        let h = grid.h(0);
        let order = rows.last().map(|p| (p.error_max / emax).ln() / (p.h / h).ln());
        rows.push(ConvergenceRow {
            n,
            h,
            error_max: emax,
            error_l2: (sum / count.max(1) as f64).sqrt(),
            order,
        });
    }
    Ok(ConvergenceTable { s, exact, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenIdentityReport {
    /// max_k ‖A^s φ_k − λ_k^s φ_k‖ / ‖λ_k^s φ_k‖.
    pub power: f64,
    /// ‖A^{s/2} A^{s/2} v − A^s v‖ / ‖A^s v‖ for a random v.
    pub semigroup: f64,
    /// ‖A^{−s} A^s v − v‖ / ‖v‖.
    pub inverse: f64,
}

impl EigenIdentityReport {
    pub fn max(&self) -> f64 {
        self.power.max(self.semigroup).max(self.inverse)
    }
}

pub fn eigen_identities(op: &SpectralOperator, seed: u64) -> Result<EigenIdentityReport> {
    let s = op.order();
    let grid = *op.grid();
    let mut power: f64 = 0.0;
    for (k, &lam) in op.eigenvalues().iter().enumerate() {
        let phi = op.eigenvector(k);
        let want = phi.scale(lam.powf(s));
        let got = op.apply_power(&phi, s)?;
        power = power.max(l2_norm(&got.sub(&want)?) / l2_norm(&want));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = GridFunction::new(grid, (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let full = op.apply_power(&v, s)?;
    let halves = op.apply_power(&op.apply_power(&v, s / 2.0)?, s / 2.0)?;
    let back = op.apply_power(&full, -s)?;
    Ok(EigenIdentityReport {
        power,
        semigroup: l2_norm(&halves.sub(&full)?) / l2_norm(&full),
        inverse: l2_norm(&back.sub(&v)?) / l2_norm(&v),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StateOutput {
    #[serde(flatten)]
    pub summary: StateSummary,
    pub u_max_abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientOutput {
    pub gradient: Vec<DerivativeCheckRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian: Option<Vec<DerivativeCheckRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hessian_symmetry: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KktOutput {
    pub solve: OptimalityReport,
    pub first_order: FirstOrderReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigen: Option<EigenIdentityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub getoor: Option<ConvergenceTable>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    State(StateOutput),
    Control(Box<OptimalityReport>),
    Gradient(GradientOutput),
    Kkt(Box<KktOutput>),
    Growth(GrowthReport),
    Convergence(ConvergenceTable),
    Oracle(OracleOutput),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub seed: u64,
    pub grid: Grid,
    pub backend: Backend,
    pub s: f64,
    pub converged: bool,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub result: Outcome,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub assert: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
}

/// Exit status for an error that aborted a run.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        Error::Config { .. } => EXIT_INVALID_CONFIG,
        _ => 1,
    }
}

fn solve_control(problem: &ControlProblem, z0: &GridFunction, sv: &SolverSettings) -> Result<OptimalityReport> {
    let mut report = match sv.method {
        Method::ProjectedGradient => projected_gradient(problem, z0, sv.tol, sv.max_iter)?,
        Method::SemismoothNewton => semismooth_newton(problem, z0, sv.tol, sv.max_iter)?,
    };
    report.add_active_sets(problem.mu(), &sv.taus)?;
    Ok(report)
}

struct Files {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Files {
    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn fields(&mut self, z: &GridFunction, u: &GridFunction, phi: Option<&GridFunction>) -> Result<()> {
        self.write("control.csv", &z.to_csv("z"))?;
        self.write("state.csv", &u.to_csv("u"))?;
        if let Some(phi) = phi {
            self.write("adjoint.csv", &phi.to_csv("phi"))?;
        }
        Ok(())
    }
}

fn derivative_csv(rows: &[(&str, &DerivativeCheckRow)]) -> String {
    let mut out = String::from("# columns: checked quantity, step h, finite-difference value, analytic value, relative error, observed order against the previous h\n");
    out.push_str("quantity,h,finite_difference,analytic,rel_error,order\n");
    for (q, r) in rows {
        out.push_str(&format!(
            "{q},{},{},{},{},{}\n",
            fmt_f64(r.h),
            fmt_f64(r.finite_difference),
            fmt_f64(r.analytic),
            fmt_f64(r.rel_error),
            r.observed_order.map(fmt_f64).unwrap_or_default()
        ));
    }
    out
}

/// Executes the configured experiment and writes its files.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let exp = cfg
        .experiment
        .clone()
        .ok_or_else(|| config_err("experiment", "no experiment selected"))?;
    let built = cfg.build()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("fracopt-out"));
    fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files = Files { dir, written: Vec::new() };
    let sv = &cfg.solver;
    let mut checks = Vec::new();
    let mut converged = true;

    let result = match &exp {
        Experiment::SolveState => {
            let rep = solve_state(built.op.as_ref(), &built.nl, &built.control, &sv.state)?;
            let target = sv.state.tol * (1.0 + l2_norm(&built.control));
            checks.push(Check::at_most("state_residual", rep.final_residual, target));
            files.write("control.csv", &built.control.to_csv("z"))?;
            files.write("state.csv", &rep.u.to_csv("u"))?;
            Outcome::State(StateOutput {
                summary: rep.summary(),
                u_max_abs: rep.u.max_abs(),
            })
        }
        Experiment::SolveControl => {
            let problem = built.problem(cfg)?;
            let rep = solve_control(&problem, &built.control, sv)?;
            converged = rep.converged;
            checks.push(Check::at_most("kkt_residual", rep.kkt_residual, sv.tol));
            files.fields(&rep.z, &rep.u, Some(&rep.phi))?;
            Outcome::Control(Box::new(rep))
        }
        Experiment::CheckKkt => {
            let problem = built.problem(cfg)?;
            let rep = solve_control(&problem, &built.control, sv)?;
            converged = rep.converged;
            let fo = first_order_residual(&problem, &rep.z, sv.sign_threshold, seed)?;
            let width = built.bounds.upper().sub(built.bounds.lower())?.max_abs().min(1.0 + rep.z.max_abs());
            checks.push(Check::at_most("kkt_residual", fo.residual_linf, sv.tol));
            checks.push(Check::at_least("vi_min", fo.vi_min, -10.0 * sv.tol * (1.0 + width)));
            checks.push(Check::at_most("sign_violations", fo.sign_violations.len() as f64, 0.0));
            files.fields(&rep.z, &rep.u, Some(&rep.phi))?;
            Outcome::Kkt(Box::new(KktOutput { solve: rep, first_order: fo }))
        }
        Experiment::CheckSsc { tau, iters } => {
            let problem = built.problem(cfg)?;
            let mut rep = solve_control(&problem, &built.control, sv)?;
            converged = rep.converged;
            let ctx = problem.context(&rep.z)?;
            let ssc = ssc_probe(&ctx, *tau, iters.unwrap_or(built.grid.len()))?;
            let delta = if ssc.empty_cone { f64::MAX } else { ssc.delta_est.unwrap_or(f64::NAN) };
            checks.push(Check {
                name: "delta_est".into(),
                pass: delta > 0.0,
                value: if ssc.empty_cone { 0.0 } else { delta },
                threshold: 0.0,
            });
            rep.ssc = Some(ssc);
            files.fields(&rep.z, &rep.u, Some(&rep.phi))?;
            Outcome::Control(Box::new(rep))
        }
        Experiment::CheckGrowthQuadratic { rho, beta, samples, tau } => {
            let problem = built.problem(cfg)?;
            let mut rep = solve_control(&problem, &built.control, sv)?;
            converged = rep.converged;
            let ctx = problem.context(&rep.z)?;
            let beta = match beta {
                Some(b) => *b,
                None => {
                    let ssc = ssc_probe(&ctx, *tau, built.grid.len())?;
                    let b = match ssc.delta_est {
                        Some(d) if d > 0.0 => d / 4.0,
                        Some(_) => 0.0,
                        None => problem.mu() / 4.0,
                    };
                    rep.ssc = Some(ssc);
                    b
                }
            };
            let growth = quadratic_growth_sample(
                &problem,
                &ctx,
                &GrowthSampling {
                    rho: *rho,
                    beta,
                    samples: *samples,
                    tau: *tau,
                    seed,
                },
            )?;
            checks.push(Check::at_most("growth_violations", growth.violations as f64, 0.0));
            rep.growth = Some(growth);
            files.fields(&rep.z, &rep.u, Some(&rep.phi))?;
            Outcome::Control(Box::new(rep))
        }
        Experiment::CheckGrowthCondition { c, samples, radius } => {
            let c = match (c, &built.power) {
                (Some(c), _) => *c,
                (None, Some(pl)) => pl.sharp_growth_constant(),
                (None, None) => return Err(config_err("experiment.c", "no default growth constant for this nonlinearity")),
            };
            let rep = check_growth(&built.nl, c, *samples, *radius, seed).map_err(|e| config_err("experiment", e))?;
            checks.push(Check {
                name: "growth_condition".into(),
                pass: rep.pass,
                value: rep.worst_ratio.unwrap_or(f64::MAX),
                threshold: c,
            });
            Outcome::Growth(rep)
        }
        Experiment::CheckGradient { h, hessian_h, direction, max_error, order_tolerance } => {
            let zeta = direction.build(&built.grid)?;
            let ctx = SensitivityContext::new(built.op.as_ref(), &built.nl, &built.control, &built.target, cfg.problem.mu, &sv.state)?;
            let grad = gradient_check(&ctx, &zeta, h, &sv.state)?;
            let last = grad.last().expect("h list is non-empty");
            checks.push(Check::at_most("gradient_rel_error", last.rel_error, *max_error));
            if let Some(order) = last.observed_order {
                checks.push(Check::at_most("gradient_order_deviation", (order - 2.0).abs(), *order_tolerance));
            }
            let mut rows: Vec<(&str, &DerivativeCheckRow)> = grad.iter().map(|r| ("gradient", r)).collect();
            let (hess, symmetry) = if built.nl.differentiability_order() >= 2 {
                let hess = hessian_check(&ctx, &zeta, hessian_h, &sv.state)?;
                if let Some(order) = hess.last().and_then(|r| r.observed_order) {
                    checks.push(Check::at_most("hessian_order_deviation", (order - 2.0).abs(), 0.3));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let other = GridFunction::new(built.grid, (0..built.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
                let a = inner(&ctx.hessian_vec(&zeta)?, &other)?;
                let b = inner(&zeta, &ctx.hessian_vec(&other)?)?;
                let sym = (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                checks.push(Check::at_most("hessian_symmetry", sym, 1e-10));
                (Some(hess), Some(sym))
            } else {
                (None, None)
            };
            if let Some(hs) = &hess {
                rows.extend(hs.iter().map(|r| ("hessian", r)));
            }
            files.write("convergence.csv", &derivative_csv(&rows))?;
            Outcome::Gradient(GradientOutput {
                gradient: grad,
                hessian: hess,
                hessian_symmetry: symmetry,
            })
        }
        Experiment::ConvergenceStudy { ns } => {
            let (a, b) = built.grid.domain().axes()[0];
            let order = match cfg.problem.operator {
                OperatorSpec::Integral { quadrature_order, .. } => quadrature_order,
                OperatorSpec::Spectral { .. } => DEFAULT_QUADRATURE_ORDER,
            };
            let table = getoor_study(a, b, cfg.problem.operator.s(), ns, order)?;
            checks.push(Check {
                name: "monotone_decrease".into(),
                pass: table.monotone(),
                value: table.rows.last().map_or(f64::NAN, |r| r.error_max),
                threshold: table.rows.first().map_or(f64::NAN, |r| r.error_max),
            });
            files.write("convergence.csv", &table.to_csv())?;
            Outcome::Convergence(table)
        }
        Experiment::OperatorOracle { tolerance } => match &built.spectral {
            Some(sp) => {
                let rep = eigen_identities(sp, seed)?;
                checks.push(Check::at_most("eigen_identities", rep.max(), tolerance.unwrap_or(1e-10)));
                Outcome::Oracle(OracleOutput {
                    eigen: Some(rep),
                    getoor: None,
                })
            }
            None => {
                if built.grid.dim() != 1 {
                    return Err(config_err("problem.domain", "the integral oracle needs an interval"));
                }
                let (a, b) = built.grid.domain().axes()[0];
                let order = match cfg.problem.operator {
                    OperatorSpec::Integral { quadrature_order, .. } => quadrature_order,
                    OperatorSpec::Spectral { .. } => DEFAULT_QUADRATURE_ORDER,
                };
                let table = getoor_study(a, b, cfg.problem.operator.s(), &[cfg.problem.n], order)?;
                checks.push(Check::at_most("getoor_error", table.rows[0].error_max, tolerance.unwrap_or(0.05)));
                Outcome::Oracle(OracleOutput {
                    eigen: None,
                    getoor: Some(table),
                })
            }
        },
    };

    let passed = checks.iter().all(|c| c.pass);
    let report = RunReport {
        experiment: exp.name().to_string(),
        seed,
        grid: built.grid,
        backend: built.op.backend(),
        s: built.op.order(),
        converged,
        passed,
        checks,
        result,
    };
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::LinearAlgebra(e.to_string()))?;
    json.push('\n');
    files.write("report.json", &json)?;
    let exit_code = if !converged {
        EXIT_NOT_CONVERGED
    } else if opts.assert && !passed {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    };
    Ok(RunOutcome {
        report,
        exit_code,
        files: files.written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        serde_json::from_str(
            r#"{
                "problem": {
                    "domain": {"kind": "interval", "a": 0.0, "b": 1.0},
                    "n": 32,
                    "operator": {"backend": "spectral", "s": 0.5},
                    "target": {"kind": "sine", "amplitude": 1.0},
                    "bounds": {"lower": {"kind": "constant", "value": -1.0}, "upper": {"kind": "constant", "value": 1.0}}
                },
                "experiment": {"kind": "solve-control"}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_run_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(
            &minimal(),
            &RunOptions {
                out: Some(dir.path().to_path_buf()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.exit_code, EXIT_OK);
        for f in ["report.json", "control.csv", "state.csv", "adjoint.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(!text.contains("null"));
        assert!(!text.contains("\"ssc\""));
    }

    #[test]
    fn report_floats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(
            &minimal(),
            &RunOptions {
                out: Some(dir.path().to_path_buf()),
                ..Default::default()
            },
        )
        .unwrap();
        let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let Outcome::Control(rep) = &out.report.result else { panic!() };
        assert_eq!(v["result"]["kkt_residual"].as_f64().unwrap().to_bits(), rep.kkt_residual.to_bits());
        let z: Vec<f64> = serde_json::from_value(v["result"]["z"].clone()).unwrap();
        assert_eq!(z, rep.z.values());
    }

    #[test]
    fn infeasible_box_names_node() {
        let mut cfg = minimal();
        let mut lower = vec![-1.0; 32];
        lower[7] = 2.0;
        cfg.problem.bounds.lower = FieldSpec::Values { values: lower };
        let err = run(&cfg, &RunOptions::default()).unwrap_err();
        assert_eq!(exit_code_for(&err), EXIT_INVALID_CONFIG);
        let msg = err.to_string();
        assert!(msg.contains("problem.bounds") && msg.contains("node 7"), "{msg}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"problem": {"domain": {"kind": "interval", "a": 0, "b": 1}, "n": 8,
            "operator": {"backend": "spectral", "s": 0.5}, "extra": 1}}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
        let bad = r#"{"problem": {"domain": {"kind": "interval", "a": 0, "b": 1, "c": 2}, "n": 8,
            "operator": {"backend": "spectral", "s": 0.5}}}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
    }

    #[test]
    fn static_validation() {
        let mut cfg = minimal();
        cfg.problem.mu = 0.0;
        assert!(matches!(cfg.build(), Err(Error::Config { ref path, .. }) if path == "problem.mu"));
        let mut cfg = minimal();
        cfg.problem.operator = OperatorSpec::Integral { s: 1.2, quadrature_order: 8 };
        assert!(matches!(cfg.build(), Err(Error::Config { ref path, .. }) if path == "problem.operator.s"));
        let mut cfg = minimal();
        cfg.problem.nonlinearity = NonlinearitySpec::Power { q: 0.5, b: 1.0 };
        assert!(matches!(cfg.build(), Err(Error::Config { ref path, .. }) if path == "problem.nonlinearity"));
        let mut cfg = minimal();
        cfg.experiment = Some(Experiment::ConvergenceStudy { ns: vec![64, 32] });
        assert!(cfg.build().is_err());
    }

    #[test]
    fn toml_front_end_matches_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            r#"
[problem]
n = 32
mu = 0.01
[problem.domain]
kind = "interval"
a = 0.0
b = 1.0
[problem.operator]
backend = "spectral"
s = 0.5
[problem.target]
kind = "sine"
amplitude = 1.0
[problem.bounds.lower]
kind = "constant"
value = -1.0
[problem.bounds.upper]
kind = "constant"
value = 1.0
[experiment]
kind = "solve-control"
"#,
        )
        .unwrap();
        assert_eq!(load_config(&path).unwrap(), minimal());
    }

    #[test]
    fn defaults_by_name() {
        for name in EXPERIMENTS {
            assert_eq!(Experiment::with_defaults(name).unwrap().name(), name);
        }
        assert!(Experiment::with_defaults("nope").is_err());
    }

    #[test]
    fn getoor_table_decreases() {
        let t = getoor_study(-1.0, 1.0, 0.5, &[16, 32, 64], DEFAULT_QUADRATURE_ORDER).unwrap();
        assert!(t.monotone());
        assert!(t.rows[0].order.is_none() && t.rows[1].order.unwrap() > 0.5);
        let csv = t.to_csv();
        assert!(csv.starts_with('#') && csv.lines().count() == 5);
    }
}
