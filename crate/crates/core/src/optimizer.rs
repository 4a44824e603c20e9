//! Box-constrained reduced problem
//!
//! ```text
//! min 𝒥(z) = ½‖S(z) − u_d‖² + (μ/2)‖z‖²   subject to  z_a ≤ z ≤ z_b
//! ```
//!
//! Stationarity is measured through the projection formula
//! `z = Π_[z_a,z_b](−φ/μ)`, which both solvers drive to a fixed point.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, inner, l2_norm, lp_norm, project_box, serialize_values, ControlBox, Grid, GridFunction};
use crate::nonlinearity::Nonlinearity;
use crate::operator::FractionalOperator;
use crate::sensitivity::SensitivityContext;
use crate::state::{two_norm_gap, PTilde, StateOptions};

/// Sufficient-decrease constant of the Armijo test on 𝒥.
pub const ARMIJO_DECREASE: f64 = 1e-4;
const STEP_MIN: f64 = 1e-8;
const STEP_MAX: f64 = 1e8;
const MAX_HALVINGS: usize = 60;
const NEWTON_DAMPING: usize = 6;
/// Relative size of cost differences treated as evaluation noise.
const COST_NOISE: f64 = 1e-13;
const LANCZOS_SEED: u64 = 0x1a2c_705e;

pub struct ControlProblem {
    op: Arc<dyn FractionalOperator>,
    nl: Nonlinearity,
    mu: f64,
    u_d: GridFunction,
    bounds: ControlBox,
    state_opts: StateOptions,
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("grid", self.op.grid())
            .field("backend", &self.op.backend())
            .field("s", &self.op.order())
            .field("nl", &self.nl.name())
            .field("mu", &self.mu)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn new(
        op: Arc<dyn FractionalOperator>,
        nl: Nonlinearity,
        mu: f64,
        u_d: GridFunction,
        bounds: ControlBox,
    ) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("regularization must be positive and finite, got {mu}"),
            });
        }
        op.grid().check_same(u_d.grid())?;
        op.grid().check_same(bounds.grid())?;
        if let Some(k) = nl.nodes() {
            if k != op.grid().len() {
                return Err(Error::LengthMismatch {
                    expected: op.grid().len(),
                    got: k,
                });
            }
        }
        Ok(ControlProblem {
            op,
            nl,
            mu,
            u_d,
            bounds,
            state_opts: StateOptions::with_tol(1e-12),
        })
    }

    pub fn with_state_options(mut self, opts: StateOptions) -> Self {
        self.state_opts = opts;
        self
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    pub fn operator(&self) -> &dyn FractionalOperator {
        self.op.as_ref()
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nl
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn target(&self) -> &GridFunction {
        &self.u_d
    }

    pub fn bounds(&self) -> &ControlBox {
        &self.bounds
    }

    pub fn state_options(&self) -> &StateOptions {
        &self.state_opts
    }

    /// Solves state and linearization at `z`.
    pub fn context(&self, z: &GridFunction) -> Result<SensitivityContext<'_>> {
        SensitivityContext::new(self.op.as_ref(), &self.nl, z, &self.u_d, self.mu, &self.state_opts)
    }

    pub fn cost(&self, z: &GridFunction) -> Result<f64> {
        crate::sensitivity::reduced_cost(self.op.as_ref(), &self.nl, z, &self.u_d, self.mu, &self.state_opts)
    }

    pub fn project(&self, z: &GridFunction) -> Result<GridFunction> {
        project_box(z, &self.bounds)
    }

    /// ε_act at a node.
    pub fn activity_tolerance(&self, node: usize) -> f64 {
        1e-9 * (1.0 + (self.bounds.upper().values()[node] - self.bounds.lower().values()[node]).abs())
    }

    /// Π(−φ/μ).
    pub fn projected_adjoint(&self, phi: &GridFunction) -> Result<GridFunction> {
        self.project(&phi.map(|f| -f / self.mu))
    }

    /// ‖z − Π(−φ/μ)‖_∞.
    pub fn kkt_residual(&self, z: &GridFunction, phi: &GridFunction) -> Result<f64> {
        Ok(z.sub(&self.projected_adjoint(phi)?)?.max_abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ProjectedGradient,
    SemismoothNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveSetSummary {
    pub tau: f64,
    pub count: usize,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SscReport {
    pub tau: f64,
    /// Smallest Rayleigh quotient found; absent when the cone is empty.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_est: Option<f64>,
    pub cone_dimension: usize,
    /// Set when A_τ covers every node; δ is then +∞ by convention.
    pub empty_cone: bool,
    pub lanczos_steps: usize,
    pub breakdown: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthSampleReport {
    pub rho: f64,
    pub beta: f64,
    pub ball_norm: PTilde,
    pub samples: usize,
    pub evaluated: usize,
    pub violations: usize,
    pub degenerate: usize,
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_min: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalityReport {
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub cost: f64,
    pub residual_history: Vec<f64>,
    pub cost_history: Vec<f64>,
    #[serde(serialize_with = "serialize_values")]
    pub z: GridFunction,
    #[serde(serialize_with = "serialize_values")]
    pub u: GridFunction,
    #[serde(serialize_with = "serialize_values")]
    pub phi: GridFunction,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub active_sets: Vec<ActiveSetSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssc: Option<SscReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthSampleReport>,
}

impl OptimalityReport {
    fn new(method: Method, ctx: &SensitivityContext<'_>, converged: bool, iterations: usize, residuals: Vec<f64>, costs: Vec<f64>) -> Result<Self> {
        Ok(OptimalityReport {
            method,
            converged,
            iterations,
            kkt_residual: *residuals.last().expect("history holds the initial residual"),
            cost: *costs.last().expect("history holds the initial cost"),
            residual_history: residuals,
            cost_history: costs,
            z: ctx.z().clone(),
            u: ctx.state().clone(),
            phi: ctx.solve_adjoint()?.clone(),
            active_sets: Vec::new(),
            ssc: None,
            growth: None,
        })
    }

    /// Multiplier φ̄ + μz̄ from the stored fields.
    pub fn multiplier(&self, mu: f64) -> Result<GridFunction> {
        self.phi.axpy(mu, &self.z)
    }

    pub fn add_active_sets(&mut self, mu: f64, taus: &[f64]) -> Result<()> {
        let g = self.multiplier(mu)?;
        for &tau in taus {
            let mask = active_mask(&g, tau);
            self.active_sets.push(ActiveSetSummary {
                tau,
                count: mask.iter().filter(|&&m| m).count(),
                mask,
            });
        }
        Ok(())
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("tolerance must be positive, got {tol}"),
        });
    }
    Ok(())
}

struct Accepted<'a> {
    z: GridFunction,
    ctx: SensitivityContext<'a>,
    cost: f64,
}

/// One projected gradient step with Armijo backtracking from `alpha`.
fn pg_step<'a>(problem: &'a ControlProblem, z: &GridFunction, g: &GridFunction, cost: f64, mut alpha: f64) -> Result<Option<Accepted<'a>>> {
    for _ in 0..MAX_HALVINGS {
        let trial = problem.project(&z.axpy(-alpha, g)?)?;
        let d = trial.sub(z)?;
        if d.max_abs() == 0.0 {
            return Ok(None);
        }
        let ctx = problem.context(&trial)?;
        let jt = ctx.cost()?;
        let noise = COST_NOISE * cost.abs().max(jt.abs());
        if jt <= cost + ARMIJO_DECREASE * inner(g, &d)? + noise {
            return Ok(Some(Accepted { z: trial, ctx, cost: jt }));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

fn bb_step(s: &GridFunction, y: &GridFunction, mu: f64) -> Result<f64> {
    let sy = inner(s, y)?;
    let alpha = if sy > 0.0 { inner(s, s)? / sy } else { 1.0 / mu };
    Ok(alpha.clamp(STEP_MIN, STEP_MAX))
}

/// Projected gradient with Barzilai–Borwein steps and Armijo backtracking.
pub fn projected_gradient(problem: &ControlProblem, z0: &GridFunction, tol: f64, max_iter: usize) -> Result<OptimalityReport> {
    check_tol(tol)?;
    let mut z = problem.project(z0)?;
    let mut ctx = problem.context(&z)?;
    let mut cost = ctx.cost()?;
    let mut g = ctx.reduced_gradient()?;
    let mut res = problem.kkt_residual(&z, ctx.solve_adjoint()?)?;
    let (mut residuals, mut costs) = (vec![res], vec![cost]);
    let mut prev: Option<(GridFunction, GridFunction)> = None;
    let mut iterations = 0;
    while res > tol && iterations < max_iter {
        let alpha = match &prev {
            None => 1.0 / problem.mu,
            Some((zp, gp)) => bb_step(&z.sub(zp)?, &g.sub(gp)?, problem.mu)?,
        };
        let Some(step) = pg_step(problem, &z, &g, cost, alpha)? else {
            break;
        };
        let g_new = step.ctx.reduced_gradient()?;
        prev = Some((std::mem::replace(&mut z, step.z), std::mem::replace(&mut g, g_new)));
        ctx = step.ctx;
        cost = step.cost;
        res = problem.kkt_residual(&z, ctx.solve_adjoint()?)?;
        residuals.push(res);
        costs.push(cost);
        iterations += 1;
    }
    OptimalityReport::new(Method::ProjectedGradient, &ctx, res <= tol, iterations, residuals, costs)
}

/// Conjugate gradients in the Euclidean inner product; stops early on
/// non-positive curvature.
fn cg(apply: impl Fn(&[f64]) -> Result<Vec<f64>>, b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = rtol * rtol * rr;
    for _ in 0..max_iter {
        if rr <= stop || rr == 0.0 {
            break;
        }
        let ap = apply(&p)?;
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            break;
        }
        let a = rr / curv;
        for i in 0..x.len() {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(x)
}

fn scatter(grid: &Grid, idx: &[usize], v: &[f64]) -> GridFunction {
    let mut out = vec![0.0; grid.len()];
    for (&i, &x) in idx.iter().zip(v) {
        out[i] = x;
    }
    GridFunction::from_raw(*grid, out)
}

fn gather(u: &GridFunction, idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| u.values()[i]).collect()
}

/// Semismooth Newton on R(z) = z − Π(−φ(z)/μ), globalized by projected
/// gradient steps.
pub fn semismooth_newton(problem: &ControlProblem, z0: &GridFunction, tol: f64, max_iter: usize) -> Result<OptimalityReport> {
    check_tol(tol)?;
    let grid = *problem.grid();
    let mu = problem.mu;
    let mut z = problem.project(z0)?;
    let mut ctx = problem.context(&z)?;
    let mut cost = ctx.cost()?;
    let mut target = problem.projected_adjoint(ctx.solve_adjoint()?)?;
    let mut r = z.sub(&target)?;
    let mut res = r.max_abs();
    let (mut residuals, mut costs) = (vec![res], vec![cost]);
    let mut prev: Option<(GridFunction, GridFunction)> = None;
    let mut iterations = 0;
    while res > tol && iterations < max_iter {
        let phi = ctx.solve_adjoint()?;
        let (mut act, mut free) = (Vec::new(), Vec::new());
        let (lo, hi) = (problem.bounds.lower().values(), problem.bounds.upper().values());
        for i in 0..grid.len() {
            let w = -phi.values()[i] / mu;
            if lo[i] <= w && w <= hi[i] {
                free.push(i);
            } else {
                act.push(i);
            }
        }
        let delta_a: Vec<f64> = act.iter().map(|&i| -r.values()[i]).collect();
        let mut rhs: Vec<f64> = free.iter().map(|&i| -mu * r.values()[i]).collect();
        if !act.is_empty() {
            let coupling = ctx.hessian_vec(&scatter(&grid, &act, &delta_a))?;
            for (k, &i) in free.iter().enumerate() {
                rhs[k] -= coupling.values()[i];
            }
        }
        let delta_i = if free.is_empty() {
            Vec::new()
        } else {
            cg(
                |v| Ok(gather(&ctx.hessian_vec(&scatter(&grid, &free, v))?, &free)),
                &rhs,
                1e-13,
                4 * free.len() + 20,
            )?
        };
        let mut delta = scatter(&grid, &free, &delta_i);
        for (&i, &d) in act.iter().zip(&delta_a) {
            delta.values_mut()[i] = d;
        }
        let g = ctx.reduced_gradient()?;
        let mut accepted = None;
        let mut t = 1.0;
        for k in 0..NEWTON_DAMPING {
            let trial = problem.project(&z.axpy(t, &delta)?)?;
            let descent = inner(&g, &trial.sub(&z)?)?;
            let trial_ctx = problem.context(&trial)?;
            let trial_cost = trial_ctx.cost()?;
            let noise = COST_NOISE * cost.abs().max(trial_cost.abs());
            let decrease = descent < 0.0 && trial_cost <= cost + ARMIJO_DECREASE * descent + noise;
            let contracts = k == 0 && problem.kkt_residual(&trial, trial_ctx.solve_adjoint()?)? < res;
            if decrease || contracts {
                accepted = Some(Accepted {
                    z: trial,
                    ctx: trial_ctx,
                    cost: trial_cost,
                });
                break;
            }
            t *= 0.5;
        }
        if accepted.is_none() {
            let alpha = match &prev {
                Some((zp, gp)) => bb_step(&z.sub(zp)?, &g.sub(gp)?, mu)?,
                None => 1.0 / mu,
            };
            accepted = pg_step(problem, &z, &g, cost, alpha)?;
        }
        let Some(step) = accepted else {
            break;
        };
        prev = Some((std::mem::replace(&mut z, step.z), g));
        ctx = step.ctx;
        cost = step.cost;
        target = problem.projected_adjoint(ctx.solve_adjoint()?)?;
        r = z.sub(&target)?;
        res = r.max_abs();
        residuals.push(res);
        costs.push(cost);
        iterations += 1;
    }
    OptimalityReport::new(Method::SemismoothNewton, &ctx, res <= tol, iterations, residuals, costs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstOrderReport {
    pub residual_linf: f64,
    /// min over random feasible v of ⟨φ + μz, v − z⟩.
    pub vi_min: f64,
    pub directions: usize,
    pub sign_threshold: f64,
    /// Nodes with |φ + μz| above the threshold that do not sit at the bound
    /// the multiplier's sign selects.
    pub sign_violations: Vec<usize>,
}

impl FirstOrderReport {
    pub fn sign_pattern_ok(&self) -> bool {
        self.sign_violations.is_empty()
    }
}

/// Checks the pointwise rule z = z_a where φ+μz > t and z = z_b where
/// φ+μz < −t, up to ε_act.
pub fn sign_pattern_violations(problem: &ControlProblem, z: &GridFunction, multiplier: &GridFunction, threshold: f64) -> Vec<usize> {
    let (lo, hi) = (problem.bounds.lower().values(), problem.bounds.upper().values());
    let mut bad = Vec::new();
    for (i, (&zi, &gi)) in z.values().iter().zip(multiplier.values()).enumerate() {
        let eps = problem.activity_tolerance(i);
        let ok = if gi > threshold {
            zi - lo[i] <= eps
        } else if gi < -threshold {
            hi[i] - zi <= eps
        } else {
            true
        };
        if !ok {
            bad.push(i);
        }
    }
    bad
}

pub fn first_order_residual(problem: &ControlProblem, z: &GridFunction, sign_threshold: f64, seed: u64) -> Result<FirstOrderReport> {
    const DIRECTIONS: usize = 100;
    let ctx = problem.context(z)?;
    let g = ctx.reduced_gradient()?;
    let residual_linf = problem.kkt_residual(z, ctx.solve_adjoint()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (problem.bounds.lower().values(), problem.bounds.upper().values());
    let mut vi_min = f64::INFINITY;
    for _ in 0..DIRECTIONS {
        let v: Vec<f64> = (0..z.len()).map(|i| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>()).collect();
        let v = GridFunction::from_raw(*z.grid(), v);
        vi_min = vi_min.min(inner(&g, &v.sub(z)?)?);
    }
    Ok(FirstOrderReport {
        residual_linf,
        vi_min,
        directions: DIRECTIONS,
        sign_threshold,
        sign_violations: sign_pattern_violations(problem, z, &g, sign_threshold),
    })
}

fn active_mask(multiplier: &GridFunction, tau: f64) -> Vec<bool> {
    multiplier.values().iter().map(|g| g.abs() > tau).collect()
}

/// A_τ = {|φ + μz| > τ}.
pub fn strongly_active_set(ctx: &SensitivityContext<'_>, tau: f64) -> Result<Vec<bool>> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must be non-negative, got {tau}"),
        });
    }
    Ok(active_mask(&ctx.reduced_gradient()?, tau))
}

/// Nodewise projection onto the τ-critical cone at ctx.z().
pub fn critical_cone_project(problem: &ControlProblem, ctx: &SensitivityContext<'_>, tau: f64, v: &GridFunction) -> Result<GridFunction> {
    let mask = strongly_active_set(ctx, tau)?;
    let z = ctx.z().values();
    let (lo, hi) = (problem.bounds.lower().values(), problem.bounds.upper().values());
    let mut out = v.values().to_vec();
    for (i, x) in out.iter_mut().enumerate() {
        let eps = problem.activity_tolerance(i);
        if mask[i] {
            *x = 0.0;
        } else if z[i] - lo[i] <= eps && z[i] < hi[i] - eps {
            *x = x.max(0.0);
        } else if hi[i] - z[i] <= eps && z[i] > lo[i] + eps {
            *x = x.min(0.0);
        } else if z[i] - lo[i] <= eps {
            // degenerate box z_a = z_b
            *x = 0.0;
        }
    }
    Ok(GridFunction::from_raw(*v.grid(), out))
}

/// Lower estimate of the Hessian's Rayleigh quotient on the nodes outside
/// A_τ, by Lanczos with full reorthogonalization.
pub fn ssc_probe(ctx: &SensitivityContext<'_>, tau: f64, iters: usize) -> Result<SscReport> {
    let grid = *ctx.z().grid();
    let mask = strongly_active_set(ctx, tau)?;
    let free: Vec<usize> = (0..grid.len()).filter(|&i| !mask[i]).collect();
    let dim = free.len();
    if dim == 0 {
        return Ok(SscReport {
            tau,
            delta_est: None,
            cone_dimension: 0,
            empty_cone: true,
            lanczos_steps: 0,
            breakdown: false,
        });
    }
    let apply = |v: &[f64]| -> Result<Vec<f64>> { Ok(gather(&ctx.hessian_vec(&scatter(&grid, &free, v))?, &free)) };
    let steps = iters.clamp(1, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let mut q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= norm);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let (mut alphas, mut betas) = (Vec::new(), Vec::new());
    let mut breakdown = false;
    for j in 0..steps {
        let mut w = apply(&basis[j])?;
        let a = dot(&basis[j], &w);
        alphas.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        if j + 1 == steps {
            break;
        }
        let beta = dot(&w, &w).sqrt();
        if beta <= 1e-12 * alphas.iter().fold(0.0_f64, |m, x| m.max(x.abs())) {
            breakdown = true;
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        betas.push(beta);
        basis.push(w);
    }
    let m = alphas.len();
    let t = DMatrix::from_fn(m, m, |i, k| {
        if i == k {
            alphas[i]
        } else if i + 1 == k {
            betas[i]
        } else if k + 1 == i {
            betas[k]
        } else {
            0.0
        }
    });
    let delta = SymmetricEigen::new(t).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SscReport {
        tau,
        delta_est: Some(delta),
        cone_dimension: dim,
        empty_cone: false,
        lanczos_steps: m,
        breakdown,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthSampling {
    pub rho: f64,
    pub beta: f64,
    pub samples: usize,
    /// τ of the cone half the perturbations are projected onto.
    pub tau: f64,
    pub seed: u64,
}

/// Samples 𝒥(z) ≥ 𝒥(z̄) + β‖z − z̄‖² on Z_ad ∩ B_ρ(z̄), the ball taken in
/// L² when N < 4s and in L^∞ otherwise.
pub fn quadratic_growth_sample(problem: &ControlProblem, ctx: &SensitivityContext<'_>, cfg: &GrowthSampling) -> Result<GrowthSampleReport> {
    if !(cfg.rho > 0.0) || !(cfg.beta >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "rho/beta",
            reason: format!("need rho > 0 and beta >= 0, got rho={} beta={}", cfg.rho, cfg.beta),
        });
    }
    let grid = *problem.grid();
    let ball = two_norm_gap(grid.dim(), problem.op.order())?.p_tilde;
    let zbar = ctx.z();
    let jbar = ctx.cost()?;
    let slack = 10.0 * problem.state_opts.tol;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GrowthSampleReport {
        rho: cfg.rho,
        beta: cfg.beta,
        ball_norm: ball,
        samples: cfg.samples,
        evaluated: 0,
        violations: 0,
        degenerate: 0,
        skipped: 0,
        margin_min: None,
    };
    for k in 0..cfg.samples {
        let raw = GridFunction::from_raw(grid, (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let radius = cfg.rho * (1.0 - rng.random::<f64>());
        let mut d = raw.clone();
        if k % 2 == 1 {
            let c = critical_cone_project(problem, ctx, cfg.tau, &raw)?;
            if c.max_abs() > 0.0 {
                d = c;
            }
        }
        let norm = lp_norm(&d, ball.exponent())?;
        if norm == 0.0 {
            report.degenerate += 1;
            continue;
        }
        let z = problem.project(&zbar.axpy(radius / norm, &d)?)?;
        let dist = l2_norm(&z.sub(zbar)?);
        if dist == 0.0 {
            report.degenerate += 1;
            continue;
        }
        let j = match problem.cost(&z) {
            Ok(j) => j,
            Err(Error::NotConverged { .. }) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        report.evaluated += 1;
        let d2 = dist * dist;
        if j < jbar + cfg.beta * d2 - slack {
            report.violations += 1;
        }
        let margin = (j - jbar) / d2;
        report.margin_min = Some(report.margin_min.map_or(margin, |m: f64| m.min(margin)));
    }
    Ok(report)
}
