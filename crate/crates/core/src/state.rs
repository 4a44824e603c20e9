//! Semilinear state equation `A u + f(x, u) = z` and empirical probes of
//! its stability estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l2_norm, lp_norm, GridFunction};
use crate::nonlinearity::{eval_field, Nonlinearity};
use crate::operator::{Backend, FractionalOperator, ShiftedSystem};

pub const ARMIJO_SLOPE: f64 = 1e-4;
pub const MAX_BACKTRACKS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateOptions {
    pub tol: f64,
    pub max_newton: usize,
    pub max_fixed_point: usize,
}

impl Default for StateOptions {
    fn default() -> Self {
        StateOptions {
            tol: 1e-10,
            max_newton: 50,
            max_fixed_point: 10_000,
        }
    }
}

impl StateOptions {
    pub fn with_tol(tol: f64) -> Self {
        StateOptions {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateMethod {
    Newton,
    FixedPoint,
}

#[derive(Debug, Clone)]
pub struct StateSolveReport {
    pub u: GridFunction,
    pub iterations: usize,
    /// Discrete L² norm of A u + f(u) − z.
    pub final_residual: f64,
    pub backend: Backend,
    pub method: StateMethod,
    /// Residual before each iteration, followed by the final residual.
    pub newton_history: Vec<f64>,
}

/// Scalar part of a [`StateSolveReport`] for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub iterations: usize,
    pub final_residual: f64,
    pub backend: Backend,
    pub method: StateMethod,
    pub newton_history: Vec<f64>,
}

impl StateSolveReport {
    pub fn summary(&self) -> StateSummary {
        StateSummary {
            iterations: self.iterations,
            final_residual: self.final_residual,
            backend: self.backend,
            method: self.method,
            newton_history: self.newton_history.clone(),
        }
    }
}

/// A u + f(u) − z.
pub fn state_residual(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    u: &GridFunction,
    z: &GridFunction,
) -> Result<GridFunction> {
    op.apply(u)?.add(&eval_field(nl, u, 0)?)?.sub(z)
}

pub fn solve_state(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    z: &GridFunction,
    opts: &StateOptions,
) -> Result<StateSolveReport> {
    solve_state_from(op, nl, z, opts, None)
}

/// Solves the state equation from `initial` (the linear solution when `None`).
///
/// Newton is used when f_u is available; a failed Newton run from the
/// linear guess is retried once from zero.
pub fn solve_state_from(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    z: &GridFunction,
    opts: &StateOptions,
    initial: Option<&GridFunction>,
) -> Result<StateSolveReport> {
    op.grid().check_same(z.grid())?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("tolerance must be positive, got {}", opts.tol),
        });
    }
    let zero = GridFunction::zeros(op.grid());
    if nl.differentiability_order() == 0 {
        return fixed_point(op, nl, z, opts, initial);
    }
    let u0 = match initial {
        Some(u) => u.clone(),
        None => op.solve_shifted(&zero, z)?,
    };
    match newton(op, nl, z, opts, u0) {
        Err(Error::NotConverged { .. }) if initial.is_none() => newton(op, nl, z, opts, zero),
        other => other,
    }
}

fn newton(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    z: &GridFunction,
    opts: &StateOptions,
    mut u: GridFunction,
) -> Result<StateSolveReport> {
    let target = opts.tol * (1.0 + l2_norm(z));
    let mut res = state_residual(op, nl, &u, z)?;
    let mut norm = l2_norm(&res);
    let mut history = vec![norm];
    let mut iterations = 0;
    while norm > target {
        if iterations == opts.max_newton {
            return Err(Error::NotConverged {
                solver: "state Newton",
                iterations,
                residual: norm,
                best: Some(Box::new(u)),
            });
        }
        let fu = eval_field(nl, &u, 1)?;
        let step = op.solve_shifted(&fu, &res)?.scale(-1.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial = u.axpy(alpha, &step)?;
            let r = state_residual(op, nl, &trial, z)?;
            let rn = l2_norm(&r);
            if rn.is_finite() && rn <= (1.0 - ARMIJO_SLOPE * alpha) * norm {
                accepted = Some((trial, r, rn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, r, rn)) = accepted else {
            return Err(Error::NotConverged {
                solver: "state Newton (line search)",
                iterations,
                residual: norm,
                best: Some(Box::new(u)),
            });
        };
        u = trial;
        res = r;
        norm = rn;
        history.push(norm);
        iterations += 1;
    }
    Ok(StateSolveReport {
        u,
        iterations,
        final_residual: norm,
        backend: op.backend(),
        method: StateMethod::Newton,
        newton_history: history,
    })
}

/// Largest secant slope of f over [-r, r] on a sampling lattice, per node.
fn slope_bound(nl: &Nonlinearity, nodes: usize, r: f64) -> f64 {
    const PTS: usize = 64;
    let mut rho: f64 = 0.0;
    for i in 0..nodes {
        let mut prev_t = -r;
        let mut prev_f = nl.f(i, prev_t);
        for k in 1..=PTS {
            let t = -r + 2.0 * r * k as f64 / PTS as f64;
            let ft = nl.f(i, t);
            rho = rho.max((ft - prev_f) / (t - prev_t));
            prev_t = t;
            prev_f = ft;
        }
    }
    rho
}

/// u ← (A + ρI)^{-1}(z − f(u) + ρu) with ρ re-estimated when the iterate
/// leaves the range the current slope bound covers.
fn fixed_point(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    z: &GridFunction,
    opts: &StateOptions,
    initial: Option<&GridFunction>,
) -> Result<StateSolveReport> {
    let grid = *op.grid();
    let zero = GridFunction::zeros(&grid);
    let mut u = match initial {
        Some(u) => u.clone(),
        None => op.solve_shifted(&zero, z)?,
    };
    let target = opts.tol * (1.0 + l2_norm(z));
    let mut res = state_residual(op, nl, &u, z)?;
    let mut norm = l2_norm(&res);
    let mut history = vec![norm];
    let mut range = 0.0;
    let mut system: Option<(f64, ShiftedSystem)> = None;
    let mut iterations = 0;
    while norm > target {
        if iterations == opts.max_fixed_point {
            return Err(Error::NotConverged {
                solver: "state fixed point",
                iterations,
                residual: norm,
                best: Some(Box::new(u)),
            });
        }
        let reach = 2.0 * u.max_abs().max(z.max_abs()) + 1.0;
        if system.is_none() || reach > range {
            range = reach;
            let rho = slope_bound(nl, grid.len(), range).max(1e-12);
            let shift = GridFunction::constant(&grid, rho);
            system = Some((rho, ShiftedSystem::new(op.matrix(), &grid, &shift)?));
        }
        let (rho, sys) = system.as_ref().expect("system initialized above");
        let rhs = z.sub(&eval_field(nl, &u, 0)?)?.axpy(*rho, &u)?;
        u = sys.solve(&rhs)?;
        res = state_residual(op, nl, &u, z)?;
        norm = l2_norm(&res);
        history.push(norm);
        iterations += 1;
    }
    Ok(StateSolveReport {
        u,
        iterations,
        final_residual: norm,
        backend: op.backend(),
        method: StateMethod::FixedPoint,
        newton_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PTilde {
    Two,
    Infinity,
}

impl PTilde {
    pub fn exponent(self) -> f64 {
        match self {
            PTilde::Two => 2.0,
            PTilde::Infinity => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoNormGap {
    pub p_tilde: PTilde,
    /// Admissible data exponents for the L^∞ bound: "p>N/(2s)", "p>1" or "p=1".
    pub regime: String,
    /// N/(2s) in the first regime, 1 otherwise.
    pub p_min: f64,
}

/// p̃ = 2 exactly when N < 4s, plus the data-exponent regime of the L^∞ bound.
pub fn two_norm_gap(dim: usize, s: f64) -> Result<TwoNormGap> {
    if !(dim == 1 || dim == 2) {
        return Err(Error::InvalidParameter {
            name: "N",
            reason: format!("dimension must be 1 or 2, got {dim}"),
        });
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("fractional order must lie in (0, 1), got {s}"),
        });
    }
    let n = dim as f64;
    let p_tilde = if n < 4.0 * s {
        PTilde::Two
    } else {
        PTilde::Infinity
    };
    let (regime, p_min) = if n > 2.0 * s {
        ("p>N/(2s)", n / (2.0 * s))
    } else if n == 2.0 * s {
        ("p>1", 1.0)
    } else {
        ("p=1", 1.0)
    };
    Ok(TwoNormGap {
        p_tilde,
        regime: regime.into(),
        p_min,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub p: f64,
    pub max_ratio_linf: f64,
    /// Spectral backend only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_ratio_hs: Option<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Max over pairs of ‖u₁−u₂‖_∞/‖z₁−z₂‖_p and ‖u₁−u₂‖_{H^s}/‖z₁−z₂‖_{H^{-s}}.
pub fn lipschitz_probe(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    pairs: &[(GridFunction, GridFunction)],
    p: f64,
    opts: &StateOptions,
) -> Result<LipschitzReport> {
    let spectral = op.as_spectral();
    let s = op.order();
    let mut max_linf: f64 = 0.0;
    let mut max_hs: Option<f64> = None;
    let mut evaluated = 0;
    let mut skipped = 0;
    for (z1, z2) in pairs {
        let dz = z1.sub(z2)?;
        let dz_p = lp_norm(&dz, p)?;
        if dz_p == 0.0 {
            skipped += 1;
            continue;
        }
        let u1 = solve_state(op, nl, z1, opts)?.u;
        let u2 = solve_state(op, nl, z2, opts)?.u;
        let du = u1.sub(&u2)?;
        max_linf = max_linf.max(du.max_abs() / dz_p);
        if let Some(sp) = spectral {
            let ratio = sp.hs_norm(&du, s)? / sp.hs_norm(&dz, -s)?;
            max_hs = Some(max_hs.map_or(ratio, |m| m.max(ratio)));
        }
        evaluated += 1;
    }
    Ok(LipschitzReport {
        p,
        max_ratio_linf: max_linf,
        max_ratio_hs: max_hs,
        evaluated,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinfBoundReport {
    pub p: f64,
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
    pub skipped: usize,
}

/// Max over samples of ‖u‖_∞/‖z‖_p.
pub fn linf_bound_probe(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    z_samples: &[GridFunction],
    p: f64,
    opts: &StateOptions,
) -> Result<LinfBoundReport> {
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for z in z_samples {
        let zp = lp_norm(z, p)?;
        if zp == 0.0 {
            skipped += 1;
            continue;
        }
        let u = solve_state(op, nl, z, opts)?.u;
        ratios.push(u.max_abs() / zp);
    }
    Ok(LinfBoundReport {
        p,
        max_ratio: ratios.iter().fold(0.0, |m: f64, &r| m.max(r)),
        ratios,
        skipped,
    })
}
