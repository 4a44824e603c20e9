//! Derivatives of the control-to-state map and of the reduced cost
//!
//! ```text
//! 𝒥(z) = ½‖S(z) − u_d‖² + (μ/2)‖z‖²
//! ```
//!
//! All linear solves share the operator `A + diag(f_u(u))`, which is
//! factorized once per context. Gradients and Hessian actions are returned
//! as discrete L² Riesz representatives.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner, l2_norm, GridFunction};
use crate::nonlinearity::{eval_field, Nonlinearity};
use crate::operator::{FractionalOperator, ShiftedSystem};
use crate::state::{solve_state, StateOptions};

/// Frozen linearization of the control problem at a control z.
pub struct SensitivityContext<'a> {
    op: &'a dyn FractionalOperator,
    nl: &'a Nonlinearity,
    z: GridFunction,
    u: GridFunction,
    u_d: GridFunction,
    mu: f64,
    system: ShiftedSystem,
    phi: OnceLock<GridFunction>,
}

impl<'a> SensitivityContext<'a> {
    /// Solves the state at `z` and factorizes the linearized operator.
    pub fn new(
        op: &'a dyn FractionalOperator,
        nl: &'a Nonlinearity,
        z: &GridFunction,
        u_d: &GridFunction,
        mu: f64,
        opts: &StateOptions,
    ) -> Result<Self> {
        let u = solve_state(op, nl, z, opts)?.u;
        Self::from_state(op, nl, z, u, u_d, mu)
    }

    /// Builds a context from an already solved state `u = S(z)`.
    pub fn from_state(
        op: &'a dyn FractionalOperator,
        nl: &'a Nonlinearity,
        z: &GridFunction,
        u: GridFunction,
        u_d: &GridFunction,
        mu: f64,
    ) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("regularization must be positive, got {mu}"),
            });
        }
        if nl.differentiability_order() < 1 {
            return Err(Error::DerivativeUnavailable {
                requested: 1,
                available: 0,
            });
        }
        op.grid().check_same(z.grid())?;
        op.grid().check_same(u_d.grid())?;
        let fu = eval_field(nl, &u, 1)?;
        let system = ShiftedSystem::new(op.matrix(), op.grid(), &fu)?;
        Ok(SensitivityContext {
            op,
            nl,
            z: z.clone(),
            u,
            u_d: u_d.clone(),
            mu,
            system,
            phi: OnceLock::new(),
        })
    }

    pub fn z(&self) -> &GridFunction {
        &self.z
    }

    pub fn state(&self) -> &GridFunction {
        &self.u
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn operator(&self) -> &'a dyn FractionalOperator {
        self.op
    }

    pub fn nonlinearity(&self) -> &'a Nonlinearity {
        self.nl
    }

    /// 𝒥(z) at the stored state.
    pub fn cost(&self) -> Result<f64> {
        cost_from_state(&self.u, &self.z, &self.u_d, self.mu)
    }

    /// u_ζ = S′(z)ζ solving (A + f_u(u)) u_ζ = ζ.
    pub fn solve_linearized(&self, zeta: &GridFunction) -> Result<GridFunction> {
        self.system.solve(zeta)
    }

    fn f_uu(&self) -> Result<GridFunction> {
        if self.nl.differentiability_order() < 2 {
            return Err(Error::DerivativeUnavailable {
                requested: 2,
                available: self.nl.differentiability_order(),
            });
        }
        eval_field(self.nl, &self.u, 2)
    }

    /// u_{ζ₁ζ₂} = S″(z)[ζ₁, ζ₂] solving (A + f_u(u)) w = −f_uu(u) u_{ζ₁} u_{ζ₂}.
    pub fn solve_second(&self, zeta1: &GridFunction, zeta2: &GridFunction) -> Result<GridFunction> {
        let fuu = self.f_uu()?;
        let u1 = self.solve_linearized(zeta1)?;
        let u2 = self.solve_linearized(zeta2)?;
        let rhs = fuu.mul(&u1)?.mul(&u2)?.scale(-1.0);
        self.system.solve(&rhs)
    }

    /// Adjoint φ solving (A + f_u(u)) φ = u − u_d; computed once.
    pub fn solve_adjoint(&self) -> Result<&GridFunction> {
        if let Some(phi) = self.phi.get() {
            return Ok(phi);
        }
        let phi = self.system.solve(&self.u.sub(&self.u_d)?)?;
        Ok(self.phi.get_or_init(|| phi))
    }

    /// φ + μz.
    pub fn reduced_gradient(&self) -> Result<GridFunction> {
        self.solve_adjoint()?.axpy(self.mu, &self.z)
    }

    /// Hζ with ⟨Hζ₁, ζ₂⟩ = 𝒥″(z)[ζ₁, ζ₂].
    pub fn hessian_vec(&self, zeta: &GridFunction) -> Result<GridFunction> {
        let fuu = self.f_uu()?;
        let phi = self.solve_adjoint()?;
        let u1 = self.solve_linearized(zeta)?;
        let weight = phi.mul(&fuu)?.map(|v| 1.0 - v);
        let psi = self.system.solve(&weight.mul(&u1)?)?;
        psi.axpy(self.mu, zeta)
    }

    /// 𝒥″(z)[ζ₁, ζ₂] assembled term by term from S′ and f_uu.
    pub fn hessian_form(&self, zeta1: &GridFunction, zeta2: &GridFunction) -> Result<f64> {
        let fuu = self.f_uu()?;
        let phi = self.solve_adjoint()?;
        let u1 = self.solve_linearized(zeta1)?;
        let u2 = self.solve_linearized(zeta2)?;
        let prod = u1.mul(&u2)?;
        Ok(inner(&prod, &GridFunction::constant(prod.grid(), 1.0))?
            - inner(&phi.mul(&fuu)?, &prod)?
            + self.mu * inner(zeta1, zeta2)?)
    }
}

pub fn cost_from_state(u: &GridFunction, z: &GridFunction, u_d: &GridFunction, mu: f64) -> Result<f64> {
    let misfit = l2_norm(&u.sub(u_d)?);
    let reg = l2_norm(z);
    Ok(0.5 * misfit * misfit + 0.5 * mu * reg * reg)
}

/// 𝒥(z) through a fresh state solve.
pub fn reduced_cost(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    z: &GridFunction,
    u_d: &GridFunction,
    mu: f64,
    opts: &StateOptions,
) -> Result<f64> {
    let u = solve_state(op, nl, z, opts)?.u;
    cost_from_state(&u, z, u_d, mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheckRow {
    pub h: f64,
    pub finite_difference: f64,
    pub analytic: f64,
    pub rel_error: f64,
    /// Observed order against the previous row; absent on the first row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed_order: Option<f64>,
}

fn tabulate(hs: &[f64], analytic: f64, fd: impl Fn(f64) -> Result<f64>) -> Result<Vec<DerivativeCheckRow>> {
    let mut rows: Vec<DerivativeCheckRow> = Vec::with_capacity(hs.len());
    for &h in hs {
        let value = fd(h)?;
        let rel_error = (value - analytic).abs() / analytic.abs().max(f64::MIN_POSITIVE);
        let observed_order = rows
            .last()
            .map(|prev| (prev.rel_error / rel_error).ln() / (prev.h / h).ln());
        rows.push(DerivativeCheckRow {
            h,
            finite_difference: value,
            analytic,
            rel_error,
            observed_order,
        });
    }
    Ok(rows)
}

/// ⟨∇𝒥(z), ζ⟩ against (𝒥(z+hζ) − 𝒥(z−hζ))/(2h).
pub fn gradient_check(ctx: &SensitivityContext<'_>, zeta: &GridFunction, hs: &[f64], opts: &StateOptions) -> Result<Vec<DerivativeCheckRow>> {
    let analytic = inner(&ctx.reduced_gradient()?, zeta)?;
    let j = |z: &GridFunction| reduced_cost(ctx.op, ctx.nl, z, &ctx.u_d, ctx.mu, opts);
    tabulate(hs, analytic, |h| {
        Ok((j(&ctx.z.axpy(h, zeta)?)? - j(&ctx.z.axpy(-h, zeta)?)?) / (2.0 * h))
    })
}

/// ⟨Hζ, ζ⟩ against (𝒥(z+hζ) − 2𝒥(z) + 𝒥(z−hζ))/h².
pub fn hessian_check(ctx: &SensitivityContext<'_>, zeta: &GridFunction, hs: &[f64], opts: &StateOptions) -> Result<Vec<DerivativeCheckRow>> {
    let analytic = inner(&ctx.hessian_vec(zeta)?, zeta)?;
    let j0 = ctx.cost()?;
    let j = |z: &GridFunction| reduced_cost(ctx.op, ctx.nl, z, &ctx.u_d, ctx.mu, opts);
    tabulate(hs, analytic, |h| {
        Ok((j(&ctx.z.axpy(h, zeta)?)? - 2.0 * j0 + j(&ctx.z.axpy(-h, zeta)?)?) / (h * h))
    })
}

/// (S(z+hζ) − S(z−hζ))/(2h) against u_ζ, errors in discrete L².
pub fn linearized_check(ctx: &SensitivityContext<'_>, zeta: &GridFunction, hs: &[f64], opts: &StateOptions) -> Result<Vec<DerivativeCheckRow>> {
    let u_zeta = ctx.solve_linearized(zeta)?;
    let scale = l2_norm(&u_zeta);
    let mut rows: Vec<DerivativeCheckRow> = Vec::new();
    for &h in hs {
        let up = solve_state(ctx.op, ctx.nl, &ctx.z.axpy(h, zeta)?, opts)?.u;
        let dn = solve_state(ctx.op, ctx.nl, &ctx.z.axpy(-h, zeta)?, opts)?.u;
        let fd = up.sub(&dn)?.scale(0.5 / h);
        let rel_error = l2_norm(&fd.sub(&u_zeta)?) / scale.max(f64::MIN_POSITIVE);
        let observed_order = rows.last().map(|p| (p.rel_error / rel_error).ln() / (p.h / h).ln());
        rows.push(DerivativeCheckRow {
            h,
            finite_difference: l2_norm(&fd),
            analytic: scale,
            rel_error,
            observed_order,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianLipschitzReport {
    pub samples: usize,
    pub radius: f64,
    /// max |𝒥″(z+h)[ζ₁,ζ₂] − 𝒥″(z)[ζ₁,ζ₂]| / (‖h‖ ‖ζ₁‖ ‖ζ₂‖).
    pub max_ratio: f64,
    /// Same with h halved.
    pub max_ratio_halved: f64,
}

/// Empirical Lipschitz constant of z ↦ 𝒥″(z) on {‖z‖_∞ ≤ M}.
#[allow(clippy::too_many_arguments)]
pub fn hessian_lipschitz_probe(
    op: &dyn FractionalOperator,
    nl: &Nonlinearity,
    u_d: &GridFunction,
    mu: f64,
    samples: usize,
    radius: f64,
    seed: u64,
    opts: &StateOptions,
) -> Result<HessianLipschitzReport> {
    let grid = *op.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |amp: f64| {
        GridFunction::from_raw(grid, (0..grid.len()).map(|_| rng.random_range(-amp..=amp)).collect())
    };
    let mut max_ratio: f64 = 0.0;
    let mut max_half: f64 = 0.0;
    for _ in 0..samples {
        let z = draw(radius);
        let h = draw(radius);
        let z1 = draw(1.0);
        let z2 = draw(1.0);
        let base = SensitivityContext::new(op, nl, &z, u_d, mu, opts)?.hessian_form(&z1, &z2)?;
        let denom = l2_norm(&z1) * l2_norm(&z2);
        for (scale, slot) in [(1.0, &mut max_ratio), (0.5, &mut max_half)] {
            let hh = h.scale(scale);
            let shifted = SensitivityContext::new(op, nl, &z.add(&hh)?, u_d, mu, opts)?.hessian_form(&z1, &z2)?;
            let ratio = (shifted - base).abs() / (l2_norm(&hh) * denom);
            *slot = slot.max(ratio);
        }
    }
    Ok(HessianLipschitzReport {
        samples,
        radius,
        max_ratio,
        max_ratio_halved: max_half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::integral::build_integral;
    use crate::nonlinearity::PowerLaw;
    use crate::spectral::{build_spectral, EllipticCoefficient, SpectralOperator};

    fn spectral(n: usize, s: f64) -> SpectralOperator {
        build_spectral(&Grid::interval(0.0, 1.0, n).unwrap(), &EllipticCoefficient::Constant(1.0), s).unwrap()
    }

    fn cubic() -> Nonlinearity {
        PowerLaw::constant(1.0, 3.0).unwrap().nonlinearity()
    }

    fn rand_fn(grid: &Grid, seed: u64, amp: f64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridFunction::new(*grid, (0..grid.len()).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
    }

    fn opts() -> StateOptions {
        StateOptions::with_tol(1e-14)
    }

    fn rel(a: &GridFunction, b: &GridFunction) -> f64 {
        l2_norm(&a.sub(b).unwrap()) / l2_norm(b).max(1e-300)
    }

    #[test]
    fn linear_reductions() {
        let op = spectral(32, 0.5);
        let g = *op.grid();
        let zero = Nonlinearity::zero();
        let z = rand_fn(&g, 1, 2.0);
        let ud = rand_fn(&g, 2, 1.0);
        let ctx = SensitivityContext::new(&op, &zero, &z, &ud, 0.1, &opts()).unwrap();
        let zeta = rand_fn(&g, 3, 1.0);
        let want = op.apply_power(&zeta, -0.5).unwrap();
        assert!(rel(&ctx.solve_linearized(&zeta).unwrap(), &want) < 1e-12);
        assert_eq!(ctx.solve_linearized(&GridFunction::zeros(&g)).unwrap().max_abs(), 0.0);
        assert_eq!(ctx.solve_second(&zeta, &z).unwrap().max_abs(), 0.0);
        let hz = ctx.hessian_vec(&zeta).unwrap();
        let want = op.apply_power(&zeta, -1.0).unwrap().axpy(0.1, &zeta).unwrap();
        assert!(rel(&hz, &want) < 1e-11);
    }

    #[test]
    fn adjoint_cases() {
        let op = spectral(24, 0.3);
        let g = *op.grid();
        let zero = Nonlinearity::zero();
        let z = rand_fn(&g, 5, 1.0);
        let u = op.solve_shifted(&GridFunction::zeros(&g), &z).unwrap();
        let ctx = SensitivityContext::new(&op, &zero, &z, &u, 1.0, &opts()).unwrap();
        assert!(ctx.solve_adjoint().unwrap().max_abs() < 1e-12);

        let phi1 = op.eigenvector(0);
        let ud = u.sub(&phi1).unwrap();
        let ctx = SensitivityContext::from_state(&op, &zero, &z, u, &ud, 1.0).unwrap();
        let want = phi1.scale(op.eigenvalues()[0].powf(-0.3));
        assert!(rel(ctx.solve_adjoint().unwrap(), &want) < 1e-11);
    }

    #[test]
    fn duality_and_gradient_identities() {
        let op = build_integral(&Grid::interval(-1.0, 1.0, 30).unwrap(), 0.5).unwrap();
        let g = *op.grid();
        let nl = cubic();
        let z = rand_fn(&g, 7, 3.0);
        let ud = rand_fn(&g, 8, 1.0);
        let ctx = SensitivityContext::new(&op, &nl, &z, &ud, 0.5, &opts()).unwrap();
        let zeta = rand_fn(&g, 9, 1.0);
        let lhs = inner(&ctx.state().sub(&ud).unwrap(), &ctx.solve_linearized(&zeta).unwrap()).unwrap();
        let rhs = inner(ctx.solve_adjoint().unwrap(), &zeta).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());

        let mu1 = SensitivityContext::from_state(&op, &nl, &z, ctx.state().clone(), ctx.state(), 1.0).unwrap();
        assert!(rel(&mu1.reduced_gradient().unwrap(), &z) < 1e-14);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // linear-quadratic: z = -φ(z)/μ solves (μ + A^{-2s}) z = A^{-s} u_d
        let op = spectral(20, 0.5);
        let g = *op.grid();
        let mu = 0.05;
        let ud = GridFunction::from_fn(&g, |x| (std::f64::consts::PI * x[0]).sin());
        let rhs = op.apply_power(&ud, -0.5).unwrap();
        let m = op.matrix();
        let ainv2 = {
            let mut a2 = m * m;
            a2 = a2.try_inverse().unwrap();
            a2
        };
        let sys = ainv2.map(|v| v) + nalgebra::DMatrix::identity(20, 20) * mu;
        let zbar = sys.lu().solve(&nalgebra::DVector::from_column_slice(rhs.values())).unwrap();
        let zbar = GridFunction::new(g, zbar.as_slice().to_vec()).unwrap();
        let zero = Nonlinearity::zero();
        let ctx = SensitivityContext::new(&op, &zero, &zbar, &ud, mu, &opts()).unwrap();
        assert!(ctx.reduced_gradient().unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn second_derivative_symmetric_and_consistent() {
        let op = spectral(32, 0.75);
        let g = *op.grid();
        let nl = cubic();
        let z = rand_fn(&g, 11, 20.0);
        let ud = rand_fn(&g, 12, 1.0);
        let ctx = SensitivityContext::new(&op, &nl, &z, &ud, 0.01, &opts()).unwrap();
        let z1 = rand_fn(&g, 13, 1.0);
        let z2 = rand_fn(&g, 14, 30.0);
        let w12 = ctx.solve_second(&z1, &z2).unwrap();
        assert!(rel(&ctx.solve_second(&z2, &z1).unwrap(), &w12) < 1e-14);

        let a = inner(&ctx.hessian_vec(&z1).unwrap(), &z2).unwrap();
        let b = inner(&z1, &ctx.hessian_vec(&z2).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs());
        let form = ctx.hessian_form(&z1, &z2).unwrap();
        assert!((a - form).abs() <= 1e-10 * a.abs());

        // S″ by central differences of S′ at perturbed states
        let exact = ctx.solve_second(&z1, &z2).unwrap();
        let errs: Vec<f64> = [1e-2, 1e-3]
            .iter()
            .map(|&h| {
                let p = SensitivityContext::new(&op, &nl, &z.axpy(h, &z2).unwrap(), &ud, 0.01, &opts()).unwrap();
                let m = SensitivityContext::new(&op, &nl, &z.axpy(-h, &z2).unwrap(), &ud, 0.01, &opts()).unwrap();
                let fd = p.solve_linearized(&z1).unwrap().sub(&m.solve_linearized(&z1).unwrap()).unwrap().scale(0.5 / h);
                rel(&fd, &exact)
            })
            .collect();
        let order = (errs[0] / errs[1]).log10();
        assert!((order - 2.0).abs() < 0.2, "observed {order} from {errs:?}");
    }

    #[test]
    fn linearized_matches_state_differences() {
        let op = spectral(32, 0.5);
        let g = *op.grid();
        let nl = cubic();
        let z = rand_fn(&g, 15, 20.0);
        let ctx = SensitivityContext::new(&op, &nl, &z, &GridFunction::zeros(&g), 1.0, &opts()).unwrap();
        let zeta = rand_fn(&g, 16, 30.0);
        let rows = linearized_check(&ctx, &zeta, &[1e-3, 1e-4], &opts()).unwrap();
        let order = rows[1].observed_order.unwrap();
        assert!((order - 2.0).abs() < 0.2, "{rows:?}");
    }

    #[test]
    fn gradient_and_hessian_against_cost_differences() {
        let op = spectral(64, 0.5);
        let g = *op.grid();
        let nl = cubic();
        let z = GridFunction::from_fn(&g, |x| 40.0 * (3.0 * x[0]).sin() + 10.0);
        let ud = GridFunction::from_fn(&g, |x| x[0] * (1.0 - x[0]));
        let ctx = SensitivityContext::new(&op, &nl, &z, &ud, 1e-3, &opts()).unwrap();
        let zeta = GridFunction::from_fn(&g, |x| 50.0 * (7.0 * x[0]).cos());
        let rows = gradient_check(&ctx, &zeta, &[1e-3, 1e-4], &opts()).unwrap();
        assert!(rows[1].rel_error <= 1e-5, "{rows:?}");
        assert!((rows[1].observed_order.unwrap() - 2.0).abs() < 0.2, "{rows:?}");
        let rows = hessian_check(&ctx, &zeta, &[1e-2, 1e-3], &opts()).unwrap();
        assert!((rows[1].observed_order.unwrap() - 2.0).abs() < 0.3, "{rows:?}");
    }

    #[test]
    fn hessian_lipschitz_bounded() {
        let op = spectral(16, 0.5);
        let g = *op.grid();
        let nl = cubic();
        let ud = GridFunction::zeros(&g);
        let r = hessian_lipschitz_probe(&op, &nl, &ud, 0.1, 5, 2.0, 3, &opts()).unwrap();
        assert!(r.max_ratio.is_finite() && r.max_ratio_halved.is_finite());
        assert!(r.max_ratio_halved <= 2.0 * r.max_ratio + 1e-12);
    }

    #[test]
    fn requires_second_derivative_for_hessian() {
        let op = spectral(8, 0.5);
        let g = *op.grid();
        let nl = PowerLaw::constant(1.0, 1.5).unwrap().nonlinearity();
        let z = GridFunction::constant(&g, 1.0);
        let ctx = SensitivityContext::new(&op, &nl, &z, &z, 1.0, &opts()).unwrap();
        assert!(ctx.reduced_gradient().is_ok());
        assert!(matches!(ctx.hessian_vec(&z), Err(Error::DerivativeUnavailable { .. })));
        assert!(SensitivityContext::new(&op, &nl, &z, &z, 0.0, &opts()).is_err());
    }
}
