//! Common interface of the discrete fractional operators and the shifted
//! linear solve `(A + diag(w)) v = r` shared by the state, linearized and
//! adjoint equations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l2_norm, Grid, GridFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    AnalyticSine,
    DenseEig,
    Integral,
}

/// A discrete symmetric positive definite realization of a fractional
/// diffusion operator acting on nodal values.
pub trait FractionalOperator: Send + Sync {
    fn grid(&self) -> &Grid;

    /// Fractional order s.
    fn order(&self) -> f64;

    fn backend(&self) -> Backend;

    /// A u.
    fn apply(&self, u: &GridFunction) -> Result<GridFunction>;

    /// Dense nodal matrix of A, symmetric in the Euclidean inner product.
    fn matrix(&self) -> &DMatrix<f64>;

    /// The spectral realization, when this is one; enables H^θ norms.
    fn as_spectral(&self) -> Option<&crate::spectral::SpectralOperator> {
        None
    }

    /// Solve `(A + diag(potential)) v = rhs`.
    fn solve_shifted(&self, potential: &GridFunction, rhs: &GridFunction) -> Result<GridFunction> {
        ShiftedSystem::new(self.matrix(), self.grid(), potential)?.solve(rhs)
    }
}

pub(crate) fn check_potential(potential: &GridFunction) -> Result<()> {
    for (node, &w) in potential.values().iter().enumerate() {
        if w.is_nan() || w < 0.0 {
            return Err(Error::NegativePotential { node, value: w });
        }
    }
    Ok(())
}

/// Cholesky factorization of `A + diag(w)`, reusable across right-hand sides.
pub struct ShiftedSystem {
    grid: Grid,
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl ShiftedSystem {
    pub fn new(a: &DMatrix<f64>, grid: &Grid, potential: &GridFunction) -> Result<Self> {
        grid.check_same(potential.grid())?;
        check_potential(potential)?;
        let mut matrix = a.clone();
        for (i, &w) in potential.values().iter().enumerate() {
            matrix[(i, i)] += w;
        }
        let chol = Cholesky::new(matrix.clone()).ok_or_else(|| {
            Error::LinearAlgebra("shifted operator is not numerically positive definite".into())
        })?;
        Ok(ShiftedSystem {
            grid: *grid,
            matrix,
            chol,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Direct solve followed by one step of iterative refinement.
    pub fn solve(&self, rhs: &GridFunction) -> Result<GridFunction> {
        self.grid.check_same(rhs.grid())?;
        let r = DVector::from_column_slice(rhs.values());
        let mut v = self.chol.solve(&r);
        let res = &r - &self.matrix * &v;
        v += self.chol.solve(&res);
        let out = GridFunction::from_raw(self.grid, v.as_slice().to_vec());
        out.check_finite("shifted solve")?;
        Ok(out)
    }

    /// Discrete L² norm of `(A + diag(w)) v − r`.
    pub fn residual(&self, v: &GridFunction, rhs: &GridFunction) -> Result<f64> {
        self.grid.check_same(v.grid())?;
        let vv = DVector::from_column_slice(v.values());
        let r = &self.matrix * vv;
        let diff = GridFunction::from_raw(self.grid, r.as_slice().to_vec()).sub(rhs)?;
        Ok(l2_norm(&diff))
    }
}

pub(crate) fn matvec(a: &DMatrix<f64>, grid: &Grid, u: &GridFunction) -> Result<GridFunction> {
    grid.check_same(u.grid())?;
    let v = a * DVector::from_column_slice(u.values());
    Ok(GridFunction::from_raw(*grid, v.as_slice().to_vec()))
}
