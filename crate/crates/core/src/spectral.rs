//! Spectral fractional operator by matrix transfer: the fractional power of
//! a symmetric finite-difference Dirichlet operator taken through its
//! eigendecomposition.
//!
//! Constant coefficients on an interval or rectangle use the closed-form
//! sine eigenbasis (tensorized in 2D). A variable coefficient a(x) in 1D is
//! sampled at cell midpoints and the resulting tridiagonal matrix is
//! diagonalized densely.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::operator::{check_potential, Backend, FractionalOperator};

/// Scalar diffusion coefficient a(x)·I.
#[derive(Clone)]
pub enum EllipticCoefficient {
    Constant(f64),
    /// 1D only. `floor` is the ellipticity constant γ.
    Variable {
        a: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        floor: f64,
    },
}

impl fmt::Debug for EllipticCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EllipticCoefficient::Constant(c) => write!(f, "Constant({c})"),
            EllipticCoefficient::Variable { floor, .. } => {
                write!(f, "Variable {{ floor: {floor} }}")
            }
        }
    }
}

impl EllipticCoefficient {
    pub fn variable(a: impl Fn(f64) -> f64 + Send + Sync + 'static, floor: f64) -> Self {
        EllipticCoefficient::Variable {
            a: Arc::new(a),
            floor,
        }
    }
}

/// Largest number of unknowns the dense machinery accepts.
#[derive(Debug, Clone, Copy)]
pub struct DenseLimits {
    pub max_1d: usize,
    pub max_2d: usize,
}

impl Default for DenseLimits {
    fn default() -> Self {
        DenseLimits {
            max_1d: 1024,
            max_2d: 64 * 64,
        }
    }
}

#[derive(Debug)]
enum Basis {
    Sine1 {
        s: DMatrix<f64>,
    },
    /// `perm[k]` is the flat index `ky * n + kx` of the k-th smallest eigenvalue.
    Sine2 {
        s: DMatrix<f64>,
        perm: Vec<usize>,
    },
    Dense {
        q: DMatrix<f64>,
    },
}

/// Orthonormal 1D sine matrix S_{ik} = sqrt(2/(n+1)) sin((i+1)(k+1)π/(n+1)).
fn sine_matrix(n: usize) -> DMatrix<f64> {
    let scale = (2.0 / (n as f64 + 1.0)).sqrt();
    DMatrix::from_fn(n, n, |i, k| {
        scale * (((i + 1) * (k + 1)) as f64 * PI / (n as f64 + 1.0)).sin()
    })
}

/// Eigenvalues 4 sin²(kπ/(2(n+1))) of the unscaled tridiag(−1, 2, −1).
fn sine_eigenvalues(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| {
            let t = (k as f64 * PI / (2.0 * (n as f64 + 1.0))).sin();
            4.0 * t * t
        })
        .collect()
}

impl Basis {
    fn forward(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Basis::Sine1 { s } | Basis::Dense { q: s } => {
                (s.transpose() * nalgebra::DVector::from_column_slice(u))
                    .as_slice()
                    .to_vec()
            }
            Basis::Sine2 { s, perm } => {
                let n = s.nrows();
                // row = y index, column = x index
                let um = DMatrix::from_row_slice(n, n, u);
                let c = s * um * s;
                perm.iter().map(|&p| c[(p / n, p % n)]).collect()
            }
        }
    }

    fn inverse(&self, c: &[f64]) -> Vec<f64> {
        match self {
            Basis::Sine1 { s } | Basis::Dense { q: s } => {
                (s * nalgebra::DVector::from_column_slice(c))
                    .as_slice()
                    .to_vec()
            }
            Basis::Sine2 { s, perm } => {
                let n = s.nrows();
                let mut cm = DMatrix::zeros(n, n);
                for (k, &p) in perm.iter().enumerate() {
                    cm[(p / n, p % n)] = c[k];
                }
                let um = s * cm * s;
                let mut out = Vec::with_capacity(n * n);
                for iy in 0..n {
                    for ix in 0..n {
                        out.push(um[(iy, ix)]);
                    }
                }
                out
            }
        }
    }

    /// Euclidean-orthonormal eigenvector matrix, columns in ascending order.
    fn dense(&self) -> DMatrix<f64> {
        match self {
            Basis::Sine1 { s } | Basis::Dense { q: s } => s.clone(),
            Basis::Sine2 { s, perm } => {
                let n = s.nrows();
                DMatrix::from_fn(n * n, n * n, |row, k| {
                    let (iy, ix) = (row / n, row % n);
                    let (ky, kx) = (perm[k] / n, perm[k] % n);
                    s[(iy, ky)] * s[(ix, kx)]
                })
            }
        }
    }
}

#[derive(Debug)]
pub struct SpectralOperator {
    grid: Grid,
    s: f64,
    eigenvalues: Vec<f64>,
    basis: Basis,
    backend: Backend,
    power_matrix: OnceLock<DMatrix<f64>>,
}

pub fn build_spectral(grid: &Grid, coeff: &EllipticCoefficient, s: f64) -> Result<SpectralOperator> {
    build_spectral_with_limits(grid, coeff, s, DenseLimits::default())
}

pub fn build_spectral_with_limits(
    grid: &Grid,
    coeff: &EllipticCoefficient,
    s: f64,
    limits: DenseLimits,
) -> Result<SpectralOperator> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("fractional order must lie in (0, 1), got {s}"),
        });
    }
    let limit = if grid.dim() == 1 {
        limits.max_1d
    } else {
        limits.max_2d
    };
    if grid.len() > limit {
        return Err(Error::TooLarge {
            size: grid.len(),
            limit,
        });
    }
    let n = grid.n();
    let (eigenvalues, basis, backend) = match (coeff, grid.dim()) {
        (EllipticCoefficient::Constant(gamma), dim) => {
            if !(gamma.is_finite() && *gamma > 0.0) {
                return Err(Error::NotElliptic {
                    node: 0,
                    value: *gamma,
                    floor: 0.0,
                });
            }
            let mu = sine_eigenvalues(n);
            if dim == 1 {
                let h = grid.h(0);
                let lambda = mu.iter().map(|m| gamma * m / (h * h)).collect();
                (lambda, Basis::Sine1 { s: sine_matrix(n) }, Backend::AnalyticSine)
            } else {
                let (hx, hy) = (grid.h(0), grid.h(1));
                let flat: Vec<f64> = (0..n * n)
                    .map(|p| gamma * (mu[p % n] / (hx * hx) + mu[p / n] / (hy * hy)))
                    .collect();
                let mut perm: Vec<usize> = (0..n * n).collect();
                perm.sort_by(|&i, &j| flat[i].total_cmp(&flat[j]).then(i.cmp(&j)));
                let lambda = perm.iter().map(|&p| flat[p]).collect();
                (
                    lambda,
                    Basis::Sine2 {
                        s: sine_matrix(n),
                        perm,
                    },
                    Backend::AnalyticSine,
                )
            }
        }
        (EllipticCoefficient::Variable { a, floor }, 1) => {
            let (lambda, q) = variable_eigen(grid, a.as_ref(), *floor)?;
            (lambda, Basis::Dense { q }, Backend::DenseEig)
        }
        (EllipticCoefficient::Variable { .. }, _) => {
            return Err(Error::Unsupported(
                "variable diffusion coefficient is only available in 1D".into(),
            ))
        }
    };
    if eigenvalues.first().is_none_or(|&l: &f64| l <= 0.0) {
        return Err(Error::LinearAlgebra("smallest eigenvalue is not positive".into()));
    }
    Ok(SpectralOperator {
        grid: *grid,
        s,
        eigenvalues,
        basis,
        backend,
        power_matrix: OnceLock::new(),
    })
}

/// Midpoint-sampled 3-point operator −(a u')' / h² and its sorted eigenpairs.
fn variable_eigen(
    grid: &Grid,
    a: &(dyn Fn(f64) -> f64 + Send + Sync),
    floor: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter {
            name: "floor",
            reason: format!("ellipticity floor must be positive, got {floor}"),
        });
    }
    let n = grid.n();
    let h = grid.h(0);
    let (lo, _) = grid.domain().axes()[0];
    // a at the n + 1 cell midpoints x_{i+1/2}
    let mid: Vec<f64> = (0..=n).map(|i| a(lo + (i as f64 + 0.5) * h)).collect();
    for (node, &v) in mid.iter().enumerate() {
        if !(v >= floor) {
            return Err(Error::NotElliptic {
                node,
                value: v,
                floor,
            });
        }
    }
    for i in 0..n {
        let v = a(grid.axis_coord(0, i));
        if !(v >= floor) {
            return Err(Error::NotElliptic {
                node: i,
                value: v,
                floor,
            });
        }
    }
    let mut t = DMatrix::zeros(n, n);
    let ih2 = 1.0 / (h * h);
    for i in 0..n {
        t[(i, i)] = (mid[i] + mid[i + 1]) * ih2;
        if i + 1 < n {
            t[(i, i + 1)] = -mid[i + 1] * ih2;
            t[(i + 1, i)] = -mid[i + 1] * ih2;
        }
    }
    let eig = SymmetricEigen::try_new(t, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::LinearAlgebra("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lambda: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut q = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        // fix the sign so the largest-magnitude entry is positive
        let pivot = v.iter().fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for row in 0..n {
            q[(row, col)] = sign * v[row];
        }
    }
    Ok((lambda, q))
}

impl SpectralOperator {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// k-th eigenfunction (0-based), normalized in the discrete L² inner product.
    pub fn eigenvector(&self, k: usize) -> GridFunction {
        let mut c = vec![0.0; self.eigenvalues.len()];
        c[k] = 1.0 / self.grid.cell_volume().sqrt();
        GridFunction::from_raw(self.grid, self.basis.inverse(&c))
    }

    /// Euclidean eigencoordinates Qᵀu.
    fn coefficients(&self, u: &GridFunction) -> Result<Vec<f64>> {
        self.grid.check_same(u.grid())?;
        Ok(self.basis.forward(u.values()))
    }

    /// Σ_k λ_k^σ ⟨u, φ_k⟩ φ_k for arbitrary real σ.
    pub fn apply_power(&self, u: &GridFunction, sigma: f64) -> Result<GridFunction> {
        let mut c = self.coefficients(u)?;
        for (ck, &lam) in c.iter_mut().zip(&self.eigenvalues) {
            *ck *= lam.powf(sigma);
        }
        Ok(GridFunction::from_raw(self.grid, self.basis.inverse(&c)))
    }

    /// (Σ_k λ_k^θ ⟨u, φ_k⟩²)^{1/2}.
    pub fn hs_norm(&self, u: &GridFunction, theta: f64) -> Result<f64> {
        let c = self.coefficients(u)?;
        let sum: f64 = c
            .iter()
            .zip(&self.eigenvalues)
            .map(|(ck, lam)| lam.powf(theta) * ck * ck)
            .sum();
        Ok((self.grid.cell_volume() * sum).sqrt())
    }

    /// CSV rows `k,lambda_k` with k starting at 1.
    pub fn spectrum_csv(&self) -> String {
        let mut out = String::from("# columns: k (1-based mode index), lambda_k\nk,lambda\n");
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            out.push_str(&format!("{},{}\n", k + 1, crate::grid::fmt_f64(*lam)));
        }
        out
    }

    fn diagonal_solve(&self, shift: f64, rhs: &GridFunction) -> Result<GridFunction> {
        let mut c = self.coefficients(rhs)?;
        for (ck, &lam) in c.iter_mut().zip(&self.eigenvalues) {
            *ck /= lam.powf(self.s) + shift;
        }
        Ok(GridFunction::from_raw(self.grid, self.basis.inverse(&c)))
    }
}

impl FractionalOperator for SpectralOperator {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn order(&self) -> f64 {
        self.s
    }

    fn backend(&self) -> Backend {
        self.backend
    }

    fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.apply_power(u, self.s)
    }

    fn as_spectral(&self) -> Option<&SpectralOperator> {
        Some(self)
    }

    fn matrix(&self) -> &DMatrix<f64> {
        self.power_matrix.get_or_init(|| {
            let q = self.basis.dense();
            let mut qs = q.clone();
            for (k, mut col) in qs.column_iter_mut().enumerate() {
                col *= self.eigenvalues[k].powf(self.s);
            }
            let m = qs * q.transpose();
            (&m + m.transpose()) * 0.5
        })
    }

    fn solve_shifted(&self, potential: &GridFunction, rhs: &GridFunction) -> Result<GridFunction> {
        self.grid.check_same(potential.grid())?;
        check_potential(potential)?;
        let w = potential.values();
        if w.iter().all(|&x| x == w[0]) {
            return self.diagonal_solve(w[0], rhs);
        }
        crate::operator::ShiftedSystem::new(self.matrix(), &self.grid, potential)?.solve(rhs)
    }
}
