//! Integral fractional Laplacian with Dirichlet exterior condition on an
//! interval, discretized by piecewise linear hat functions.
//!
//! The energy form splits into the interaction part over Ω × Ω and the
//! exterior weight term:
//!
//! ```text
//! E(u, v) = C/2 ∫_Ω∫_Ω (u(x)-u(y))(v(x)-v(y)) |x-y|^{-1-2s} dx dy + ∫_Ω κ(x) u v dx
//! κ(x)    = C/(2s) [(x-a)^{-2s} + (b-x)^{-2s}]
//! ```
//!
//! Element pairs are integrated by offset: identical elements in closed
//! form, neighbours sharing a vertex with a Duffy split along the diagonal
//! (the radial factor is integrated exactly), and separated pairs with
//! tensor Gauss–Legendre. Every local integral scales as h^{1-2s} and is
//! translation invariant, so one local matrix per offset is computed and
//! scattered. The nodal operator is the stiffness divided by the lumped
//! mass h.

use nalgebra::DMatrix;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, Grid, GridFunction};
use crate::operator::{matvec, Backend, FractionalOperator};
use crate::quadrature::GaussLegendre;

pub const DEFAULT_QUADRATURE_ORDER: usize = 8;

/// C_{1,s} = s 4^s Γ((1+2s)/2) / (√π Γ(1−s)).
pub fn normalization_constant(s: f64) -> f64 {
    s * 4f64.powf(s) * gamma(0.5 + s) / (std::f64::consts::PI.sqrt() * gamma(1.0 - s))
}

#[derive(Debug)]
pub struct IntegralOperator {
    grid: Grid,
    s: f64,
    c_ns: f64,
    interaction: DMatrix<f64>,
    exterior: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    nodal: DMatrix<f64>,
    kappa_ext: GridFunction,
}

pub fn build_integral(grid: &Grid, s: f64) -> Result<IntegralOperator> {
    build_integral_with_order(grid, s, DEFAULT_QUADRATURE_ORDER)
}

pub fn build_integral_with_order(grid: &Grid, s: f64, order: usize) -> Result<IntegralOperator> {
    if grid.dim() != 1 {
        return Err(Error::Unsupported(
            "the integral operator is implemented for intervals only".into(),
        ));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("fractional order must lie in (0, 1), got {s}"),
        });
    }
    if order == 0 {
        return Err(Error::InvalidParameter {
            name: "quadrature_order",
            reason: "need at least one point".into(),
        });
    }
    let gl = GaussLegendre::new(order);
    let n = grid.n();
    let h = grid.h(0);
    let (a, b) = grid.domain().axes()[0];
    let c_ns = normalization_constant(s);

    let interaction = assemble_interaction(n, h, s, &gl);
    let exterior = assemble_exterior(n, h, s, c_ns, &gl);
    let stiffness = &interaction * (0.5 * c_ns) + &exterior;
    let nodal = &stiffness / h;
    let kappa_ext = GridFunction::from_fn(grid, |x| {
        c_ns / (2.0 * s) * ((x[0] - a).powf(-2.0 * s) + (b - x[0]).powf(-2.0 * s))
    });
    Ok(IntegralOperator {
        grid: *grid,
        s,
        c_ns,
        interaction,
        exterior,
        stiffness,
        nodal,
        kappa_ext,
    })
}

/// Normalized slope of the hat at mesh offset `m` on the element starting at offset `e`.
fn slope(m: usize, e: usize) -> f64 {
    if m == e {
        -1.0
    } else if m == e + 1 {
        1.0
    } else {
        0.0
    }
}

/// Hat at mesh offset `m` evaluated on element `e` at local coordinate t ∈ [0, 1].
fn hat(m: usize, e: usize, t: f64) -> f64 {
    if m == e {
        1.0 - t
    } else if m == e + 1 {
        t
    } else {
        0.0
    }
}

/// Local interaction matrix (without the h^{1-2s} factor) for the element
/// pair (T_0, T_d), indexed by the distinct mesh offsets {0, 1, d, d+1}.
fn local_interaction(d: usize, s: f64, gl: &GaussLegendre) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut offs = vec![0, 1, d, d + 1];
    offs.sort_unstable();
    offs.dedup();
    let m = offs.len();
    let mut loc = vec![vec![0.0; m]; m];
    let p = 1.0 + 2.0 * s;
    match d {
        0 => {
            let c = 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
            for i in 0..m {
                for j in 0..m {
                    loc[i][j] = slope(offs[i], 0) * slope(offs[j], 0) * c;
                }
            }
        }
        1 => {
            // x = p - hξ in T_0, y = p + hη in T_1 around the shared vertex p;
            // φ(x) - φ(y) = -(α ξ + β η) with α, β the slopes on T_0, T_1.
            let alpha: Vec<f64> = offs.iter().map(|&o| slope(o, 0)).collect();
            let beta: Vec<f64> = offs.iter().map(|&o| slope(o, 1)).collect();
            let radial = 1.0 / (3.0 - 2.0 * s);
            for i in 0..m {
                for j in 0..m {
                    let lower = gl.integrate(|w| {
                        (alpha[i] + beta[i] * w) * (alpha[j] + beta[j] * w) * (1.0 + w).powf(-p)
                    });
                    let upper = gl.integrate(|w| {
                        (alpha[i] * w + beta[i]) * (alpha[j] * w + beta[j]) * (1.0 + w).powf(-p)
                    });
                    loc[i][j] = radial * (lower + upper);
                }
            }
        }
        _ => {
            let df = d as f64;
            for (&xi, &wx) in gl.nodes.iter().zip(&gl.weights) {
                for (&eta, &wy) in gl.nodes.iter().zip(&gl.weights) {
                    let dist = df + eta - xi;
                    let k = wx * wy * dist.powf(-p);
                    let diff: Vec<f64> = offs.iter().map(|&o| hat(o, 0, xi) - hat(o, d, eta)).collect();
                    for i in 0..m {
                        for j in 0..m {
                            loc[i][j] += k * diff[i] * diff[j];
                        }
                    }
                }
            }
        }
    }
    (offs, loc)
}

/// ∫_Ω∫_Ω (φ_i(x)-φ_i(y))(φ_j(x)-φ_j(y)) |x-y|^{-1-2s} over interior hats.
fn assemble_interaction(n: usize, h: f64, s: f64, gl: &GaussLegendre) -> DMatrix<f64> {
    let mut upper = DMatrix::zeros(n, n);
    let scale = h.powf(1.0 - 2.0 * s);
    // elements 0..=n, mesh nodes 0..=n+1, interior mesh node m ↔ unknown m-1
    for d in 0..=n {
        let (offs, loc) = local_interaction(d, s, gl);
        // ordered pairs (k, k+d) and (k+d, k) contribute equally
        let mult = if d == 0 { 1.0 } else { 2.0 };
        for k in 0..=(n - d) {
            for (ia, &oa) in offs.iter().enumerate() {
                let ma = k + oa;
                if ma == 0 || ma > n {
                    continue;
                }
                for (ib, &ob) in offs.iter().enumerate() {
                    let mb = k + ob;
                    if mb < ma || mb > n {
                        continue;
                    }
                    upper[(ma - 1, mb - 1)] += mult * scale * loc[ia][ib];
                }
            }
        }
    }
    mirror_upper(upper)
}

/// ∫_Ω κ φ_i φ_j with κ the exterior weight.
fn assemble_exterior(n: usize, h: f64, s: f64, c_ns: f64, gl: &GaussLegendre) -> DMatrix<f64> {
    let mut upper = DMatrix::zeros(n, n);
    let scale = c_ns / (2.0 * s) * h.powf(1.0 - 2.0 * s);
    let two_s = 2.0 * s;
    for k in 0..=n {
        // local nodes: mesh k (left) and k+1 (right)
        let nodes = [k, k + 1];
        for (ia, &ma) in nodes.iter().enumerate() {
            if ma == 0 || ma > n {
                continue;
            }
            for (ib, &mb) in nodes.iter().enumerate() {
                if mb < ma || mb > n {
                    continue;
                }
                let prod = |t: f64| hat(nodes[ia], k, t) * hat(nodes[ib], k, t);
                // (x-a)/h = k + t, (b-x)/h = n + 1 - k - t
                let left = if k == 0 {
                    // only the right hat survives: ∫ t² t^{-2s}
                    1.0 / (3.0 - two_s)
                } else {
                    gl.integrate(|t| prod(t) * (k as f64 + t).powf(-two_s))
                };
                let right = if k == n {
                    1.0 / (3.0 - two_s)
                } else {
                    gl.integrate(|t| prod(t) * ((n + 1 - k) as f64 - t).powf(-two_s))
                };
                upper[(ma - 1, mb - 1)] += scale * (left + right);
            }
        }
    }
    mirror_upper(upper)
}

fn mirror_upper(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            m[(j, i)] = m[(i, j)];
        }
    }
    m
}

impl IntegralOperator {
    pub fn c_ns(&self) -> f64 {
        self.c_ns
    }

    /// Exterior weight κ at the interior nodes.
    pub fn kappa_ext(&self) -> &GridFunction {
        &self.kappa_ext
    }

    /// Raw Ω × Ω double integral matrix (without the C/2 factor).
    pub fn interaction(&self) -> &DMatrix<f64> {
        &self.interaction
    }

    /// Exterior weight mass matrix ∫ κ φ_i φ_j.
    pub fn exterior(&self) -> &DMatrix<f64> {
        &self.exterior
    }

    /// Energy-form stiffness C/2 · interaction + exterior.
    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn apply_integral(&self, u: &GridFunction) -> Result<GridFunction> {
        matvec(&self.nodal, &self.grid, u)
    }

    pub fn solve_integral_shifted(
        &self,
        potential: &GridFunction,
        rhs: &GridFunction,
    ) -> Result<GridFunction> {
        self.solve_shifted(potential, rhs)
    }

    /// Dense CSV of the stiffness matrix, one row per line.
    pub fn stiffness_csv(&self) -> String {
        let mut out = String::from("# dense stiffness matrix, row i on line i\n");
        for row in self.stiffness.row_iter() {
            let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Coordinate format `i j value`, 0-based, nonzeros only.
    pub fn stiffness_coo(&self) -> String {
        let mut out = String::new();
        let n = self.stiffness.nrows();
        for i in 0..n {
            for j in 0..n {
                let v = self.stiffness[(i, j)];
                if v != 0.0 {
                    out.push_str(&format!("{i} {j} {}\n", fmt_f64(v)));
                }
            }
        }
        out
    }
}

impl FractionalOperator for IntegralOperator {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn order(&self) -> f64 {
        self.s
    }

    fn backend(&self) -> Backend {
        Backend::Integral
    }

    fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.apply_integral(u)
    }

    fn matrix(&self) -> &DMatrix<f64> {
        &self.nodal
    }
}
