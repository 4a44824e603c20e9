//! Uniform tensor grids on intervals and rectangles, nodal grid functions,
//! discrete norms and the pointwise box projection.
//!
//! Only interior nodes are stored; the homogeneous Dirichlet (or exterior)
//! condition is implicit. Values are ordered lexicographically with the
//! x index running fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rectangle { x: [f64; 2], y: [f64; 2] },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        let d = Domain::Interval { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn rectangle(x: [f64; 2], y: [f64; 2]) -> Result<Self> {
        let d = Domain::Rectangle { x, y };
        d.validate()?;
        Ok(d)
    }

    pub fn unit_interval() -> Self {
        Domain::Interval { a: 0.0, b: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in self.axes() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidDomain(format!(
                    "axis bounds must satisfy a < b, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }

    /// Bounds per axis.
    pub fn axes(&self) -> Vec<(f64, f64)> {
        match *self {
            Domain::Interval { a, b } => vec![(a, b)],
            Domain::Rectangle { x, y } => vec![(x[0], x[1]), (y[0], y[1])],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    domain: Domain,
    n: usize,
}

impl Grid {
    pub fn new(domain: Domain, n: usize) -> Result<Self> {
        domain.validate()?;
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: "need at least one interior node".into(),
            });
        }
        Ok(Grid { domain, n })
    }

    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        Grid::new(Domain::interval(a, b)?, n)
    }

    pub fn rectangle(x: [f64; 2], y: [f64; 2], n: usize) -> Result<Self> {
        Grid::new(Domain::rectangle(x, y)?, n)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Interior nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Total number of unknowns (n or n²).
    pub fn len(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Spacing along `axis`.
    pub fn h(&self, axis: usize) -> f64 {
        let (lo, hi) = self.domain.axes()[axis];
        (hi - lo) / (self.n as f64 + 1.0)
    }

    /// Quadrature weight h^N of a single node.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.h(k)).product()
    }

    /// Coordinate of the `i`-th interior node (1-based in the usual
    /// numbering, 0-based here) along `axis`.
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let (lo, _) = self.domain.axes()[axis];
        lo + (i as f64 + 1.0) * self.h(axis)
    }

    /// Coordinates of node `idx` in lexicographic order.
    pub fn node(&self, idx: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.axis_coord(0, idx)],
            _ => vec![
                self.axis_coord(0, idx % self.n),
                self.axis_coord(1, idx / self.n),
            ],
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(GridFunction { grid, values })
    }

    /// Internal constructor for values already known to be well formed.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridFunction { grid, values }
    }

    pub fn zeros(grid: &Grid) -> Self {
        GridFunction::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction {
            grid: *grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every interior node.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = grid.nodes().map(|x| f(&x)).collect();
        GridFunction {
            grid: *grid,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NanEncountered(what))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Nodewise combination of two functions on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(GridFunction {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + c * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Discrete L^p norm by the rectangle rule; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(u: &GridFunction, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("need p >= 1, got {p}"),
        });
    }
    if p.is_infinite() {
        return Ok(u.max_abs());
    }
    let w = u.grid.cell_volume();
    if p == 2.0 {
        return Ok((w * u.values.iter().map(|v| v * v).sum::<f64>()).sqrt());
    }
    let sum: f64 = u.values.iter().map(|v| v.abs().powf(p)).sum();
    Ok((w * sum).powf(1.0 / p))
}

pub fn l2_norm(u: &GridFunction) -> f64 {
    (u.grid.cell_volume() * dot(&u.values, &u.values)).sqrt()
}

/// Discrete L² pairing h^N Σ u_i v_i.
pub fn inner(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    u.grid.check_same(&v.grid)?;
    Ok(u.grid.cell_volume() * dot(&u.values, &v.values))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pointwise control bounds `z_a <= z_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    lower: GridFunction,
    upper: GridFunction,
}

impl ControlBox {
    pub fn new(lower: GridFunction, upper: GridFunction) -> Result<Self> {
        lower.grid.check_same(&upper.grid)?;
        for (node, (&lo, &hi)) in lower.values.iter().zip(&upper.values).enumerate() {
            if lo > hi {
                return Err(Error::InfeasibleBox {
                    node,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(ControlBox { lower, upper })
    }

    pub fn constant(grid: &Grid, lo: f64, hi: f64) -> Result<Self> {
        ControlBox::new(
            GridFunction::constant(grid, lo),
            GridFunction::constant(grid, hi),
        )
    }

    pub fn lower(&self) -> &GridFunction {
        &self.lower
    }

    pub fn upper(&self) -> &GridFunction {
        &self.upper
    }

    pub fn grid(&self) -> &Grid {
        &self.lower.grid
    }

    pub fn contains(&self, z: &GridFunction) -> bool {
        z.grid == self.lower.grid
            && z
                .values
                .iter()
                .zip(self.lower.values.iter().zip(&self.upper.values))
                .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }
}

/// Nodewise clamp `min(z_b, max(z_a, w))`.
pub fn project_box(w: &GridFunction, bx: &ControlBox) -> Result<GridFunction> {
    w.grid.check_same(bx.grid())?;
    let values = w
        .values
        .iter()
        .zip(bx.lower.values.iter().zip(&bx.upper.values))
        .map(|(&v, (&lo, &hi))| hi.min(lo.max(v)))
        .collect();
    Ok(GridFunction::from_raw(w.grid, values))
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    domain: Domain,
    n: usize,
    values: Vec<f64>,
}

impl GridFunction {
    /// JSON envelope `{domain, n, values}`.
    pub fn to_json(&self) -> String {
        let env = Envelope {
            domain: self.grid.domain,
            n: self.grid.n,
            values: self.values.clone(),
        };
        serde_json::to_string(&env).expect("grid function serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(s).map_err(|e| Error::Config {
            path: "<grid function>".into(),
            reason: e.to_string(),
        })?;
        GridFunction::new(Grid::new(env.domain, env.n)?, env.values)
    }

    /// CSV with node coordinates followed by the value, one node per line.
    pub fn to_csv(&self, value_name: &str) -> String {
        let mut out = String::new();
        out.push_str("# columns: node coordinates (x[,y]) then nodal value; lexicographic order, x fastest\n");
        out.push_str(if self.grid.dim() == 1 { "x" } else { "x,y" });
        out.push(',');
        out.push_str(value_name);
        out.push('\n');
        for (i, v) in self.values.iter().enumerate() {
            for c in self.grid.node(i) {
                out.push_str(&fmt_f64(c));
                out.push(',');
            }
            out.push_str(&fmt_f64(*v));
            out.push('\n');
        }
        out
    }
}

/// Serializes only the nodal values; the grid is recorded elsewhere.
pub fn serialize_values<S: serde::Serializer>(u: &GridFunction, ser: S) -> std::result::Result<S::Ok, S::Error> {
    u.values.serialize(ser)
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
