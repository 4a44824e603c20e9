//! Nonlinearities f(x, t) with their first two t-derivatives, the power law
//! b(x)|t|^{q-1}t, and sampling-based verifiers for the structural
//! assumptions (monotone and odd, the growth inequality, Δ₂).
//!
//! The spatial argument is the node index of the grid the nonlinearity is
//! evaluated on; nodal coefficients are stored per node.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

type Field = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    f: Field,
    f_u: Option<Field>,
    f_uu: Option<Field>,
    growth_c: Option<f64>,
    order: usize,
    /// Number of nodes for x-dependent nonlinearities.
    nodes: Option<usize>,
    /// f_uu is unbounded at t = 0.
    singular_at_zero: bool,
    is_zero: bool,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("order", &self.order)
            .field("growth_c", &self.growth_c)
            .field("nodes", &self.nodes)
            .finish()
    }
}

impl Nonlinearity {
    /// f ≡ 0: the linear state equation.
    pub fn zero() -> Self {
        let z: Field = Arc::new(|_, _| 0.0);
        Nonlinearity {
            name: "zero".into(),
            f: z.clone(),
            f_u: Some(z.clone()),
            f_uu: Some(z),
            growth_c: Some(1.0),
            order: 2,
            nodes: None,
            singular_at_zero: false,
            is_zero: true,
        }
    }

    /// An x-independent nonlinearity from closures; the differentiability
    /// order is the number of derivatives supplied.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_u: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
        f_uu: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    ) -> Self {
        let order = match (&f_u, &f_uu) {
            (Some(_), Some(_)) => 2,
            (Some(_), None) => 1,
            _ => 0,
        };
        let lift = |g: Box<dyn Fn(f64) -> f64 + Send + Sync>| -> Field {
            Arc::new(move |_, t| g(t))
        };
        Nonlinearity {
            name: name.into(),
            f: Arc::new(move |_, t| f(t)),
            f_u: f_u.map(lift),
            f_uu: if order == 2 { f_uu.map(lift) } else { None },
            growth_c: None,
            order,
            nodes: None,
            singular_at_zero: false,
            is_zero: false,
        }
    }

    pub fn with_growth_constant(mut self, c: f64) -> Self {
        self.growth_c = Some(c);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn differentiability_order(&self) -> usize {
        self.order
    }

    pub fn growth_constant(&self) -> Option<f64> {
        self.growth_c
    }

    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    /// Node count for x-dependent nonlinearities, `None` when f does not depend on x.
    pub fn nodes(&self) -> Option<usize> {
        self.nodes
    }

    pub fn f(&self, node: usize, t: f64) -> f64 {
        (self.f)(node, t)
    }

    pub fn f_u(&self, node: usize, t: f64) -> Option<f64> {
        self.f_u.as_ref().map(|g| g(node, t))
    }

    pub fn f_uu(&self, node: usize, t: f64) -> Option<f64> {
        self.f_uu.as_ref().map(|g| g(node, t))
    }

    fn derivative(&self, order: usize) -> Option<&Field> {
        match order {
            0 => Some(&self.f),
            1 => self.f_u.as_ref(),
            2 => self.f_uu.as_ref(),
            _ => None,
        }
    }

    fn sample_nodes(&self) -> usize {
        self.nodes.unwrap_or(1)
    }
}

/// Nodewise f, f_u or f_uu of `u`.
///
/// Order 2 is also served for power laws with 1 < q < 2 (registered with
/// differentiability order 1) as long as no node has u = 0.
pub fn eval_field(nl: &Nonlinearity, u: &GridFunction, order: usize) -> Result<GridFunction> {
    if let Some(m) = nl.nodes {
        if m != u.len() {
            return Err(Error::LengthMismatch {
                expected: m,
                got: u.len(),
            });
        }
    }
    let g = nl.derivative(order).ok_or(Error::DerivativeUnavailable {
        requested: order,
        available: nl.order,
    })?;
    if order == 2 && nl.singular_at_zero {
        if let Some(node) = u.values().iter().position(|&t| t == 0.0) {
            return Err(Error::SingularDerivative { node });
        }
    }
    let mut out = u.clone();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        *v = g(i, *v);
    }
    out.check_finite(match order {
        0 => "f",
        1 => "f_u",
        _ => "f_uu",
    })?;
    Ok(out)
}

/// Spatial weight of a power law.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Constant(f64),
    Nodal(Vec<f64>),
}

impl Weight {
    fn at(&self, node: usize) -> f64 {
        match self {
            Weight::Constant(b) => *b,
            Weight::Nodal(v) => v[node],
        }
    }
}

/// f(x, t) = b(x)|t|^{q-1}t with b > 0, q ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLaw {
    b: Weight,
    q: f64,
}

impl PowerLaw {
    pub fn new(b: Weight, q: f64) -> Result<Self> {
        if !(q.is_finite() && q >= 1.0) {
            return Err(Error::InvalidParameter {
                name: "q",
                reason: format!("power-law exponent must be >= 1, got {q}"),
            });
        }
        let ok = match &b {
            Weight::Constant(c) => c.is_finite() && *c > 0.0,
            Weight::Nodal(v) => !v.is_empty() && v.iter().all(|c| c.is_finite() && *c > 0.0),
        };
        if !ok {
            return Err(Error::InvalidParameter {
                name: "b",
                reason: "power-law weight must be positive at every node".into(),
            });
        }
        Ok(PowerLaw { b, q })
    }

    pub fn constant(b: f64, q: f64) -> Result<Self> {
        PowerLaw::new(Weight::Constant(b), q)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn weight(&self) -> &Weight {
        &self.b
    }

    /// 2^{1-q}, the sharp growth constant.
    pub fn sharp_growth_constant(&self) -> f64 {
        2f64.powf(1.0 - self.q)
    }

    pub fn f(&self, node: usize, t: f64) -> f64 {
        power_f(self.b.at(node), self.q, t)
    }

    /// Primitive F(x, t) = b|t|^{q+1}/(q+1).
    pub fn big_f(&self, node: usize, t: f64) -> f64 {
        self.b.at(node) * t.abs().powf(self.q + 1.0) / (self.q + 1.0)
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        let q = self.q;
        let (b1, b2, b3) = (self.b.clone(), self.b.clone(), self.b.clone());
        let f: Field = Arc::new(move |i, t| power_f(b1.at(i), q, t));
        let f_u: Field = Arc::new(move |i, t| power_fu(b2.at(i), q, t));
        let f_uu: Field = Arc::new(move |i, t| power_fuu(b3.at(i), q, t));
        let singular = q > 1.0 && q < 2.0;
        Nonlinearity {
            name: format!("power_law(q={q})"),
            f,
            f_u: Some(f_u),
            f_uu: Some(f_uu),
            growth_c: Some(self.sharp_growth_constant()),
            order: if singular { 1 } else { 2 },
            nodes: match &self.b {
                Weight::Constant(_) => None,
                Weight::Nodal(v) => Some(v.len()),
            },
            singular_at_zero: singular,
            is_zero: false,
        }
    }
}

fn power_f(b: f64, q: f64, t: f64) -> f64 {
    if q == 1.0 {
        b * t
    } else {
        b * t.abs().powf(q - 1.0) * t
    }
}

fn power_fu(b: f64, q: f64, t: f64) -> f64 {
    if q == 1.0 {
        b
    } else {
        q * b * t.abs().powf(q - 1.0)
    }
}

fn power_fuu(b: f64, q: f64, t: f64) -> f64 {
    if q == 1.0 || t == 0.0 {
        // limit value for q >= 2; for 1 < q < 2 the singularity is flagged by eval_field
        if q > 1.0 && q < 2.0 && t == 0.0 {
            return f64::INFINITY;
        }
        0.0
    } else {
        q * (q - 1.0) * b * t.abs().powf(q - 2.0) * t.signum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub node: usize,
    pub xi: f64,
    pub eta: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub pass: bool,
    pub c: f64,
    /// min |f(ξ)-f(η)| / |f(ξ-η)| over samples; `None` when every denominator vanished.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub samples: usize,
}

/// Samples (x, ξ, η) over nodes × [-M, M]² and tests c|f(ξ-η)| ≤ |f(ξ)-f(η)|.
pub fn check_growth(nl: &Nonlinearity, c: f64, samples: usize, m: f64, seed: u64) -> Result<GrowthReport> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: format!("growth constant must lie in (0, 1], got {c}"),
        });
    }
    if !(m > 0.0) {
        return Err(Error::InvalidParameter {
            name: "M",
            reason: format!("sampling range must be positive, got {m}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = nl.sample_nodes();
    let mut worst: Option<f64> = None;
    let mut witness: Option<Witness> = None;
    let mut pass = true;
    for _ in 0..samples {
        let node = rng.random_range(0..nodes);
        let xi = rng.random_range(-m..=m);
        let eta = rng.random_range(-m..=m);
        let (fx, fe, fd) = (nl.f(node, xi), nl.f(node, eta), nl.f(node, xi - eta));
        let lhs = c * fd.abs();
        let rhs = (fx - fe).abs();
        let tol = 1e-12 * (fx.abs() + fe.abs() + fd.abs());
        let violated = lhs > rhs + tol;
        if fd != 0.0 {
            let ratio = rhs / fd.abs();
            if worst.is_none_or(|w| ratio < w) {
                worst = Some(ratio);
            }
            if violated && witness.as_ref().is_none_or(|w| ratio < w.ratio) {
                witness = Some(Witness { node, xi, eta, ratio });
            }
        }
        if violated {
            pass = false;
        }
    }
    Ok(GrowthReport {
        pass,
        c,
        worst_ratio: worst,
        witness,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotonicity_witness: Option<(usize, f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oddness_witness: Option<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_witness: Option<usize>,
    pub samples: usize,
}

/// Strict increase on sampled ordered pairs, oddness and f(x, 0) = 0.
pub fn check_monotone_odd(nl: &Nonlinearity, samples: usize, m: f64, seed: u64) -> MonotoneReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = nl.sample_nodes();
    let zero_witness = (0..nodes).find(|&i| nl.f(i, 0.0) != 0.0);
    let mut monotonicity_witness = None;
    let mut oddness_witness = None;
    for _ in 0..samples {
        let node = rng.random_range(0..nodes);
        let a = rng.random_range(-m..=m);
        let b = rng.random_range(-m..=m);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if lo < hi && monotonicity_witness.is_none() && nl.f(node, lo) >= nl.f(node, hi) {
            monotonicity_witness = Some((node, lo, hi));
        }
        let (fp, fm) = (nl.f(node, a), nl.f(node, -a));
        if oddness_witness.is_none() && (fp + fm).abs() > 1e-12 * (fp.abs() + fm.abs()).max(1e-300) {
            oddness_witness = Some((node, a));
        }
    }
    MonotoneReport {
        pass: zero_witness.is_none() && monotonicity_witness.is_none() && oddness_witness.is_none(),
        monotonicity_witness,
        oddness_witness,
        zero_witness,
        samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta2Report {
    pub pass: bool,
    /// Lower constant c₁ = 1/(q+1) in c₁ t f ≤ F ≤ t f.
    pub c1: f64,
    pub max_rel_deviation: f64,
    pub samples: usize,
}

/// Verifies t f(x, t) = (q+1) F(x, t) at sampled points.
pub fn check_delta2(pl: &PowerLaw, samples: usize, m: f64, seed: u64) -> Delta2Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = match pl.weight() {
        Weight::Constant(_) => 1,
        Weight::Nodal(v) => v.len(),
    };
    let mut dev: f64 = 0.0;
    for _ in 0..samples {
        let node = rng.random_range(0..nodes);
        let t = rng.random_range(-m..=m);
        let tf = t * pl.f(node, t);
        let f = (pl.q() + 1.0) * pl.big_f(node, t);
        let scale = tf.abs().max(f.abs());
        if scale > 0.0 {
            dev = dev.max((tf - f).abs() / scale);
        }
    }
    Delta2Report {
        pass: dev <= 1e-12,
        c1: 1.0 / (pl.q() + 1.0),
        max_rel_deviation: dev,
        samples,
    }
}
