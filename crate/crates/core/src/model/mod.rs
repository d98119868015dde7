//! Problem definition: coefficients, mutation kernels, initial data and grids.

mod expr;
mod grid;
mod kernel;
mod validate;

use serde::{Deserialize, Serialize};

pub use expr::{BinOp, CoefficientExpr, Expr, Func, Var};
pub use grid::{Axis, Grid};
pub use kernel::{KernelSpec, MutationKernel, DEFAULT_Z_NODES, GAUSSIAN_SUPPORT};
pub use validate::{Assumption, AssumptionCheck, Severity, ValidationReport, Violation};

use crate::{Error, Result};

/// Parses a coefficient expression over `x` and `y`.
pub fn parse_coefficient(text: &str) -> Result<CoefficientExpr> {
    CoefficientExpr::parse(text)
}

/// Aging speed `A`, birth rate `b` and death rate `d`, with optional declared bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientModel {
    #[serde(rename = "A")]
    pub a: CoefficientExpr,
    pub b: CoefficientExpr,
    pub d: CoefficientExpr,
    #[serde(default, rename = "A0")]
    pub a0: Option<f64>,
    #[serde(default, rename = "Ainf")]
    pub a_inf: Option<f64>,
    #[serde(default)]
    pub r_lo: Option<f64>,
    #[serde(default)]
    pub r_hi: Option<f64>,
}

impl CoefficientModel {
    pub fn parse(a: &str, b: &str, d: &str) -> Result<Self> {
        let field = |name: &str, text: &str| {
            CoefficientExpr::parse(text).map_err(|e| e.context(format!("model.{name}")))
        };
        Ok(Self {
            a: field("A", a)?,
            b: field("b", b)?,
            d: field("d", d)?,
            a0: None,
            a_inf: None,
            r_lo: None,
            r_hi: None,
        })
    }

    /// Trait-selection example: `A = 1`, `b = 10y/(1+x²)`, `d = y³(2+x/3)`.
    pub fn selection_example() -> Self {
        Self::parse("1", "10*y/(1+x^2)", "y^3*(2+x/3)").expect("built-in expressions")
    }

    pub fn constant(a: f64, b: f64, d: f64) -> Self {
        Self {
            a: CoefficientExpr::constant(a),
            b: CoefficientExpr::constant(b),
            d: CoefficientExpr::constant(d),
            a0: None,
            a_inf: None,
            r_lo: None,
            r_hi: None,
        }
    }

    /// Coefficient values along the age axis at a fixed trait.
    pub fn column(&self, x: &Axis, y: f64) -> Result<Column> {
        let n = x.len();
        let (mut a, mut b, mut d) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let xi = x.node(i);
            a.push(finite("A", self.a.eval(xi, y), xi, y)?);
            b.push(finite("b", self.b.eval(xi, y), xi, y)?);
            d.push(finite("d", self.d.eval(xi, y), xi, y)?);
        }
        Ok(Column { y, h: x.step(), a, b, d })
    }

    /// Coefficient tables on the whole grid, one contiguous column per trait node.
    pub fn tables(&self, x: &Axis, y: &Axis) -> Result<Tables> {
        let columns = (0..y.len())
            .map(|j| self.column(x, y.node(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tables { x: *x, y: *y, columns })
    }

    /// Declared `A∞` if present, otherwise the maximum of `A` over the grid.
    pub fn a_inf_on(&self, x: &Axis, y: &Axis) -> Result<f64> {
        if let Some(v) = self.a_inf {
            return Ok(v);
        }
        let mut hi = f64::NEG_INFINITY;
        for j in 0..y.len() {
            for i in 0..x.len() {
                let (xi, yj) = (x.node(i), y.node(j));
                hi = hi.max(finite("A", self.a.eval(xi, yj), xi, yj)?);
            }
        }
        Ok(hi)
    }

    pub fn validate(&self, x: &Axis, y: &Axis) -> Result<ValidationReport> {
        validate::validate_assumptions(self, x, y)
    }
}

fn finite(what: &str, v: f64, x: f64, y: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what: what.to_string(), x, y })
    }
}

/// `A`, `b`, `d` sampled on the age grid at trait `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub y: f64,
    pub h: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
}

impl Column {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// True when the birth rate vanishes on the whole column.
    pub fn is_sterile(&self) -> bool {
        self.b.iter().all(|&b| b == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub x: Axis,
    pub y: Axis,
    pub columns: Vec<Column>,
}

/// Initial data `m⁰ = p⁰·e^{u⁰/ε}` and its declared bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub u0: CoefficientExpr,
    pub p0: CoefficientExpr,
    pub k0: f64,
    #[serde(default)]
    pub gamma_lo: Option<f64>,
    #[serde(default)]
    pub gamma_hi: Option<f64>,
    /// Total mass the initial population is rescaled to, if set.
    #[serde(default)]
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialCheck {
    pub max_u0: f64,
    pub maximizers: Vec<usize>,
    pub max_slope: f64,
    pub lipschitz_ok: bool,
}

impl InitialCheck {
    pub fn well_prepared(&self) -> bool {
        self.max_u0.abs() <= 1e-12 && self.maximizers.len() == 1 && self.lipschitz_ok
    }
}

impl InitialData {
    pub fn selection_example() -> Self {
        Self {
            u0: CoefficientExpr::parse("-(y-0.5)^2/2").expect("built-in"),
            p0: CoefficientExpr::parse("exp(-0.8*x)").expect("built-in"),
            k0: 3.5,
            gamma_lo: None,
            gamma_hi: None,
            mass: Some(1000.0),
        }
    }

    pub fn u0_on(&self, y: &Axis) -> Result<Vec<f64>> {
        (0..y.len())
            .map(|j| {
                let yj = y.node(j);
                finite("u0", self.u0.eval(0.0, yj), 0.0, yj)
            })
            .collect()
    }

    /// Checks that `u⁰` peaks at 0 on a single node and is `k0`-Lipschitz on the grid.
    /// On a uniform grid the pairwise Lipschitz bound reduces to adjacent nodes.
    pub fn check(&self, y: &Axis) -> Result<InitialCheck> {
        let u = self.u0_on(y)?;
        let max_u0 = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let maximizers = (0..u.len())
            .filter(|&j| (u[j] - max_u0).abs() <= 1e-12)
            .collect();
        let h = y.step();
        let max_slope = u
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / h)
            .fold(0.0, f64::max);
        Ok(InitialCheck {
            max_u0,
            maximizers,
            max_slope,
            lipschitz_ok: max_slope <= self.k0 * (1.0 + 1e-12),
        })
    }
}
