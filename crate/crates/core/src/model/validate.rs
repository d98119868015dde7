//! Grid-level checks of the standing assumptions on `A`, `b` and `d`.

use std::fmt;

use super::{Axis, CoefficientModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// `A0 ≤ A ≤ A∞` with `A0 > 0`.
    BoundedAging,
    /// `b > 0` and `d > 0`.
    Positivity,
    /// `d → +∞` as `x → ∞`, probed as `d` still increasing at the last age node.
    DeathBlowUp,
    /// `0 < r_lo ≤ b − d ≤ r_hi`.
    NetGrowthBounds,
}

impl Assumption {
    pub fn label(self) -> &'static str {
        match self {
            Assumption::BoundedAging => "bounded-aging",
            Assumption::Positivity => "positivity",
            Assumption::DeathBlowUp => "death-blow-up",
            Assumption::NetGrowthBounds => "net-growth-bounds",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Fatal,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub severity: Severity,
    pub violations: usize,
    pub first: Option<Violation>,
    pub worst: Option<Violation>,
}

impl AssumptionCheck {
    fn new(assumption: Assumption, severity: Severity) -> Self {
        Self { assumption, severity, violations: 0, first: None, worst: None }
    }

    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    /// Records a violation; `badness` orders violations so the worst one is kept.
    fn record(&mut self, v: Violation, badness: f64, worst_badness: &mut f64) {
        self.violations += 1;
        if self.first.is_none() {
            self.first = Some(v);
        }
        if badness > *worst_badness {
            *worst_badness = badness;
            self.worst = Some(v);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub a_min: f64,
    pub a_max: f64,
    /// Minimum and maximum of `b − d` over the grid.
    pub r_lo: f64,
    pub r_hi: f64,
    /// Trait nodes where `b ≡ 0` along the age axis.
    pub sterile: Vec<usize>,
}

impl ValidationReport {
    pub fn check(&self, a: Assumption) -> &AssumptionCheck {
        self.checks
            .iter()
            .find(|c| c.assumption == a)
            .expect("every assumption is checked")
    }

    pub fn is_fatal(&self) -> bool {
        self.checks
            .iter()
            .any(|c| c.severity == Severity::Fatal && !c.holds())
    }

    pub fn warnings(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks
            .iter()
            .filter(|c| c.severity == Severity::Warning && !c.holds())
    }

    /// Net growth bounds usable as eigenvalue bounds, if they hold.
    pub fn growth_bounds(&self) -> Option<(f64, f64)> {
        self.check(Assumption::NetGrowthBounds)
            .holds()
            .then_some((self.r_lo, self.r_hi))
    }

    pub fn into_result(self) -> Result<Self> {
        if let Some(c) = self
            .checks
            .iter()
            .find(|c| c.severity == Severity::Fatal && !c.holds())
        {
            let v = c.first.expect("violation recorded");
            return Err(Error::Domain(format!(
                "assumption {} fails at node (i={}, j={}) x={} y={}: value {}",
                c.assumption.label(),
                v.i,
                v.j,
                v.x,
                v.y,
                v.value
            )));
        }
        Ok(self)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "A in [{}, {}], b-d in [{}, {}]", self.a_min, self.a_max, self.r_lo, self.r_hi)?;
        for c in &self.checks {
            let status = if c.holds() {
                "holds".to_string()
            } else {
                let level = match c.severity {
                    Severity::Fatal => "FATAL",
                    Severity::Warning => "warning",
                };
                let node = |v: &Option<Violation>| {
                    v.map(|v| format!("(x={}, y={}) value {}", v.x, v.y, v.value))
                        .unwrap_or_default()
                };
                format!(
                    "{level}: {} nodes, first {}, worst {}",
                    c.violations,
                    node(&c.first),
                    node(&c.worst)
                )
            };
            writeln!(f, "{}: {status}", c.assumption.label())?;
        }
        if !self.sterile.is_empty() {
            writeln!(f, "sterile trait nodes: {:?}", self.sterile)?;
        }
        Ok(())
    }
}

pub(super) fn validate_assumptions(
    model: &CoefficientModel,
    x: &Axis,
    y: &Axis,
) -> Result<ValidationReport> {
    let tables = model.tables(x, y)?;
    let mut a_min = f64::INFINITY;
    let mut a_max = f64::NEG_INFINITY;
    let mut r_lo = f64::INFINITY;
    let mut r_hi = f64::NEG_INFINITY;
    for col in &tables.columns {
        for i in 0..col.len() {
            a_min = a_min.min(col.a[i]);
            a_max = a_max.max(col.a[i]);
            let r = col.b[i] - col.d[i];
            r_lo = r_lo.min(r);
            r_hi = r_hi.max(r);
        }
    }
    let lo_a = model.a0.unwrap_or(a_min).max(0.0);
    let hi_a = model.a_inf.unwrap_or(a_max);
    let lo_r = model.r_lo.unwrap_or(r_lo).max(0.0);
    let hi_r = model.r_hi.unwrap_or(r_hi);

    let mut aging = AssumptionCheck::new(Assumption::BoundedAging, Severity::Fatal);
    let mut positivity = AssumptionCheck::new(Assumption::Positivity, Severity::Warning);
    let mut blow_up = AssumptionCheck::new(Assumption::DeathBlowUp, Severity::Warning);
    let mut growth = AssumptionCheck::new(Assumption::NetGrowthBounds, Severity::Warning);
    let [mut wa, mut wp, mut wd, mut wg] = [f64::NEG_INFINITY; 4];
    let mut sterile = Vec::new();
    let last = x.len() - 1;

    for (j, col) in tables.columns.iter().enumerate() {
        if col.is_sterile() {
            sterile.push(j);
        }
        for i in 0..col.len() {
            let node = |value| Violation { i, j, x: x.node(i), y: col.y, value };
            let a = col.a[i];
            let a_excess = (lo_a - a).max(a - hi_a);
            if !(a > 0.0) || a_excess > 0.0 {
                aging.record(node(a), a_excess.max(-a), &mut wa);
            }
            let (b, d) = (col.b[i], col.d[i]);
            if !(b > 0.0 && d > 0.0) {
                let v = b.min(d);
                positivity.record(node(v), -v, &mut wp);
            }
            let r = b - d;
            let r_excess = (lo_r - r).max(r - hi_r);
            if !(r > 0.0) || r_excess > 0.0 {
                growth.record(node(r), r_excess.max(-r), &mut wg);
            }
        }
        if last >= 1 {
            let slope = col.d[last] - col.d[last - 1];
            if !(slope > 0.0) {
                let v = Violation { i: last, j, x: x.node(last), y: col.y, value: slope };
                blow_up.record(v, -slope, &mut wd);
            }
        }
    }

    Ok(ValidationReport {
        checks: vec![aging, positivity, blow_up, growth],
        a_min,
        a_max,
        r_lo,
        r_hi,
        sterile,
    })
}
