//! Principal eigenelements of the age-structured operator at fixed trait.
//!
//! For each trait `y` and mutation intensity `η` the triple `(Λ, Q, Φ)` solves
//!
//! ```text
//! ∂x(A Q) + (d − Λ) Q = 0,   A(0) Q(0) = η ∫ b Q,   ∫ b Q = 1,
//! −A ∂x Φ + (d − Λ) Φ = η b Φ(0),                   ∫ Q Φ = 1,
//! ```
//!
//! and is given explicitly once `Λ` is known: `Λ` is the root of
//! `F(y, Λ) = 1/η` with `F(y, λ) = ∫ (b/A) e^{−G}` and `G(x) = ∫₀ˣ (d − λ)/A`.

mod scheme;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Axis, CoefficientModel, Column, MutationKernel};
use crate::quadrature::{cumulative_trapezoid, exp_fitted_cell, phi1, phi1_prime, XRule};
use crate::{Error, Result};

pub use scheme::{scheme_eigen, BoundaryWeights, SchemeEigen};

/// Largest exponent accepted in `e^{−G}` before reporting overflow.
pub const MAX_EXPONENT: f64 = 700.0;

/// How the age integrals beyond `x_max` are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailClosure {
    /// Integrals stop at `x_max`.
    #[default]
    Truncated,
    /// The integrand is continued past `x_max` as `f(x_max) e^{−κ(x−x_max)}`
    /// with `κ = (d − λ)/A` at `x_max`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenSettings {
    pub rule: XRule,
    pub tail: TailClosure,
    /// Step of the central differences in `y` used for `∇_y F`.
    pub fd_step: f64,
    /// Residual tolerance on `F(y, Λ) − 1/η`, relative to `max(1, 1/η)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            rule: XRule::ExpFitted,
            tail: TailClosure::Truncated,
            fd_step: 1e-4,
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

/// Coefficient data of one trait column, preprocessed so that
/// `f(x_i, λ) = r_i · exp(e_i + λ g_i)` with `r = b/A`, `e = −∫ d/A`, `g = ∫ 1/A`.
#[derive(Debug, Clone)]
pub struct ColumnProblem {
    pub y: f64,
    h: f64,
    ratio: Vec<f64>,
    inv_a: Vec<f64>,
    base: Vec<f64>,
    g: Vec<f64>,
    d_last: f64,
    a_last: f64,
    sterile: bool,
}

enum Eval {
    Finite { f: f64, df: f64 },
    Above,
}

/// A converged root of `F(y, λ) = 1/η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaRoot {
    pub lambda: f64,
    /// `∂λF` at the root.
    pub d_lambda_f: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl LambdaRoot {
    /// `∂ηΛ = −1/(η² ∂λF)`.
    pub fn d_eta_lambda(&self, eta: f64) -> f64 {
        -1.0 / (eta * eta * self.d_lambda_f)
    }
}

impl ColumnProblem {
    pub fn new(col: &Column) -> Self {
        let inv_a: Vec<f64> = col.a.iter().map(|a| 1.0 / a).collect();
        let d_over_a: Vec<f64> = col.d.iter().zip(&inv_a).map(|(d, ia)| d * ia).collect();
        let base = cumulative_trapezoid(&d_over_a, col.h)
            .into_iter()
            .map(|v| -v)
            .collect();
        let g = cumulative_trapezoid(&inv_a, col.h);
        let ratio = col.b.iter().zip(&inv_a).map(|(b, ia)| b * ia).collect();
        let n = col.len();
        Self {
            y: col.y,
            h: col.h,
            ratio,
            inv_a,
            base,
            g,
            d_last: col.d[n - 1],
            a_last: col.a[n - 1],
            sterile: col.is_sterile(),
        }
    }

    pub fn is_sterile(&self) -> bool {
        self.sterile
    }

    pub fn len(&self) -> usize {
        self.ratio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratio.is_empty()
    }

    /// Exponent `−G(x_i)` at every node.
    fn exponents(&self, lambda: f64) -> impl Iterator<Item = f64> + '_ {
        self.base.iter().zip(&self.g).map(move |(e, g)| e + lambda * g)
    }

    fn check_overflow(&self, lambda: f64) -> Result<()> {
        for (i, e) in self.exponents(lambda).enumerate() {
            if e > MAX_EXPONENT && self.ratio[i] != 0.0 {
                return Err(Error::Overflow {
                    x: i as f64 * self.h,
                    y: self.y,
                    lambda,
                    exponent: e,
                });
            }
        }
        Ok(())
    }

    /// `f(x_i, y, λ) = (b/A) e^{−G}` on the age grid.
    pub fn integrand(&self, lambda: f64) -> Result<Vec<f64>> {
        self.check_overflow(lambda)?;
        Ok(self
            .exponents(lambda)
            .zip(&self.ratio)
            .map(|(e, r)| r * e.exp())
            .collect())
    }

    /// Decay rate of the integrand past the last node, if the tail is integrable.
    fn tail_rate(&self, lambda: f64) -> Option<f64> {
        let kappa = (self.d_last - lambda) / self.a_last;
        (kappa > 0.0).then_some(kappa)
    }

    fn evaluate(&self, lambda: f64, s: &EigenSettings) -> Result<Eval> {
        if self.exponents(lambda)
            .zip(&self.ratio)
            .any(|(e, r)| e > MAX_EXPONENT && *r != 0.0)
        {
            return Ok(Eval::Above);
        }
        let f = self.integrand(lambda)?;
        let mut value = 0.0;
        let mut deriv = 0.0;
        for i in 0..f.len() - 1 {
            let (fa, fb, ga, gb) = (f[i], f[i + 1], self.g[i], self.g[i + 1]);
            match s.rule {
                XRule::ExpFitted if fa > 0.0 && fb > 0.0 => {
                    let r = (fb / fa).ln();
                    value += self.h * fa * phi1(r);
                    deriv += self.h * fa * (ga * phi1(r) + phi1_prime(r) * (gb - ga));
                }
                _ => {
                    value += 0.5 * self.h * (fa + fb);
                    deriv += 0.5 * self.h * (fa * ga + fb * gb);
                }
            }
        }
        if s.tail == TailClosure::Exponential {
            let last = f.len() - 1;
            match self.tail_rate(lambda) {
                Some(kappa) => {
                    let tail = f[last] / kappa;
                    value += tail;
                    deriv += tail * (self.g[last] + 1.0 / (self.a_last * kappa));
                }
                None if f[last] > 0.0 => return Ok(Eval::Above),
                None => {}
            }
        }
        Ok(Eval::Finite { f: value, df: deriv })
    }

    /// `F(y, λ)` and `∂λF(y, λ)`.
    pub fn capital_f_with_derivative(&self, lambda: f64, s: &EigenSettings) -> Result<(f64, f64)> {
        match self.evaluate(lambda, s)? {
            Eval::Finite { f, df } => Ok((f, df)),
            Eval::Above => {
                self.check_overflow(lambda)?;
                Err(Error::Domain(format!(
                    "tail of F diverges at y = {} for lambda = {lambda} >= d(x_max)",
                    self.y
                )))
            }
        }
    }

    pub fn capital_f(&self, lambda: f64, s: &EigenSettings) -> Result<f64> {
        self.capital_f_with_derivative(lambda, s).map(|(f, _)| f)
    }

    /// Solves `F(y, Λ) = 1/η` by safeguarded Newton from `λ = 0`.
    pub fn solve(&self, eta: f64, s: &EigenSettings) -> Result<LambdaRoot> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Domain(format!("eta must be positive, got {eta}")));
        }
        if self.sterile {
            return Err(Error::Sterile { y: self.y });
        }
        let target = 1.0 / eta;
        let tol = s.tol * target.max(1.0);
        let residual = |lambda: f64| -> Result<Option<(f64, f64)>> {
            Ok(match self.evaluate(lambda, s)? {
                Eval::Finite { f, df } => Some((f - target, df)),
                Eval::Above => None,
            })
        };

        let mut lambda = 0.0;
        let mut current = residual(lambda)?;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut step = 1.0;
        let mut doublings = 0;
        loop {
            match current {
                Some((r, df)) if r.abs() <= tol => {
                    return Ok(LambdaRoot { lambda, d_lambda_f: df, residual: r, iterations: 0 });
                }
                Some((r, _)) if r < 0.0 => lo = lambda,
                _ => hi = lambda,
            }
            if lo.is_finite() && hi.is_finite() {
                break;
            }
            doublings += 1;
            if doublings > 64 {
                return Err(Error::BracketExpansion { y: self.y, eta, lo, hi });
            }
            lambda = if lo.is_finite() { lo + step } else { hi - step };
            step *= 2.0;
            current = residual(lambda)?;
        }

        lambda = 0.5 * (lo + hi);
        for iteration in 1..=s.max_iter {
            match residual(lambda)? {
                Some((r, df)) => {
                    if r.abs() <= tol {
                        return Ok(LambdaRoot { lambda, d_lambda_f: df, residual: r, iterations: iteration });
                    }
                    if r < 0.0 {
                        lo = lambda;
                    } else {
                        hi = lambda;
                    }
                    let newton = lambda - r / df;
                    lambda = if df > 0.0 && newton > lo && newton < hi {
                        newton
                    } else {
                        0.5 * (lo + hi)
                    };
                }
                None => {
                    hi = lambda;
                    lambda = 0.5 * (lo + hi);
                }
            }
            if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1e-300) {
                if let Some((r, df)) = residual(lambda)? {
                    if r.abs() <= 1e3 * tol {
                        return Ok(LambdaRoot { lambda, d_lambda_f: df, residual: r, iterations: iteration });
                    }
                }
                break;
            }
        }
        Err(Error::Accuracy {
            y: self.y,
            message: format!("Newton iteration for eta = {eta} did not reach the tolerance in [{lo}, {hi}]"),
        })
    }

    /// `Q(x) = η (1/A) e^{−G}` with `G` evaluated at `Λ`, checked against `∫ b Q = 1`.
    pub fn eigenfunction(&self, root: &LambdaRoot, eta: f64, s: &EigenSettings) -> Result<Vec<f64>> {
        let q: Vec<f64> = self
            .exponents(root.lambda)
            .zip(&self.inv_a)
            .map(|(e, ia)| eta * ia * e.exp())
            .collect();
        let bq = eta * self.capital_f(root.lambda, s)?;
        if (bq - 1.0).abs() > 1e-6 {
            return Err(Error::Accuracy {
                y: self.y,
                message: format!("normalization of Q is off: int bQ = {bq}"),
            });
        }
        Ok(q)
    }

    /// Dual eigenfunction `Φ(x) = Φ(0) η e^{G(x)} ∫ₓ^∞ f`, with `Φ(0)` fixed by `∫ Q Φ = 1`.
    pub fn dual(&self, root: &LambdaRoot, q: &[f64], eta: f64, s: &EigenSettings) -> Result<Vec<f64>> {
        let n = self.len();
        let lambda = root.lambda;
        let exps: Vec<f64> = self.exponents(lambda).collect();
        let kappa = match s.tail {
            TailClosure::Exponential => Some(self.tail_rate(lambda).ok_or_else(|| Error::Accuracy {
                y: self.y,
                message: "tail closure needs lambda < d(x_max)".into(),
            })?),
            TailClosure::Truncated => None,
        };
        // s[i] = e^{G_i} ∫_{x_i}^∞ f, by a backward recursion that never forms e^{G} alone.
        let mut tail = vec![0.0; n];
        tail[n - 1] = kappa.map_or(0.0, |k| self.ratio[n - 1] / k);
        for i in (0..n - 1).rev() {
            let decay = (exps[i + 1] - exps[i]).exp();
            let next = self.ratio[i + 1] * decay;
            let cell = match s.rule {
                XRule::ExpFitted => exp_fitted_cell(self.ratio[i], next, self.h),
                XRule::Trapezoid => 0.5 * self.h * (self.ratio[i] + next),
            };
            tail[i] = cell + decay * tail[i + 1];
        }
        let mut phi: Vec<f64> = tail.iter().map(|t| eta * t).collect();
        let product: Vec<f64> = q.iter().zip(&phi).map(|(a, b)| a * b).collect();
        let mut norm = s.rule.integrate(&product, self.h);
        if let Some(k) = kappa {
            norm += product[n - 1] / k;
        }
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Accuracy {
                y: self.y,
                message: format!("cannot normalize dual: int Q Phi = {norm}"),
            });
        }
        for v in &mut phi {
            *v /= norm;
        }
        Ok(phi)
    }

    /// Sup-norm of the upwind residual `(A Q)_x + (d − Λ) Q` over interior nodes.
    pub fn transport_residual(&self, col: &Column, lambda: f64, q: &[f64]) -> f64 {
        (1..q.len())
            .map(|i| {
                let flux = (col.a[i] * q[i] - col.a[i - 1] * q[i - 1]) / self.h;
                (flux + (col.d[i] - lambda) * q[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Eigenelements at one trait node.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenNode {
    pub y: f64,
    pub lambda: f64,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub d_lambda_f: f64,
    pub d_eta_lambda: f64,
    pub grad_lambda: f64,
}

/// Eigenelements on a trait grid for a fixed `η`. Sterile nodes (`b ≡ 0`) are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenField {
    pub x: Axis,
    pub y: Axis,
    pub eta: f64,
    pub nodes: Vec<Option<EigenNode>>,
    pub warnings: Vec<String>,
}

impl EigenField {
    /// `Λ` per node, `NaN` where sterile.
    pub fn lambda(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.as_ref().map_or(f64::NAN, |n| n.lambda)).collect()
    }

    pub fn grad_lambda(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.as_ref().map_or(f64::NAN, |n| n.grad_lambda)).collect()
    }

    /// Node index of the smallest `Λ`.
    pub fn argmin_lambda(&self) -> Option<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(j, n)| n.as_ref().map(|n| (j, n.lambda)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
    }
}

/// Eigen computations for a coefficient model on a fixed age grid.
#[derive(Debug, Clone)]
pub struct EigenSolver {
    pub model: CoefficientModel,
    pub x: Axis,
    pub settings: EigenSettings,
}

impl EigenSolver {
    pub fn new(model: CoefficientModel, x: Axis, settings: EigenSettings) -> Self {
        Self { model, x, settings }
    }

    pub fn problem(&self, y: f64) -> Result<ColumnProblem> {
        Ok(ColumnProblem::new(&self.model.column(&self.x, y)?))
    }

    /// `f(x, y, λ)` on the age grid.
    pub fn fitness_integrand(&self, y: f64, lambda: f64) -> Result<Vec<f64>> {
        self.problem(y)?.integrand(lambda)
    }

    pub fn capital_f(&self, y: f64, lambda: f64) -> Result<f64> {
        self.problem(y)?.capital_f(lambda, &self.settings)
    }

    pub fn solve_lambda(&self, y: f64, eta: f64) -> Result<LambdaRoot> {
        self.problem(y)?.solve(eta, &self.settings)
    }

    pub fn eigenfunction_q(&self, y: f64, eta: f64) -> Result<Vec<f64>> {
        let p = self.problem(y)?;
        let root = p.solve(eta, &self.settings)?;
        p.eigenfunction(&root, eta, &self.settings)
    }

    pub fn dual_phi(&self, y: f64, eta: f64) -> Result<Vec<f64>> {
        let p = self.problem(y)?;
        let root = p.solve(eta, &self.settings)?;
        let q = p.eigenfunction(&root, eta, &self.settings)?;
        p.dual(&root, &q, eta, &self.settings)
    }

    /// `∇yΛ = −∇yF/∂λF` with `∇yF` by finite differences at fixed `λ = Λ`, and
    /// `∂ηΛ`. `side` selects the difference: 0 central, +1 forward, −1 backward.
    pub fn gradient_at(&self, y: f64, root: &LambdaRoot, eta: f64, side: i8) -> Result<(f64, f64)> {
        let h = self.settings.fd_step;
        let f_at = |yy: f64| self.problem(yy)?.capital_f(root.lambda, &self.settings);
        let grad_f = match side {
            0 => (f_at(y + h)? - f_at(y - h)?) / (2.0 * h),
            s if s > 0 => (f_at(y + h)? - f_at(y)?) / h,
            _ => (f_at(y)? - f_at(y - h)?) / h,
        };
        Ok((-grad_f / root.d_lambda_f, root.d_eta_lambda(eta)))
    }

    /// Gradient at `y` using a central difference; see [`Self::gradient_at`].
    pub fn grad_lambda(&self, y: f64, eta: f64) -> Result<(f64, f64)> {
        let root = self.solve_lambda(y, eta)?;
        self.gradient_at(y, &root, eta, 0)
    }

    fn node(&self, y_axis: &Axis, j: usize, eta: f64) -> Result<Option<(EigenNode, Vec<String>)>> {
        let y = y_axis.node(j);
        let p = self.problem(y)?;
        if p.is_sterile() {
            return Ok(None);
        }
        let s = &self.settings;
        let root = p.solve(eta, s)?;
        let q = p.eigenfunction(&root, eta, s)?;
        let phi = p.dual(&root, &q, eta, s)?;
        let mut warnings = Vec::new();
        let side = if j == 0 {
            warnings.push(format!("grad_lambda at y = {y}: one-sided difference at the domain boundary"));
            1
        } else if j == y_axis.cells {
            warnings.push(format!("grad_lambda at y = {y}: one-sided difference at the domain boundary"));
            -1
        } else {
            0
        };
        let (grad, d_eta) = self.gradient_at(y, &root, eta, side)?;
        Ok(Some((
            EigenNode {
                y,
                lambda: root.lambda,
                q,
                phi,
                d_lambda_f: root.d_lambda_f,
                d_eta_lambda: d_eta,
                grad_lambda: grad,
            },
            warnings,
        )))
    }

    /// Eigenelements at every trait node, computed in parallel.
    pub fn field(&self, y_axis: &Axis, eta: f64) -> Result<EigenField> {
        let results: Vec<Result<Option<(EigenNode, Vec<String>)>>> = (0..y_axis.len())
            .into_par_iter()
            .map(|j| {
                self.node(y_axis, j, eta)
                    .map_err(|e| e.context(format!("eigen at trait node j = {j} (y = {})", y_axis.node(j))))
            })
            .collect();
        let mut nodes = Vec::with_capacity(results.len());
        let mut warnings = Vec::new();
        let mut weak_decay = 0;
        for r in results {
            match r? {
                Some((node, w)) => {
                    let (first, last) = (node.q[0], node.q[node.q.len() - 1]);
                    if last >= 1e-6 * first {
                        weak_decay += 1;
                    }
                    warnings.extend(w);
                    nodes.push(Some(node));
                }
                None => nodes.push(None),
            }
        }
        let sterile = nodes.iter().filter(|n| n.is_none()).count();
        if sterile > 0 {
            warnings.push(format!("{sterile} sterile trait node(s) skipped (b = 0 along the age axis)"));
        }
        if weak_decay > 0 {
            warnings.push(format!(
                "Q(x_max)/Q(0) >= 1e-6 at {weak_decay} trait node(s); x_max may be too small for accurate eigenelements"
            ));
        }
        Ok(EigenField { x: self.x, y: *y_axis, eta, nodes, warnings })
    }
}

/// `η(p) = ∫ M(z) e^{p z} dz`.
pub fn eta_of_p(kernel: &MutationKernel, p: f64) -> Result<f64> {
    kernel.eta(p)
}

/// Effective Hamiltonian `H(y, p) = −Λ(y, η(p))`.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub solver: EigenSolver,
    pub kernel: MutationKernel,
}

impl Hamiltonian {
    pub fn new(solver: EigenSolver, kernel: MutationKernel) -> Self {
        Self { solver, kernel }
    }

    pub fn p_max(&self) -> f64 {
        self.kernel.p_max()
    }

    pub fn eval(&self, y: f64, p: f64) -> Result<f64> {
        let eta = eta_of_p(&self.kernel, p)?;
        Ok(-self.solver.solve_lambda(y, eta)?.lambda)
    }

    /// Evaluates `H(y, ·)` at several momenta reusing one column.
    pub fn eval_many(&self, y: f64, ps: &[f64]) -> Result<Vec<f64>> {
        let problem = self.solver.problem(y)?;
        ps.iter()
            .map(|&p| {
                let eta = eta_of_p(&self.kernel, p)?;
                Ok(-problem.solve(eta, &self.solver.settings)?.lambda)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
