//! The ε → 0 limit of the selection model in a one-dimensional trait space.
//!
//! In the limit the potential has the closed form `u(t, y) = u⁰(y) − tΛ(y) − ∫₀ᵗρ`
//! under the constraint `sup_y u(t, ·) = 0`, so that `∫₀ᵗρ = sup_y [u⁰ − tΛ]`.
//! The population concentrates on the maximum point `ȳ(t)` of `u(t, ·)`, which
//! follows the canonical equation `ẏ = (∂²_y u)⁻¹ ∂_yΛ` while `u(t, ·)` stays
//! strictly concave there.

use rayon::prelude::*;

use crate::decomposition::{rho_integral, TimeRule};
use crate::eigen::EigenSolver;
use crate::model::{Axis, CoefficientExpr};
use crate::{Error, Result};

/// Difference step of `ρ(t) = dS/dt`.
pub const RHO_STEP: f64 = 1e-4;

/// Relative tolerance under which two grid values tie for the maximum.
pub const TIE_TOL: f64 = 1e-12;

/// The two functions of the trait the limit problem is built from.
pub trait Landscape: Sync {
    fn u0(&self, y: f64) -> Result<f64>;

    /// `Λ(y)`; `+∞` at a trait with no renewal.
    fn lambda(&self, y: f64) -> Result<f64>;

    /// `∂_yΛ(y)`, `NaN` where it is undefined.
    fn grad_lambda(&self, y: f64) -> Result<f64>;
}

/// `u⁰ = −k(y − y₀)²/2` and `Λ = Λ₀ + a(y − y*)²/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticLandscape {
    pub k: f64,
    pub y0: f64,
    pub lambda0: f64,
    pub a: f64,
    pub y_star: f64,
}

impl QuadraticLandscape {
    /// Unit-curvature `u⁰`.
    pub fn new(y0: f64, lambda0: f64, a: f64, y_star: f64) -> Self {
        Self { k: 1.0, y0, lambda0, a, y_star }
    }

    /// Closed-form solution of the canonical equation for `k = 1`.
    pub fn ybar(&self, t: f64) -> f64 {
        (self.k * self.y0 + t * self.a * self.y_star) / (self.k + t * self.a)
    }

    /// Closed-form `ρ(t)` for `k = 1`.
    pub fn rho(&self, t: f64) -> f64 {
        let d = self.y0 - self.y_star;
        -self.lambda0 - self.a * d * d / (2.0 * (1.0 + t * self.a) * (1.0 + t * self.a))
    }

    /// Closed-form `u(t, y)` for `k = 1`.
    pub fn u(&self, t: f64, y: f64) -> f64 {
        let d = self.y0 - self.y_star;
        let integral = -self.lambda0 * t - self.a * d * d * t / (2.0 * (1.0 + t * self.a));
        -(y - self.y0).powi(2) / 2.0 - t * (self.lambda0 + self.a * (y - self.y_star).powi(2) / 2.0) - integral
    }
}

impl Landscape for QuadraticLandscape {
    fn u0(&self, y: f64) -> Result<f64> {
        Ok(-self.k * (y - self.y0).powi(2) / 2.0)
    }

    fn lambda(&self, y: f64) -> Result<f64> {
        Ok(self.lambda0 + self.a * (y - self.y_star).powi(2) / 2.0)
    }

    fn grad_lambda(&self, y: f64) -> Result<f64> {
        Ok(self.a * (y - self.y_star))
    }
}

/// `Λ(y) = Λ(y, η)` from the age eigenproblem and `u⁰` from an expression in `y`.
#[derive(Debug, Clone)]
pub struct EigenLandscape {
    pub solver: EigenSolver,
    pub u0: CoefficientExpr,
    pub eta: f64,
}

impl EigenLandscape {
    pub fn new(solver: EigenSolver, u0: CoefficientExpr) -> Self {
        Self { solver, u0, eta: 1.0 }
    }
}

impl Landscape for EigenLandscape {
    fn u0(&self, y: f64) -> Result<f64> {
        let v = self.u0.eval(0.0, y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { what: "u0".into(), x: 0.0, y })
        }
    }

    fn lambda(&self, y: f64) -> Result<f64> {
        let p = self.solver.problem(y)?;
        if p.is_sterile() {
            return Ok(f64::INFINITY);
        }
        Ok(p.solve(self.eta, &self.solver.settings)?.lambda)
    }

    fn grad_lambda(&self, y: f64) -> Result<f64> {
        let h = self.solver.settings.fd_step;
        for yy in [y - h, y, y + h] {
            if self.solver.problem(yy)?.is_sterile() {
                return Ok(f64::NAN);
            }
        }
        Ok(self.solver.grad_lambda(y, self.eta)?.0)
    }
}

/// Maximum of a grid function refined by a parabola through the top node and its neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMax {
    pub node: usize,
    pub y: f64,
    pub value: f64,
    /// One node per separated group of tying nodes, in increasing `y`.
    pub maximizers: Vec<usize>,
}

impl GridMax {
    pub fn is_polymorphic(&self) -> bool {
        self.maximizers.len() > 1
    }
}

/// Refined maximum of `g` on `axis`; `None` when no value is finite.
pub fn grid_max(axis: &Axis, g: &[f64]) -> Option<GridMax> {
    let top = g.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let tol = TIE_TOL * top.abs().max(1.0);
    let mut maximizers: Vec<usize> = Vec::new();
    let mut previous_tied = false;
    for (j, v) in g.iter().enumerate() {
        let tied = v.is_finite() && *v >= top - tol;
        if tied && !previous_tied {
            maximizers.push(j);
        }
        previous_tied = tied;
    }
    let node = maximizers[0];
    let (mut y, mut value) = (axis.node(node), g[node]);
    if node > 0 && node + 1 < g.len() {
        let (l, c, r) = (g[node - 1], g[node], g[node + 1]);
        let curvature = l - 2.0 * c + r;
        if l.is_finite() && r.is_finite() && curvature < 0.0 {
            let delta = (0.5 * (l - r) / curvature).clamp(-1.0, 1.0);
            y += delta * axis.step();
            value = c - 0.25 * (l - r) * delta;
        }
    }
    Some(GridMax { node, y, value, maximizers })
}

/// `ρ(t)` from the sup formula, with the maximizer it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SupRho {
    pub t: f64,
    pub rho: f64,
    /// `S(t) = sup_y [u⁰ − tΛ] = ∫₀ᵗρ + S(0)`.
    pub s: f64,
    pub argmax: GridMax,
    pub warnings: Vec<String>,
}

/// Location of the concentration point and how well it satisfies the limit identities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationPoint {
    pub t: f64,
    pub ybar: f64,
    pub argmax: GridMax,
    /// `|∂_y u⁰(ȳ) − t ∂_yΛ(ȳ)|`.
    pub gradient_residual: f64,
    /// `|u⁰(ȳ) − (∫₀ᵗρ − tρ(t))|`.
    pub value_residual: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalKind {
    Minimum,
    Maximum,
    /// Vanishing second difference.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub y: f64,
    pub kind: CriticalKind,
    pub second_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalReport {
    pub points: Vec<CriticalPoint>,
    /// `∂_yΛ` vanishes on the whole grid.
    pub degenerate: bool,
}

impl CriticalReport {
    pub fn minima(&self) -> impl Iterator<Item = &CriticalPoint> {
        self.points.iter().filter(|p| p.kind == CriticalKind::Minimum)
    }
}

/// Outcome of a nondecrease check on a time series.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub ok: bool,
    /// `(t, drop)` at the first decrease beyond tolerance.
    pub first_violation: Option<(f64, f64)>,
    pub largest_drop: f64,
}

/// Checks that `ρ` does not decrease by more than `1e-8` between samples.
pub fn rho_monotonicity_check(series: &[(f64, f64)]) -> MonotonicityReport {
    let mut first_violation = None;
    let mut largest_drop: f64 = 0.0;
    for w in series.windows(2) {
        let drop = w[0].1 - w[1].1;
        largest_drop = largest_drop.max(drop);
        if drop > 1e-8 && first_violation.is_none() {
            first_violation = Some((w[1].0, drop));
        }
    }
    MonotonicityReport { ok: first_violation.is_none(), first_violation, largest_drop }
}

/// Limit trajectory sampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LimitState {
    /// `(t, ρ(t))` from the sup formula.
    pub rho: Vec<(f64, f64)>,
    pub ybar: Vec<(f64, f64)>,
    /// `(t, Λ(ȳ(t)))`.
    pub lambda: Vec<(f64, f64)>,
    /// `(t, max_j u(t, y_j))` with `u` from the sampled `ρ`.
    pub max_u: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
    /// Why integration ended before the final time, if it did.
    pub stopped: Option<Error>,
}

impl LimitState {
    /// `max_j u(t, y_j) ≤ tol` at every sample. The trapezoid rule for `∫ρ`
    /// makes `tol` of order `dt²` appropriate.
    pub fn sup_constraint_holds(&self, tol: f64) -> bool {
        self.max_u.iter().all(|(_, m)| *m <= tol)
    }

    /// `Λ(ȳ(t))` nonincreasing within `1e-8`.
    pub fn lambda_nonincreasing(&self) -> bool {
        self.lambda.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-8)
    }
}

/// A landscape tabulated on a trait grid.
#[derive(Debug, Clone)]
pub struct LimitProblem<L> {
    pub landscape: L,
    pub y: Axis,
    pub u0: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl<L: Landscape> LimitProblem<L> {
    pub fn new(landscape: L, y: Axis) -> Result<Self> {
        let table: Vec<(f64, f64)> = (0..y.len())
            .into_par_iter()
            .map(|j| {
                let yj = y.node(j);
                let at = |e: Error| e.context(format!("limit landscape at j = {j} (y = {yj})"));
                Ok((landscape.u0(yj).map_err(at)?, landscape.lambda(yj).map_err(at)?))
            })
            .collect::<Result<_>>()?;
        let (u0, lambda) = table.into_iter().unzip();
        Ok(Self { landscape, y, u0, lambda })
    }

    /// Grid maximum of `u⁰ − tΛ` refined by golden-section search on the
    /// landscape over the neighbouring cells.
    fn s_max(&self, t: f64) -> Result<Option<GridMax>> {
        let g: Vec<f64> = self.u0.iter().zip(&self.lambda).map(|(u, l)| u - t * l).collect();
        let Some(mut m) = grid_max(&self.y, &g) else { return Ok(None) };
        let j = m.node;
        let finite = |k: usize| g[k].is_finite();
        let lo = if j > 0 && finite(j - 1) { self.y.node(j - 1) } else { self.y.node(j) };
        let hi = if j + 1 < g.len() && finite(j + 1) { self.y.node(j + 1) } else { self.y.node(j) };
        let l = &self.landscape;
        let f = |y: f64| -> Result<f64> { Ok(l.u0(y)? - t * l.lambda(y)?) };
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let (mut c, mut d) = (b - ratio * (b - a), a + ratio * (b - a));
        let (mut fc, mut fd) = (f(c)?, f(d)?);
        while b - a > 1e-9 * self.y.step() {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = f(d)?;
            }
        }
        let (y, v) = if fc >= fd { (c, fc) } else { (d, fd) };
        (m.y, m.value) = if v >= g[j] { (y, v) } else { (self.y.node(j), g[j]) };
        Ok(Some(m))
    }

    /// `S(t) = sup_y [u⁰ − tΛ]` and `ρ(t) = S′(t)` by a central difference,
    /// forward at `t < h`.
    pub fn rho_from_sup(&self, t: f64) -> Result<SupRho> {
        let none = || Error::Domain(format!("u0 - t*Lambda has no finite value at t = {t}"));
        let argmax = self.s_max(t)?.ok_or_else(none)?;
        let h = RHO_STEP;
        let rho = if t < h {
            (self.s_max(t + h)?.ok_or_else(none)?.value - argmax.value) / h
        } else {
            (self.s_max(t + h)?.ok_or_else(none)?.value - self.s_max(t - h)?.ok_or_else(none)?.value) / (2.0 * h)
        };
        let mut warnings = Vec::new();
        if argmax.node == 0 || argmax.node + 1 == self.y.len() {
            warnings.push(format!(
                "sup of u0 - t*Lambda at t = {t} is attained at the trait boundary y = {}; the domain may be too small",
                self.y.node(argmax.node)
            ));
        }
        if argmax.is_polymorphic() {
            warnings.push(polymorphism_warning(t, &self.y, &argmax));
        }
        Ok(SupRho { t, rho, s: argmax.value, argmax, warnings })
    }

    /// `u(t, y) = u⁰(y) − tΛ(y) − ∫₀ᵗρ` with the trapezoid rule over `rho_series`.
    pub fn limit_u(&self, t: f64, y: f64, rho_series: &[(f64, f64)]) -> Result<f64> {
        let integral = rho_integral(rho_series, t, TimeRule::Trapezoid)?;
        Ok(self.landscape.u0(y)? - t * self.landscape.lambda(y)? - integral)
    }

    /// `u(t, ·)` on the trait grid.
    pub fn u_grid(&self, t: f64, rho_series: &[(f64, f64)]) -> Result<Vec<f64>> {
        let integral = rho_integral(rho_series, t, TimeRule::Trapezoid)?;
        Ok(self.u0.iter().zip(&self.lambda).map(|(u, l)| u - t * l - integral).collect())
    }

    /// `∂²_y u(t, y) = ∂²u⁰ − t∂²Λ` by central differences with step `Δy`.
    pub fn hessian_u(&self, t: f64, y: f64) -> Result<f64> {
        let h = self.y.step();
        let l = &self.landscape;
        let g = |yy: f64| -> Result<f64> { Ok(l.u0(yy)? - t * l.lambda(yy)?) };
        Ok((g(y + h)? - 2.0 * g(y)? + g(y - h)?) / (h * h))
    }

    /// Right-hand side of the canonical equation.
    pub fn canonical_rhs(&self, t: f64, y: f64) -> Result<f64> {
        let hess = self.hessian_u(t, y)?;
        if hess.is_nan() || hess >= 0.0 {
            return Err(Error::ConcavityLoss { t, y, hessian: hess });
        }
        let grad = self.landscape.grad_lambda(y)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite { what: "grad Lambda".into(), x: 0.0, y });
        }
        Ok(grad / hess)
    }

    /// One classical fourth-order Runge-Kutta step of the canonical equation.
    pub fn canonical_step(&self, ybar: f64, t: f64, dt: f64) -> Result<f64> {
        let k1 = self.canonical_rhs(t, ybar)?;
        let k2 = self.canonical_rhs(t + 0.5 * dt, ybar + 0.5 * dt * k1)?;
        let k3 = self.canonical_rhs(t + 0.5 * dt, ybar + 0.5 * dt * k2)?;
        let k4 = self.canonical_rhs(t + dt, ybar + dt * k3)?;
        Ok(ybar + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    }

    /// Maximum point of `u(t, ·)` given on the grid, with the residuals of
    /// `∂_y u⁰(ȳ) = t∂_yΛ(ȳ)` and `u⁰(ȳ) = ∫₀ᵗρ − tρ(t)`.
    pub fn concentration_point(&self, t: f64, u_grid: &[f64], rho_integral: f64, rho: f64) -> Result<ConcentrationPoint> {
        let argmax = grid_max(&self.y, u_grid)
            .ok_or_else(|| Error::Domain(format!("u has no finite value on the trait grid at t = {t}")))?;
        let ybar = argmax.y;
        let h = self.y.step();
        let l = &self.landscape;
        let grad_u0 = (l.u0(ybar + h)? - l.u0(ybar - h)?) / (2.0 * h);
        let grad_lambda = if t == 0.0 { 0.0 } else { l.grad_lambda(ybar)? };
        let mut warnings = Vec::new();
        if argmax.is_polymorphic() {
            warnings.push(polymorphism_warning(t, &self.y, &argmax));
        }
        Ok(ConcentrationPoint {
            t,
            ybar,
            gradient_residual: (grad_u0 - t * grad_lambda).abs(),
            value_residual: (l.u0(ybar)? - (rho_integral - t * rho)).abs(),
            argmax,
            warnings,
        })
    }

    /// Zeros of `∂_yΛ`: sign changes of `grad` on the grid refined by bisection
    /// on the landscape gradient, classified by the second difference of `Λ`.
    pub fn critical_points(&self, grad: &[f64]) -> Result<CriticalReport> {
        let scale = grad.iter().filter(|g| g.is_finite()).fold(0.0_f64, |m, g| m.max(g.abs()));
        let floor = 1e-12 * scale.max(1e-300);
        let degenerate = grad.iter().filter(|g| g.is_finite()).all(|g| g.abs() <= 1e-12);
        let mut points = Vec::new();
        if degenerate {
            return Ok(CriticalReport { points, degenerate });
        }
        let h = self.y.step();
        for j in 0..grad.len().saturating_sub(1) {
            let (g0, g1) = (grad[j], grad[j + 1]);
            if !(g0.is_finite() && g1.is_finite()) {
                continue;
            }
            let y = if g0.abs() <= floor {
                self.y.node(j)
            } else if g0 * g1 < 0.0 && g1.abs() > floor {
                self.bisect(self.y.node(j), self.y.node(j + 1), g0)?
            } else {
                continue;
            };
            let l = &self.landscape;
            let second = l.lambda(y + h)? - 2.0 * l.lambda(y)? + l.lambda(y - h)?;
            let kind = if second > 0.0 {
                CriticalKind::Minimum
            } else if second < 0.0 {
                CriticalKind::Maximum
            } else {
                CriticalKind::Flat
            };
            points.push(CriticalPoint { y, kind, second_difference: second / (h * h) });
        }
        Ok(CriticalReport { points, degenerate })
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, g_lo: f64) -> Result<f64> {
        let sign = g_lo.signum();
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            let g = self.landscape.grad_lambda(mid)?;
            if g == 0.0 {
                return Ok(mid);
            }
            if g.signum() == sign {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Integrates the canonical equation from `argmax u⁰` to `t_final` with step
    /// `dt`, sampling `ρ`, `ȳ`, `Λ(ȳ)` and `max u` at every step. A loss of
    /// concavity ends the trajectory and is reported in `stopped`.
    pub fn trajectory(&self, t_final: f64, dt: f64) -> Result<LimitState> {
        if !(dt > 0.0) || !(t_final >= 0.0) {
            return Err(Error::Domain(format!("trajectory needs dt > 0 and t_final >= 0, got {dt} and {t_final}")));
        }
        let steps = (t_final / dt).round() as usize;
        let start = self.rho_from_sup(0.0)?;
        let mut state = LimitState::default();
        state.warnings.extend(start.warnings.iter().cloned());
        let mut ybar = start.argmax.y;
        let s0 = start.s;
        for k in 0..=steps {
            let t = k as f64 * dt;
            let sup = if k == 0 { start.clone() } else { self.rho_from_sup(t)? };
            if k > 0 {
                for w in &sup.warnings {
                    if !state.warnings.contains(w) {
                        state.warnings.push(w.clone());
                    }
                }
            }
            state.rho.push((t, sup.rho));
            state.ybar.push((t, ybar));
            state.lambda.push((t, self.landscape.lambda(ybar)?));
            let u = self.u_grid(t, &state.rho)?;
            let top = u.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
            state.max_u.push((t, top - s0));
            if k == steps {
                break;
            }
            match self.canonical_step(ybar, t, dt) {
                Ok(next) => ybar = next,
                Err(e) => {
                    state.stopped = Some(e.context(format!("canonical equation at t = {t}")));
                    break;
                }
            }
        }
        Ok(state)
    }
}

fn polymorphism_warning(t: f64, axis: &Axis, m: &GridMax) -> String {
    let ys: Vec<String> = m.maximizers.iter().map(|&j| format!("{}", axis.node(j))).collect();
    format!("maximum at t = {t} is not unique (polymorphism): maximizers at y = {}", ys.join(", "))
}
