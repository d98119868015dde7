//! The approximate Hamilton-Jacobi equation of the mutation model.
//!
//! With `η_ε(t, y) = ∫ M(z) e^{(U(y+εz) − U(y))/ε} dz` the potential solves
//! `∂ₜU = −Λ(y, η_ε)`. The solver integrates the truncated system
//! `∂ₜU = φ_R(−Λ(y, η_ε))` on the trait grid and certifies afterwards that the
//! truncation never acted, doubling `R` when it did.

use std::collections::HashMap;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{ColumnProblem, EigenSettings, EigenSolver, LambdaRoot};
use crate::model::{Axis, CoefficientModel, MutationKernel};
use crate::{Error, Result};

/// Largest exponent accepted in `η_ε`.
pub const MAX_EXPONENT: f64 = 700.0;

/// Smooth nondecreasing clamp: identity on `[−R/2, R/2]`, constant `±R`
/// beyond `±2R`, and the cubic Hermite blend from `(R/2, R)` with slope 1 to
/// `(2R, R)` with slope 0 in between. Its derivative is `(1 − s)²` on the blend.
pub fn phi_r(r: f64, big_r: f64) -> f64 {
    let a = r.abs();
    let v = if a <= 0.5 * big_r {
        a
    } else if a >= 2.0 * big_r {
        big_r
    } else {
        let len = 1.5 * big_r;
        let s = (a - 0.5 * big_r) / len;
        let (h00, h10, h01) = (
            2.0 * s * s * s - 3.0 * s * s + 1.0,
            s * s * s - 2.0 * s * s + s,
            -2.0 * s * s * s + 3.0 * s * s,
        );
        h00 * 0.5 * big_r + h10 * len + h01 * big_r
    };
    v.copysign(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbSettings {
    /// Time step; `min(1e-3, ε/10)` when unset.
    pub dt: Option<f64>,
    /// Initial truncation radius.
    pub r: f64,
    pub max_doublings: usize,
    /// Bucket width of `η` in the `Λ` cache.
    pub cache_resolution: f64,
    /// Keep every n-th time level in the run record.
    pub record_every: usize,
}

impl Default for HjbSettings {
    fn default() -> Self {
        Self { dt: None, r: 4.0, max_doublings: 5, cache_resolution: 1e-6, record_every: 1 }
    }
}

impl HjbSettings {
    pub fn time_step(&self, eps: f64) -> f64 {
        self.dt.unwrap_or_else(|| (1e-3f64).min(eps / 10.0))
    }
}

/// One time level of the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct HjState {
    pub t: f64,
    pub u: Vec<f64>,
    /// `φ_R(−Λ(y, η))`.
    pub dudt: Vec<f64>,
    pub eta: Vec<f64>,
    /// `−Λ(y, η)` before truncation.
    pub rate: Vec<f64>,
    pub r: f64,
}

/// A run of [`HjbProblem::solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct HjRun {
    pub eps: f64,
    pub dt: f64,
    pub r: f64,
    pub doublings: usize,
    pub records: Vec<HjState>,
    pub final_state: HjState,
    /// `sup_y |∂ₜU(0, ·)|`.
    pub sup_dudt0: f64,
    /// `max_t sup_y |∂ₜU(t, ·)|` over every step.
    pub max_sup_dudt: f64,
    /// Largest excess of `sup_y ∂ₜU(t)` over `sup_y ∂ₜU(0)`, and of `inf_y ∂ₜU(0)` over `inf_y ∂ₜU(t)`.
    pub contraction_excess: f64,
    /// Bracket `[η_lo(y), η_hi(y)]` from `|Λ(y, η)| ≤ sup|∂ₜU(0)|`.
    pub eta_lo: Vec<f64>,
    pub eta_hi: Vec<f64>,
    /// Number of `(t, y)` samples with `η` outside the bracket.
    pub eta_violations: usize,
    pub steps: usize,
}

impl HjRun {
    /// `sup_y |∂ₜU(t)| ≤ sup_y |∂ₜU(0)| + 1e-8` at every step.
    pub fn a_priori_bound_holds(&self) -> bool {
        self.max_sup_dudt <= self.sup_dudt0 + 1e-8
    }

    pub fn contraction_holds(&self) -> bool {
        self.contraction_excess <= 1e-8
    }
}

/// Per-node memo of `Λ(y_j, η)` with `η` bucketed; values are corrected to
/// first order from the bucket centre.
#[derive(Debug, Default)]
struct LambdaCache {
    map: RwLock<HashMap<(usize, i64), (f64, f64)>>,
}

/// The approximate HJ problem on a trait grid.
#[derive(Debug)]
pub struct HjbProblem {
    pub y: Axis,
    pub kernel: MutationKernel,
    pub eps: f64,
    /// Lipschitz bound of the extension beyond the trait domain.
    pub k0: f64,
    pub settings: HjbSettings,
    pub eigen: EigenSettings,
    problems: Vec<ColumnProblem>,
    cache: LambdaCache,
}

impl HjbProblem {
    pub fn new(
        model: &CoefficientModel,
        x: Axis,
        y: Axis,
        kernel: MutationKernel,
        eps: f64,
        k0: f64,
        settings: HjbSettings,
        eigen: EigenSettings,
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("eps must be positive, got {eps}")));
        }
        if !(settings.r > 0.0) {
            return Err(Error::Domain(format!("truncation radius must be positive, got {}", settings.r)));
        }
        let problems = (0..y.len())
            .map(|j| {
                let col = model.column(&x, y.node(j))?;
                if col.is_sterile() {
                    return Err(Error::Sterile { y: col.y }.context(format!("hjb trait node j = {j}")));
                }
                Ok(ColumnProblem::new(&col))
            })
            .collect::<Result<_>>()?;
        Ok(Self { y, kernel, eps, k0, settings, eigen, problems, cache: LambdaCache::default() })
    }

    /// An eigen solver for the same model and age grid.
    pub fn with_solver(solver: &EigenSolver, y: Axis, kernel: MutationKernel, eps: f64, k0: f64, settings: HjbSettings) -> Result<Self> {
        Self::new(&solver.model, solver.x, y, kernel, eps, k0, settings, solver.settings)
    }

    /// Copy of the problem for another ε, sharing nothing mutable.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("eps must be positive, got {eps}")));
        }
        Ok(Self {
            y: self.y,
            kernel: self.kernel.clone(),
            eps,
            k0: self.k0,
            settings: self.settings,
            eigen: self.eigen,
            problems: self.problems.clone(),
            cache: LambdaCache::default(),
        })
    }

    /// `U` at `y` by linear interpolation, continued past the domain with the
    /// edge slope clamped to `[−k0, k0]`.
    pub fn extend(&self, u: &[f64], y: f64) -> f64 {
        let (h, n) = (self.y.step(), u.len());
        if y < self.y.min {
            let slope = ((u[1] - u[0]) / h).clamp(-self.k0, self.k0);
            return u[0] - slope * (self.y.min - y);
        }
        if y > self.y.max {
            let slope = ((u[n - 1] - u[n - 2]) / h).clamp(-self.k0, self.k0);
            return u[n - 1] + slope * (y - self.y.max);
        }
        let s = (y - self.y.min) / h;
        let i = (s.floor() as usize).min(n - 2);
        let w = s - i as f64;
        if w == 0.0 {
            u[i]
        } else {
            (1.0 - w) * u[i] + w * u[i + 1]
        }
    }

    /// `η_ε(y_j) = Σ_q w_q exp((U(y_j + εz_q) − U(y_j))/ε)`.
    pub fn eta_eps(&self, u: &[f64], j: usize) -> Result<f64> {
        let y = self.y.node(j);
        let mut acc = 0.0;
        for (&z, &w) in self.kernel.nodes().iter().zip(self.kernel.weights()) {
            let e = if z == 0.0 { 0.0 } else { (self.extend(u, y + self.eps * z) - u[j]) / self.eps };
            if e > MAX_EXPONENT || e.is_nan() {
                return Err(Error::EtaOverflow { y, z, exponent: e });
            }
            acc += w * e.exp();
        }
        Ok(acc)
    }

    fn root(&self, j: usize, eta: f64) -> Result<LambdaRoot> {
        self.problems[j]
            .solve(eta, &self.eigen)
            .map_err(|e| e.context(format!("solve_lambda at trait node j = {j} (y = {}, eta = {eta})", self.y.node(j))))
    }

    /// `Λ(y_j, η)`, memoized.
    pub fn lambda(&self, j: usize, eta: f64) -> Result<f64> {
        let res = self.settings.cache_resolution;
        let bucket = (eta / res).round();
        let centre = bucket * res;
        if !(centre > 0.0) || bucket.abs() > i64::MAX as f64 / 2.0 {
            return Ok(self.root(j, eta)?.lambda);
        }
        let key = (j, bucket as i64);
        let hit = self.cache.map.read().expect("lambda cache").get(&key).copied();
        let (lambda, slope) = match hit {
            Some(v) => v,
            None => {
                let root = self.root(j, centre)?;
                let v = (root.lambda, root.d_eta_lambda(centre));
                self.cache.map.write().expect("lambda cache").insert(key, v);
                v
            }
        };
        Ok(if eta == centre { lambda } else { lambda + slope * (eta - centre) })
    }

    /// `(η, −Λ(y, η))` on the whole grid.
    pub fn rates(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let pairs: Vec<(f64, f64)> = (0..u.len())
            .into_par_iter()
            .map(|j| {
                let eta = self.eta_eps(u, j).map_err(|e| e.context(format!("eta_eps at trait node j = {j}")))?;
                Ok((eta, -self.lambda(j, eta)?))
            })
            .collect::<Result<_>>()?;
        Ok(pairs.into_iter().unzip())
    }

    /// The state at `(t, U)` with its derivative, `η` and rates.
    pub fn state(&self, t: f64, u: Vec<f64>, r: f64) -> Result<HjState> {
        let (eta, rate) = self.rates(&u)?;
        let dudt = rate.iter().map(|v| phi_r(*v, r)).collect();
        Ok(HjState { t, u, dudt, eta, rate, r })
    }

    fn derivative(&self, u: &[f64], r: f64) -> Result<Vec<f64>> {
        let (_, rate) = self.rates(u)?;
        Ok(rate.iter().map(|v| phi_r(*v, r)).collect())
    }

    /// One RK4 step of `∂ₜU = φ_R(−Λ(y, η_ε))`.
    pub fn step_truncated(&self, state: &HjState, dt: f64) -> Result<HjState> {
        let r = state.r;
        let add = |k: &[f64], c: f64| -> Vec<f64> { state.u.iter().zip(k).map(|(u, k)| u + c * k).collect() };
        let k1 = &state.dudt;
        let k2 = self.derivative(&add(k1, 0.5 * dt), r)?;
        let k3 = self.derivative(&add(&k2, 0.5 * dt), r)?;
        let k4 = self.derivative(&add(&k3, dt), r)?;
        let u: Vec<f64> = (0..state.u.len())
            .map(|j| state.u[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect();
        self.state(state.t + dt, u, r)
    }

    /// `[η_lo(y), η_hi(y)]` with `Λ(y, η_lo) = L` and `Λ(y, η_hi) = −L`,
    /// from `η = 1/F(y, λ)`.
    pub fn eta_bracket(&self, l: f64) -> (Vec<f64>, Vec<f64>) {
        let eta_at = |j: usize, lambda: f64| match self.problems[j].capital_f(lambda, &self.eigen) {
            Ok(f) if f > 0.0 => 1.0 / f,
            Ok(_) => f64::INFINITY,
            Err(_) if lambda > 0.0 => 0.0,
            Err(_) => f64::INFINITY,
        };
        (0..self.problems.len())
            .map(|j| (eta_at(j, l), eta_at(j, -l)))
            .unzip()
    }

    fn run_once(&self, u0: &[f64], t_final: f64, r: f64) -> Result<std::result::Result<HjRun, f64>> {
        let dt0 = self.settings.time_step(self.eps);
        let steps = (t_final / dt0 - 1e-9).ceil().max(0.0) as usize;
        let dt = if steps == 0 { 0.0 } else { t_final / steps as f64 };
        let mut state = self.state(0.0, u0.to_vec(), r)?;
        let sup_abs = |s: &HjState| s.rate.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let certified_by = |v: f64| v <= 0.5 * r * (1.0 + 1e-9);
        let sup0 = sup_abs(&state);
        if !certified_by(sup0) {
            return Ok(Err(sup0));
        }
        let hi0 = state.dudt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo0 = state.dudt.iter().copied().fold(f64::INFINITY, f64::min);
        let l = sup0 * (1.0 + 1e-9) + 1e-8;
        let (eta_lo, eta_hi) = self.eta_bracket(l);
        let outside = |s: &HjState| {
            s.eta
                .iter()
                .enumerate()
                .filter(|(j, e)| **e < eta_lo[*j] * (1.0 - 1e-9) || **e > eta_hi[*j] * (1.0 + 1e-9))
                .count()
        };
        let mut eta_violations = outside(&state);
        let mut max_sup = sup0;
        let mut excess: f64 = 0.0;
        let every = self.settings.record_every.max(1);
        let mut records = vec![state.clone()];
        for k in 1..=steps {
            state = self
                .step_truncated(&state, dt)
                .map_err(|e| e.context(format!("hjb step {k} (t = {})", k as f64 * dt)))?;
            state.t = k as f64 * dt;
            let sup = sup_abs(&state);
            if !certified_by(sup) {
                return Ok(Err(sup));
            }
            max_sup = max_sup.max(state.dudt.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
            let hi = state.dudt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = state.dudt.iter().copied().fold(f64::INFINITY, f64::min);
            excess = excess.max(hi - hi0).max(lo0 - lo);
            eta_violations += outside(&state);
            if k % every == 0 || k == steps {
                records.push(state.clone());
            }
        }
        Ok(Ok(HjRun {
            eps: self.eps,
            dt,
            r,
            doublings: 0,
            final_state: state,
            records,
            sup_dudt0: sup0,
            max_sup_dudt: max_sup,
            contraction_excess: excess,
            eta_lo,
            eta_hi,
            eta_violations,
            steps,
        }))
    }

    /// Solves on `[0, t_final]` from `u0` on the trait grid, doubling `R` until
    /// `sup |∂ₜU| ≤ R/2` holds over the whole run.
    pub fn solve(&self, u0: &[f64], t_final: f64) -> Result<HjRun> {
        if u0.len() != self.y.len() {
            return Err(Error::Grid(format!("initial datum has {} values for {} trait nodes", u0.len(), self.y.len())));
        }
        if u0.len() < 2 {
            return Err(Error::Grid("hjb needs at least two trait nodes".into()));
        }
        let mut r = self.settings.r;
        for doublings in 0..=self.settings.max_doublings {
            match self.run_once(u0, t_final, r)? {
                Ok(mut run) => {
                    run.doublings = doublings;
                    return Ok(run);
                }
                Err(sup) if doublings == self.settings.max_doublings => {
                    return Err(Error::UnboundedDerivative { doublings, r, sup });
                }
                Err(_) => r *= 2.0,
            }
        }
        unreachable!("loop returns on its last iteration")
    }

    /// `max |∂ₜU − H(y, ∂_yU)|` over the interior nodes `window`, with central
    /// differences for `∂_yU`; nodes whose momentum exceeds the kernel's
    /// `p_max` are skipped and counted.
    pub fn residual(&self, state: &HjState, window: std::ops::Range<usize>) -> Result<(f64, usize)> {
        let h = self.y.step();
        let mut worst: f64 = 0.0;
        let mut skipped = 0;
        for j in window.start.max(1)..window.end.min(state.u.len() - 1) {
            let p = (state.u[j + 1] - state.u[j - 1]) / (2.0 * h);
            if p.abs() > self.kernel.p_max() {
                skipped += 1;
                continue;
            }
            let eta = self.kernel.eta(p)?;
            let hamiltonian = -self.root(j, eta)?.lambda;
            worst = worst.max((state.dudt[j] - hamiltonian).abs());
        }
        Ok((worst, skipped))
    }
}

/// Summary of solves for a decreasing sequence of ε.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub eps: Vec<f64>,
    /// `D_k = sup |U_{ε_k} − U_{ε_{k+1}}|` over the comparison window.
    pub d: Vec<f64>,
    pub decreasing: bool,
    /// Residual of the limit equation for the last ε.
    pub residual: f64,
    pub residual_skipped: usize,
    pub runs: Vec<HjRun>,
}

/// Solves for each ε in `eps_list` and compares the solutions on the sample
/// times `k·sample` and the trait nodes in `window`.
pub fn viscosity_limit_study(
    base: &HjbProblem,
    u0: &[f64],
    eps_list: &[f64],
    t_final: f64,
    sample: f64,
    window: std::ops::Range<usize>,
) -> Result<ConvergenceReport> {
    if eps_list.len() < 3 || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Domain("eps_list must be strictly decreasing with at least 3 entries".into()));
    }
    let samples = (t_final / sample).round() as usize;
    if samples == 0 || ((samples as f64) * sample - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::Domain(format!("sample interval {sample} must divide the final time {t_final}")));
    }
    let mut runs = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mut p = base.with_eps(eps)?;
        let dt_max = p.settings.time_step(eps);
        let per_sample = (sample / dt_max - 1e-9).ceil().max(1.0) as usize;
        p.settings.dt = Some(sample / per_sample as f64);
        p.settings.record_every = per_sample;
        runs.push(p.solve(u0, t_final).map_err(|e| e.context(format!("viscosity study at eps = {eps}")))?);
    }
    let d: Vec<f64> = runs
        .windows(2)
        .map(|w| {
            w[0].records
                .iter()
                .zip(&w[1].records)
                .flat_map(|(a, b)| window.clone().map(move |j| (a.u[j] - b.u[j]).abs()))
                .fold(0.0, f64::max)
        })
        .collect();
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let last = runs.last().expect("at least three runs");
    let finest = base.with_eps(last.eps)?;
    let (residual, residual_skipped) = finest.residual(&last.final_state, window.clone())?;
    Ok(ConvergenceReport { eps: eps_list.to_vec(), d, decreasing, residual, residual_skipped, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::TailClosure;

    fn problem(model: &CoefficientModel, kernel: MutationKernel, eps: f64, settings: HjbSettings) -> HjbProblem {
        HjbProblem::new(
            model,
            Axis::new(0.0, 40.0, 1999).unwrap(),
            Axis::new(0.0, 2.0, 40).unwrap(),
            kernel,
            eps,
            3.0,
            settings,
            EigenSettings { tail: TailClosure::Exponential, ..EigenSettings::default() },
        )
        .unwrap()
    }

    #[test]
    fn phi_r_examples_and_monotonicity() {
        let r = 4.0;
        assert_eq!(phi_r(1.0, r), 1.0);
        assert_eq!(phi_r(12.0, r), 4.0);
        assert_eq!(phi_r(-12.0, r), -4.0);
        assert!((phi_r(2.0, r) - 2.0).abs() < 1e-15 && (phi_r(8.0, r) - 4.0).abs() < 1e-15);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=20000 {
            let x = -12.0 + k as f64 * 1.2e-3;
            let v = phi_r(x, r);
            assert!(v >= prev);
            assert!((v - prev) <= 1.2e-3 * (1.0 + 1e-9) || prev == f64::NEG_INFINITY);
            prev = v;
        }
    }

    #[test]
    fn eta_of_constant_and_linear_potential() {
        let model = CoefficientModel::constant(1.0, 2.0, 1.0);
        let p = problem(&model, MutationKernel::gaussian(1.0).unwrap(), 0.05, HjbSettings::default());
        let flat = vec![0.7; p.y.len()];
        for j in 0..p.y.len() {
            assert!((p.eta_eps(&flat, j).unwrap() - 1.0).abs() < 1e-15);
        }
        for slope in [-2.0, -0.5, 1.0, 2.0] {
            let u: Vec<f64> = p.y.nodes().iter().map(|y| slope * y).collect();
            for j in [0, 20, 40] {
                let eta = p.eta_eps(&u, j).unwrap();
                assert!((eta - (slope * slope / 2.0f64).exp()).abs() < 1e-5, "p={slope}, j={j}");
            }
        }
        let delta = problem(&model, MutationKernel::delta(), 0.05, HjbSettings::default());
        let u: Vec<f64> = delta.y.nodes().iter().map(|y| (3.0 * y).sin()).collect();
        assert_eq!(delta.eta_eps(&u, 7).unwrap(), 1.0);
    }

    #[test]
    fn eta_eps_approaches_eta_of_gradient() {
        let model = CoefficientModel::constant(1.0, 2.0, 1.0);
        let kernel = MutationKernel::gaussian(1.0).unwrap();
        let fine = Axis::new(0.0, 4.0, 4000).unwrap();
        let u: Vec<f64> = fine.nodes().iter().map(|y| -(y - 0.8) * (y - 0.8)).collect();
        let j = 1500;
        let grad = -2.0 * (fine.node(j) - 0.8);
        let target = kernel.eta(grad).unwrap();
        let mut gaps = Vec::new();
        for eps in [0.1, 0.05] {
            let p = HjbProblem::new(&model, Axis::new(0.0, 10.0, 100).unwrap(), fine, kernel.clone(), eps, 5.0, HjbSettings::default(), EigenSettings::default()).unwrap();
            gaps.push((p.eta_eps(&u, j).unwrap() - target).abs());
        }
        let ratio = gaps[0] / gaps[1];
        assert!(ratio > 1.6 && ratio < 2.4, "{gaps:?}");
    }

    #[test]
    fn eta_overflow_names_the_node() {
        let model = CoefficientModel::constant(1.0, 2.0, 1.0);
        let p = problem(&model, MutationKernel::gaussian(1.0).unwrap(), 1e-3, HjbSettings::default());
        let u: Vec<f64> = p.y.nodes().iter().map(|y| 100.0 * y).collect();
        match p.eta_eps(&u, 20) {
            Err(Error::EtaOverflow { z, .. }) => assert!(z > 7.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_model_grows_linearly_and_certifies() {
        let model = CoefficientModel::constant(1.0, 2.0, 1.0);
        let p = problem(&model, MutationKernel::gaussian(1.0).unwrap(), 0.1, HjbSettings::default());
        let run = p.solve(&vec![0.0; p.y.len()], 0.5).unwrap();
        assert_eq!((run.doublings, run.r), (0, 4.0));
        for v in &run.final_state.u {
            assert!((v - 0.5).abs() < 1e-10);
        }
        assert!(run.a_priori_bound_holds() && run.contraction_holds());
        assert_eq!(run.eta_violations, 0);

        let p = problem(&model, MutationKernel::gaussian(1.0).unwrap(), 0.1, HjbSettings { r: 1.0, ..HjbSettings::default() });
        let run = p.solve(&vec![0.0; p.y.len()], 0.5).unwrap();
        assert_eq!((run.doublings, run.r), (1, 2.0));
    }

    #[test]
    fn doubling_exhaustion_is_an_error() {
        let model = CoefficientModel::constant(1.0, 2.0, 1.0);
        let settings = HjbSettings { r: 1e-3, max_doublings: 2, ..HjbSettings::default() };
        let p = problem(&model, MutationKernel::gaussian(1.0).unwrap(), 0.1, settings);
        let err = p.solve(&vec![0.0; p.y.len()], 0.1).unwrap_err();
        assert!(matches!(err, Error::UnboundedDerivative { doublings: 2, .. }));
    }

    #[test]
    fn ordered_data_stay_ordered() {
        let model = CoefficientModel::parse("1", "2+y/(1+y)", "1+0.5*y^2").unwrap();
        let p = problem(&model, MutationKernel::gaussian(1.0).unwrap(), 0.05, HjbSettings::default());
        let ua: Vec<f64> = p.y.nodes().iter().map(|y| -(y - 1.0) * (y - 1.0) / 2.0).collect();
        let ub: Vec<f64> = p.y.nodes().iter().zip(&ua).map(|(y, u)| u + 0.05 * (-(y - 0.7) * (y - 0.7) * 8.0).exp()).collect();
        let (mut sa, mut sb) = (p.state(0.0, ua, 4.0).unwrap(), p.state(0.0, ub, 4.0).unwrap());
        for _ in 0..100 {
            sa = p.step_truncated(&sa, 5e-3).unwrap();
            sb = p.step_truncated(&sb, 5e-3).unwrap();
            assert!(sa.u.iter().zip(&sb.u).all(|(a, b)| *a <= *b + 1e-10));
        }
    }

    #[test]
    fn cache_matches_direct_solves() {
        let model = CoefficientModel::parse("1", "2+y/(1+y)", "1+0.5*y^2").unwrap();
        let p = problem(&model, MutationKernel::gaussian(1.0).unwrap(), 0.05, HjbSettings::default());
        for eta in [0.5, 1.0, 1.2345678, 3.3] {
            let direct = p.root(11, eta).unwrap().lambda;
            assert!((p.lambda(11, eta).unwrap() - direct).abs() < 1e-11);
            assert!((p.lambda(11, eta + 1e-7).unwrap() - p.root(11, eta + 1e-7).unwrap().lambda).abs() < 1e-11);
        }
    }

    #[test]
    fn y_independent_model_has_zero_cauchy_gaps() {
        let model = CoefficientModel::constant(1.0, 2.0, 1.0);
        let p = problem(&model, MutationKernel::gaussian(1.0).unwrap(), 0.1, HjbSettings::default());
        let report = viscosity_limit_study(&p, &vec![0.0; p.y.len()], &[0.1, 0.05, 0.025], 0.2, 0.1, 5..36).unwrap();
        assert!(report.d.iter().all(|d| *d < 1e-12), "{:?}", report.d);
        assert!(report.residual < 1e-9);

        let u0: Vec<f64> = p.y.nodes().iter().map(|y| 0.5 * y).collect();
        let report = viscosity_limit_study(&p, &u0, &[0.1, 0.05, 0.025], 0.2, 0.1, 5..36).unwrap();
        let lambda = p.root(0, MutationKernel::gaussian(1.0).unwrap().eta(0.5).unwrap()).unwrap().lambda;
        for run in &report.runs {
            for j in 5..36 {
                let exact = u0[j] - run.final_state.t * lambda;
                assert!((run.final_state.u[j] - exact).abs() < 1e-8);
            }
        }
    }
}
