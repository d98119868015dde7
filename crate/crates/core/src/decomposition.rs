//! Factorization `m = p·e^{u/ε}` and the generalized relative entropy.
//!
//! The potential follows the closed form `u(t, y) = u⁰(y) − tΛ(y) − ∫₀ᵗ ρ`, the
//! profile is `p = m e^{−u/ε}`, and the entropy of a trait column is
//! `E = ∫ |p/Q − γ⁰| Q Φ dx` with `γ⁰ = ∫ p⁰ Φ dx`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{scheme_eigen, BoundaryWeights, SchemeEigen};
use crate::model::{CoefficientModel, Grid};
use crate::quadrature::XRule;
use crate::transport::PopulationState;
use crate::{Error, Result};

/// Densities below this value are treated as underflowed.
pub const UNDERFLOW: f64 = 1e-300;

/// Quadrature of `∫₀ᵗ ρ` over a recorded series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeRule {
    /// `Σ ρ(t_k)(t_{k+1} − t_k)`, the rule the transport scheme integrates exactly.
    #[default]
    LeftEndpoint,
    Trapezoid,
}

/// `∫₀ᵗ ρ` from a `(t, ρ)` series starting at 0.
pub fn rho_integral(series: &[(f64, f64)], t: f64, rule: TimeRule) -> Result<f64> {
    let (start, end) = match (series.first(), series.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(Error::Range { t, start: f64::NAN, end: f64::NAN }),
    };
    let slack = 1e-9 * (end - start).abs().max(1.0);
    if t < start - slack || t > end + slack {
        return Err(Error::Range { t, start, end });
    }
    let mut acc = CompensatedSum::default();
    for w in series.windows(2) {
        let ((t0, r0), (t1, r1)) = (w[0], w[1]);
        if t1 <= t + slack {
            acc.add(match rule {
                TimeRule::LeftEndpoint => r0 * (t1 - t0),
                TimeRule::Trapezoid => 0.5 * (r0 + r1) * (t1 - t0),
            });
        } else {
            if t > t0 {
                let s = t - t0;
                acc.add(match rule {
                    TimeRule::LeftEndpoint => r0 * s,
                    TimeRule::Trapezoid => {
                        let rt = r0 + (r1 - r0) * s / (t1 - t0);
                        0.5 * (r0 + rt) * s
                    }
                });
            }
            break;
        }
    }
    Ok(acc.value())
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        self.carry += if self.sum.abs() >= v.abs() { (self.sum - t) + v } else { (v - t) + self.sum };
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `u(t, y) = u⁰(y) − tΛ(y) − ∫₀ᵗ ρ` on the trait grid.
pub fn evolve_u(u0: &[f64], lambda: &[f64], rho_series: &[(f64, f64)], t: f64, rule: TimeRule) -> Result<Vec<f64>> {
    let integral = rho_integral(rho_series, t, rule)?;
    Ok(u_from_integral(u0, lambda, t, integral))
}

fn u_from_integral(u0: &[f64], lambda: &[f64], t: f64, integral: f64) -> Vec<f64> {
    u0.iter().zip(lambda).map(|(u, l)| u - t * l - integral).collect()
}

/// Profile `p = m e^{−u/ε}` with its underflow mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub p: Vec<f64>,
    /// `true` where `m` underflowed or `u` is undefined.
    pub mask: Vec<bool>,
}

impl Profile {
    pub fn masked_fraction(&self) -> f64 {
        self.mask.iter().filter(|m| **m).count() as f64 / self.mask.len().max(1) as f64
    }

    /// True when trait column `j` has no masked node.
    pub fn column_clear(&self, nx: usize, j: usize) -> bool {
        !self.mask[j * nx..(j + 1) * nx].iter().any(|m| *m)
    }
}

/// `p = exp(ln m − u/ε)` column by column; `m` is stored with `nx` ages per column.
pub fn extract_profile(m: &[f64], u: &[f64], eps: f64, nx: usize) -> Result<Profile> {
    let mut p = vec![0.0; m.len()];
    let mut mask = vec![false; m.len()];
    for (j, &uj) in u.iter().enumerate() {
        let shift = uj / eps;
        for i in 0..nx {
            let k = j * nx + i;
            let v = m[k];
            if v < UNDERFLOW || !shift.is_finite() {
                mask[k] = true;
                continue;
            }
            let e = v.ln() - shift;
            if e > 709.0 {
                return Err(Error::Inconsistent { i, j });
            }
            p[k] = e.exp();
        }
    }
    Ok(Profile { p, mask })
}

/// `p e^{u/ε}` at unmasked nodes, 0 elsewhere.
pub fn reconstruct(profile: &Profile, u: &[f64], eps: f64, nx: usize) -> Vec<f64> {
    let mut m = vec![0.0; profile.p.len()];
    for (j, &uj) in u.iter().enumerate() {
        for i in 0..nx {
            let k = j * nx + i;
            if !profile.mask[k] {
                m[k] = (profile.p[k].ln() + uj / eps).exp();
            }
        }
    }
    m
}

/// Largest relative difference between `m` and its reconstruction over unmasked nodes.
pub fn reconstruction_error(m: &[f64], profile: &Profile, u: &[f64], eps: f64, nx: usize) -> f64 {
    let rebuilt = reconstruct(profile, u, eps, nx);
    m.iter()
        .zip(&rebuilt)
        .zip(&profile.mask)
        .filter(|(_, masked)| !**masked)
        .map(|((a, b), _)| (a - b).abs() / a.abs())
        .fold(0.0, f64::max)
}

/// `γ⁰ = ∫ p⁰ Φ dx`.
pub fn gamma0_estimate(p0: &[f64], phi: &[f64], rule: XRule, h: f64) -> f64 {
    let v: Vec<f64> = p0.iter().zip(phi).map(|(p, f)| p * f).collect();
    rule.integrate(&v, h)
}

/// `∫ |p/Q − γ⁰|^q Q Φ dx`.
pub fn weighted_distance(p: &[f64], q: &[f64], phi: &[f64], gamma0: f64, rule: XRule, h: f64, exponent: f64) -> f64 {
    let v: Vec<f64> = p
        .iter()
        .zip(q)
        .zip(phi)
        .map(|((p, q), f)| (p / q - gamma0).abs().powf(exponent) * q * f)
        .collect();
    rule.integrate(&v, h)
}

/// Generalized relative entropy `∫ |p/Q − γ⁰| Q Φ dx`.
pub fn entropy(p: &[f64], q: &[f64], phi: &[f64], gamma0: f64, rule: XRule, h: f64) -> f64 {
    let v: Vec<f64> = p.iter().zip(q).zip(phi).map(|((p, q), f)| (p - gamma0 * q).abs() * f).collect();
    rule.integrate(&v, h)
}

/// Factorization of one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub t: f64,
    pub step: usize,
    pub u: Vec<f64>,
    pub profile: Profile,
    pub gamma0: Vec<f64>,
    /// Entropy per trait node, `NaN` where the column is masked or sterile.
    pub entropy: Vec<f64>,
    /// Weighted `L²` distance per trait node, `NaN` as for `entropy`.
    pub distance2: Vec<f64>,
    pub reconstruction_error: f64,
    pub sandwich_violations: usize,
}

/// Eigenelements a tracker projects onto, one per trait column.
#[derive(Debug, Clone)]
pub struct Reference {
    pub lambda: Vec<f64>,
    pub q: Vec<Option<Vec<f64>>>,
    pub phi: Vec<Option<Vec<f64>>>,
    /// Age-axis rule the normalization `∫ Q Φ = 1` refers to.
    pub rule: XRule,
    pub h: f64,
}

impl Reference {
    /// Eigenelements of the one-step operator of the transport scheme.
    pub fn scheme(model: &CoefficientModel, grid: &Grid, boundary: BoundaryWeights) -> Result<Self> {
        let tables = model.tables(&grid.x, &grid.y)?;
        let eig: Vec<Option<SchemeEigen>> = tables
            .columns
            .par_iter()
            .enumerate()
            .map(|(j, col)| {
                if col.is_sterile() {
                    Ok(None)
                } else {
                    scheme_eigen(col, grid.a(), grid.courant(), boundary)
                        .map(Some)
                        .map_err(|e| e.context(format!("scheme eigenproblem at j = {j}")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            lambda: eig.iter().map(|e| e.as_ref().map_or(f64::NAN, |e| e.lambda_h)).collect(),
            q: eig.iter().map(|e| e.as_ref().map(|e| e.q.clone())).collect(),
            phi: eig.iter().map(|e| e.as_ref().map(|e| e.phi.clone())).collect(),
            rule: XRule::Trapezoid,
            h: grid.x.step(),
        })
    }
}

/// Follows the factorization along a run, one [`Decomposition`] per recorded level.
#[derive(Debug, Clone)]
pub struct DecompositionTracker {
    pub grid: Grid,
    pub reference: Reference,
    pub u0: Vec<f64>,
    pub gamma0: Vec<f64>,
    pub gamma_lo: Vec<f64>,
    pub gamma_hi: Vec<f64>,
    /// Record every `every`-th time level, plus any level in `extra_steps`.
    pub every: usize,
    pub extra_steps: Vec<usize>,
    pub records: Vec<Decomposition>,
    /// Largest increase of the entropy between consecutive records, over all nodes.
    pub worst_entropy_increase: f64,
    pub worst_distance_increase: f64,
    pub worst_reconstruction: f64,
    pub sandwich_violations: usize,
    rho_sum: CompensatedSum,
    previous: Option<(usize, f64)>,
    last_record: Option<(Vec<f64>, Vec<f64>)>,
}

impl DecompositionTracker {
    /// Builds the tracker from the initial state; `γ⁰` and the sandwich bounds
    /// `γ_lo ≤ p⁰/Q ≤ γ_hi` are taken from it.
    pub fn new(grid: Grid, reference: Reference, u0: Vec<f64>, initial: &PopulationState, every: usize) -> Result<Self> {
        let nx = grid.nx();
        let profile = extract_profile(&initial.m, &u0, grid.eps, nx)?;
        let ny = grid.ny();
        let mut gamma0 = vec![f64::NAN; ny];
        let mut gamma_lo = vec![f64::NAN; ny];
        let mut gamma_hi = vec![f64::NAN; ny];
        for j in 0..ny {
            let (Some(q), Some(phi)) = (&reference.q[j], &reference.phi[j]) else { continue };
            if !profile.column_clear(nx, j) {
                continue;
            }
            let p = &profile.p[j * nx..(j + 1) * nx];
            gamma0[j] = gamma0_estimate(p, phi, reference.rule, reference.h);
            let ratios = p.iter().zip(q).map(|(p, q)| p / q);
            let (lo, hi) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
            gamma_lo[j] = lo;
            gamma_hi[j] = hi;
        }
        Ok(Self {
            grid,
            reference,
            u0,
            gamma0,
            gamma_lo,
            gamma_hi,
            every: every.max(1),
            extra_steps: Vec::new(),
            records: Vec::new(),
            worst_entropy_increase: f64::NEG_INFINITY,
            worst_distance_increase: f64::NEG_INFINITY,
            worst_reconstruction: 0.0,
            sandwich_violations: 0,
            rho_sum: CompensatedSum::default(),
            previous: None,
            last_record: None,
        })
    }

    /// Current `∫₀ᵗ ρ` accumulated with the left-endpoint rule.
    pub fn rho_integral(&self) -> f64 {
        self.grid.dt * self.rho_sum.value()
    }

    /// Feeds one time level; levels must arrive in order.
    pub fn observe(&mut self, state: &PopulationState) -> Result<()> {
        if let Some((n0, r0)) = self.previous {
            self.rho_sum.add(r0 * state.step.saturating_sub(n0) as f64);
        }
        self.previous = Some((state.step, state.rho));
        if state.step % self.every == 0 || self.extra_steps.contains(&state.step) {
            let d = self.decompose(state, self.rho_integral())?;
            self.absorb(d);
        }
        Ok(())
    }

    fn decompose(&self, state: &PopulationState, integral: f64) -> Result<Decomposition> {
        let nx = self.grid.nx();
        let eps = self.grid.eps;
        let u = u_from_integral(&self.u0, &self.reference.lambda, state.t, integral);
        let profile = extract_profile(&state.m, &u, eps, nx)
            .map_err(|e| e.context(format!("profile at t = {}", state.t)))?;
        let recon = reconstruction_error(&state.m, &profile, &u, eps, nx);
        let per_column: Vec<(f64, f64, usize)> = (0..self.grid.ny())
            .into_par_iter()
            .map(|j| {
                let (Some(q), Some(phi)) = (&self.reference.q[j], &self.reference.phi[j]) else {
                    return (f64::NAN, f64::NAN, 0);
                };
                if !profile.column_clear(nx, j) || !self.gamma0[j].is_finite() {
                    return (f64::NAN, f64::NAN, 0);
                }
                let p = &profile.p[j * nx..(j + 1) * nx];
                let g = self.gamma0[j];
                let violations = p
                    .iter()
                    .zip(q)
                    .filter(|(p, q)| {
                        **p < self.gamma_lo[j] * **q * (1.0 - 1e-9) || **p > self.gamma_hi[j] * **q * (1.0 + 1e-9)
                    })
                    .count();
                (
                    entropy(p, q, phi, g, self.reference.rule, self.reference.h),
                    weighted_distance(p, q, phi, g, self.reference.rule, self.reference.h, 2.0),
                    violations,
                )
            })
            .collect();
        Ok(Decomposition {
            t: state.t,
            step: state.step,
            u,
            gamma0: self.gamma0.clone(),
            entropy: per_column.iter().map(|c| c.0).collect(),
            distance2: per_column.iter().map(|c| c.1).collect(),
            sandwich_violations: per_column.iter().map(|c| c.2).sum(),
            reconstruction_error: recon,
            profile,
        })
    }

    fn absorb(&mut self, d: Decomposition) {
        if let Some((e_prev, w_prev)) = &self.last_record {
            for j in 0..d.entropy.len() {
                if e_prev[j].is_finite() && d.entropy[j].is_finite() {
                    self.worst_entropy_increase = self.worst_entropy_increase.max(d.entropy[j] - e_prev[j]);
                }
                if w_prev[j].is_finite() && d.distance2[j].is_finite() {
                    self.worst_distance_increase = self.worst_distance_increase.max(d.distance2[j] - w_prev[j]);
                }
            }
        }
        self.worst_reconstruction = self.worst_reconstruction.max(d.reconstruction_error);
        self.sandwich_violations += d.sandwich_violations;
        self.last_record = Some((d.entropy.clone(), d.distance2.clone()));
        let keep_profile = self.extra_steps.contains(&d.step);
        let mut d = d;
        if !keep_profile {
            d.profile.p = Vec::new();
            d.profile.mask = Vec::new();
        }
        self.records.push(d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{EigenSettings, EigenSolver, TailClosure};
    use crate::model::{Axis, InitialData};
    use crate::transport::{init_population, SchemeOptions, Transport};

    #[test]
    fn evolve_u_at_zero_and_linear_case() {
        let u0 = vec![-0.5, 0.0, -0.25];
        let lambda = vec![-1.0, -2.0, -3.0];
        let series: Vec<(f64, f64)> = (0..=10).map(|k| (0.1 * k as f64, 2.0)).collect();
        assert_eq!(evolve_u(&u0, &lambda, &series, 0.0, TimeRule::Trapezoid).unwrap(), u0);
        let u = evolve_u(&u0, &lambda, &series, 0.7, TimeRule::Trapezoid).unwrap();
        for j in 0..3 {
            assert!((u[j] - (u0[j] - 0.7 * (lambda[j] + 2.0))).abs() < 1e-14);
        }
        assert!(matches!(evolve_u(&u0, &lambda, &series, 1.5, TimeRule::Trapezoid), Err(Error::Range { .. })));
    }

    #[test]
    fn rho_integral_rules() {
        let series = vec![(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)];
        assert_eq!(rho_integral(&series, 2.0, TimeRule::Trapezoid).unwrap(), 6.0);
        assert_eq!(rho_integral(&series, 2.0, TimeRule::LeftEndpoint).unwrap(), 4.0);
        assert_eq!(rho_integral(&series, 0.5, TimeRule::Trapezoid).unwrap(), 0.75);
    }

    #[test]
    fn profile_identity_and_round_trip() {
        let m = vec![1.0, 2.0, 0.0, 4.0];
        let prof = extract_profile(&m, &[0.0, 0.0], 0.1, 2).unwrap();
        assert_eq!(prof.p, vec![1.0, 2.0, 0.0, 4.0]);
        assert_eq!(prof.mask, vec![false, false, true, false]);
        assert!(matches!(extract_profile(&[1.0], &[-100.0], 0.1, 1), Err(Error::Inconsistent { .. })));
    }

    #[test]
    fn initial_population_round_trip_recovers_p0() {
        let grid = Grid::new(Axis::new(0.0, 1.0, 90).unwrap(), Axis::new(0.0, 4.0, 40).unwrap(), 5e-5, 5e-3, 1.0).unwrap();
        let init = InitialData::selection_example();
        let pop = init_population(&init, &grid).unwrap();
        let prof = extract_profile(&pop.state.m, &pop.factorization_u0(grid.eps), grid.eps, grid.nx()).unwrap();
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let k = grid.index(i, j);
                if !prof.mask[k] {
                    let p0 = init.p0.eval(grid.x.node(i), grid.y.node(j));
                    assert!((prof.p[k] - p0).abs() <= 1e-12 * p0, "({i},{j})");
                }
            }
        }
        assert!(prof.masked_fraction() > 0.0);
    }

    #[test]
    fn gamma0_of_eigenfunction_multiple() {
        let settings = EigenSettings { tail: TailClosure::Exponential, ..EigenSettings::default() };
        let solver = EigenSolver::new(
            CoefficientModel::constant(1.0, 2.0, 1.0),
            Axis::new(0.0, 40.0, 1999).unwrap(),
            settings,
        );
        let (rule, h) = (settings.rule, solver.x.step());
        let q = solver.eigenfunction_q(0.0, 1.0).unwrap();
        let phi = solver.dual_phi(0.0, 1.0).unwrap();
        let p: Vec<f64> = q.iter().map(|v| 3.5 * v).collect();
        assert!((gamma0_estimate(&p, &phi, rule, h) - 3.5).abs() < 1e-8);
        let zero = vec![0.0; q.len()];
        assert_eq!(gamma0_estimate(&zero, &phi, rule, h), 0.0);

        let x_max = 5.0;
        let solver = EigenSolver::new(
            CoefficientModel::constant(1.0, 2.0, 1.0),
            Axis::new(0.0, x_max, 500).unwrap(),
            settings,
        );
        let phi = solver.dual_phi(0.0, 1.0).unwrap();
        let p0: Vec<f64> = (0..phi.len()).map(|i| (-0.8 * solver.x.node(i)).exp()).collect();
        let exact = 2.0 * (1.0 - (-0.8 * x_max).exp()) / 0.8;
        assert!((gamma0_estimate(&p0, &phi, rule, solver.x.step()) - exact).abs() < 1e-8);
    }

    #[test]
    fn entropy_and_distance_oracles() {
        let q = vec![1.0, 0.5, 0.25];
        let h = 0.5;
        let norm = XRule::Trapezoid.integrate(&q, h) * 2.0;
        let phi: Vec<f64> = vec![2.0 / norm; 3];
        let (rule, g) = (XRule::Trapezoid, 1.7);
        let p: Vec<f64> = q.iter().map(|v| g * v).collect();
        assert_eq!(entropy(&p, &q, &phi, g, rule, h), 0.0);
        for e in [1.0, 2.0, 3.0] {
            assert_eq!(weighted_distance(&p, &q, &phi, g, rule, h, e), 0.0);
        }
        let shifted: Vec<f64> = q.iter().map(|v| (g + 0.3) * v).collect();
        assert!((entropy(&shifted, &q, &phi, g, rule, h) - 0.3).abs() < 1e-14);
        let rough = vec![1.0, 2.0, 0.1];
        let e = entropy(&rough, &q, &phi, g, rule, h);
        assert!((weighted_distance(&rough, &q, &phi, g, rule, h, 1.0) - e).abs() < 1e-14);
    }

    #[test]
    fn tracker_on_short_selection_run() {
        let model = CoefficientModel::selection_example();
        let grid = Grid::new(Axis::new(0.0, 1.0, 90).unwrap(), Axis::new(0.0, 4.0, 40).unwrap(), 5e-5, 5e-3, 1.0).unwrap();
        let tr = Transport::new(&model, grid, SchemeOptions::default()).unwrap();
        let pop = init_population(&InitialData::selection_example(), &grid).unwrap();
        let reference = Reference::scheme(&model, &grid, BoundaryWeights::Quadrature).unwrap();
        let mut tracker = DecompositionTracker::new(grid, reference, pop.factorization_u0(grid.eps), &pop.state, 10).unwrap();
        let traj = tr.run(pop.state, 0.05, &[], |s| tracker.observe(s)).into_result().unwrap();
        assert_eq!(tracker.records.len(), 101);
        assert!(tracker.worst_entropy_increase <= 1e-8, "{}", tracker.worst_entropy_increase);
        assert!(tracker.worst_distance_increase <= 1e-8);
        assert!(tracker.worst_reconstruction <= 1e-10);
        assert_eq!(tracker.sandwich_violations, 0);
        let u = evolve_u(&tracker.u0, &tracker.reference.lambda, &traj.rho, 0.05, TimeRule::LeftEndpoint).unwrap();
        let last = tracker.records.last().unwrap();
        for (a, b) in u.iter().zip(&last.u) {
            assert!((a - b).abs() <= 1e-13 || (a.is_nan() && b.is_nan()), "{a} vs {b}");
        }
    }
}
