//! Time stepping of the ε-scaled renewal equation
//!
//! ```text
//! ε ∂t m + ∂x(A m) + (ρ(t) + d) m = 0,    ρ(t) = ∬ m,
//! A(0, y) m(t, 0, y) = ∬ M(z) b(x, y + εz) m(t, x, y + εz) dx dz,
//! ```
//!
//! with the upwind implicit-explicit scheme on a uniform `(x, y)` grid. Without
//! mutation the kernel is a point mass and the boundary reduces to `∫ b m dx`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::BoundaryWeights;
use crate::model::{CoefficientModel, Grid, InitialData, MutationKernel, Tables};
use crate::quadrature::trapezoid_weights;
use crate::{Error, Result};

/// Treatment of the competition term `ρ m` over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Competition {
    /// The step is followed by the exact decay `e^{−(Δt/ε) ρᵏ}` of the competition term.
    #[default]
    Exponential,
    /// `−(Δt/ε) ρᵏ mᵏ` is added explicitly to the interior update.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SchemeOptions {
    pub competition: Competition,
    pub boundary: BoundaryWeights,
}

/// Density on the grid at one time level, stored column by column in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub m: Vec<f64>,
    pub t: f64,
    pub step: usize,
    pub rho: f64,
}

impl PopulationState {
    pub fn column(&self, nx: usize, j: usize) -> &[f64] {
        &self.m[j * nx..(j + 1) * nx]
    }
}

/// Bounds `[ρ_m, ρ_M]` on the total population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationBounds {
    pub rho_m: f64,
    pub rho_big_m: f64,
}

impl SaturationBounds {
    /// `ρ_m = min(r_lo, ρ⁰)`, `ρ_M = max(r_hi, ρ⁰)`.
    pub fn new(r_lo: f64, r_hi: f64, rho0: f64) -> Self {
        Self { rho_m: r_lo.min(rho0), rho_big_m: r_hi.max(rho0) }
    }

    pub fn contains(&self, rho: f64, tol: f64) -> bool {
        rho >= self.rho_m - tol && rho <= self.rho_big_m + tol
    }
}

/// Initial state together with the potential used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPopulation {
    pub state: PopulationState,
    /// `u⁰` on the trait grid after shifting its maximum to 0.
    pub u0: Vec<f64>,
    /// Amount subtracted from `u⁰` so that its maximum is 0.
    pub shift: f64,
    /// Factor applied to `p⁰` to reach the requested total mass.
    pub scale: f64,
}

impl InitialPopulation {
    /// `u⁰ + ε ln(scale)`: the potential for which `m⁰ = p⁰ e^{u/ε}` holds with
    /// the configured `p⁰` itself, the mass rescale being carried by `u`.
    pub fn factorization_u0(&self, eps: f64) -> Vec<f64> {
        let lift = eps * self.scale.ln();
        self.u0.iter().map(|u| u + lift).collect()
    }
}

/// `m⁰ = p⁰ e^{u⁰/ε}`, with `u⁰` shifted to peak at 0 and an optional rescale
/// of the total mass. Values below the double range are stored as 0.
pub fn init_population(init: &InitialData, grid: &Grid) -> Result<InitialPopulation> {
    let raw_u0 = init.u0_on(&grid.y)?;
    let shift = raw_u0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let u0: Vec<f64> = raw_u0.iter().map(|u| u - shift).collect();
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut m = vec![0.0; nx * ny];
    for j in 0..ny {
        let y = grid.y.node(j);
        let weight = (u0[j] / grid.eps).exp();
        for i in 0..nx {
            let x = grid.x.node(i);
            let p = init.p0.eval(x, y);
            if !p.is_finite() || p < 0.0 {
                return Err(Error::NonFinite { what: "p0".into(), x, y });
            }
            m[grid.index(i, j)] = p * weight;
        }
    }
    let weights = MassWeights::new(grid);
    let mut rho = weights.total(&m);
    let mut scale = 1.0;
    if let Some(target) = init.mass {
        if !(rho > 0.0) {
            return Err(Error::Domain("initial population is zero; cannot rescale".into()));
        }
        scale = target / rho;
        for v in &mut m {
            *v *= scale;
        }
        rho = weights.total(&m);
    }
    Ok(InitialPopulation {
        state: PopulationState { m, t: 0.0, step: 0, rho },
        u0,
        shift,
        scale,
    })
}

/// Trapezoid weights of the 2-D mass integral.
#[derive(Debug, Clone, PartialEq)]
pub struct MassWeights {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl MassWeights {
    pub fn new(grid: &Grid) -> Self {
        Self {
            x: trapezoid_weights(grid.nx(), grid.x.step()),
            y: trapezoid_weights(grid.ny(), grid.y.step()),
        }
    }

    /// `∫ m(x, y_j) dx` for every trait node.
    pub fn marginal(&self, m: &[f64]) -> Vec<f64> {
        let nx = self.x.len();
        m.par_chunks(nx)
            .map(|col| col.iter().zip(&self.x).map(|(v, w)| v * w).sum())
            .collect()
    }

    /// `∬ m`, summed in a fixed order.
    pub fn total(&self, m: &[f64]) -> f64 {
        self.marginal(m).iter().zip(&self.y).map(|(v, w)| v * w).sum()
    }
}

/// Linear interpolation stencil of `y_j + εz_q` on the trait grid.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Stencil {
    j0: usize,
    theta: f64,
}

#[derive(Debug, Clone)]
struct MutationTables {
    /// Kernel weights.
    weights: Vec<f64>,
    /// `stencils[j * nz + q]`, `None` beyond the trait domain.
    stencils: Vec<Option<Stencil>>,
    /// `births[(j * nz + q) * nx + i] = b(x_i, y_j + εz_q)`.
    births: Vec<f64>,
}

/// The discrete evolution operator for a fixed grid and model.
#[derive(Debug, Clone)]
pub struct Transport {
    pub grid: Grid,
    pub options: SchemeOptions,
    pub tables: Tables,
    pub weights: MassWeights,
    mutation: Option<MutationTables>,
}

impl Transport {
    pub fn new(model: &CoefficientModel, grid: Grid, options: SchemeOptions) -> Result<Self> {
        let tables = model.tables(&grid.x, &grid.y)?;
        Ok(Self { weights: MassWeights::new(&grid), grid, options, tables, mutation: None })
    }

    /// Adds the mutation boundary for `kernel`.
    pub fn with_mutation(mut self, model: &CoefficientModel, kernel: &MutationKernel) -> Result<Self> {
        let g = &self.grid;
        let (nx, ny, nz) = (g.nx(), g.ny(), kernel.nodes().len());
        let mut stencils = Vec::with_capacity(ny * nz);
        let mut births = vec![0.0; ny * nz * nx];
        for j in 0..ny {
            let yj = g.y.node(j);
            for (q, &z) in kernel.nodes().iter().enumerate() {
                let yq = if z == 0.0 { yj } else { yj + g.eps * z };
                let stencil = if z == 0.0 {
                    Some(Stencil { j0: j, theta: 0.0 })
                } else if yq < g.y.min || yq > g.y.max {
                    None
                } else {
                    let s = (yq - g.y.min) / g.y.step();
                    let j0 = (s.floor() as usize).min(g.y.cells);
                    Some(Stencil { j0, theta: (s - j0 as f64).max(0.0) })
                };
                if stencil.is_some() {
                    let row = &mut births[(j * nz + q) * nx..(j * nz + q + 1) * nx];
                    for (i, slot) in row.iter_mut().enumerate() {
                        let x = g.x.node(i);
                        let b = model.b.eval(x, yq);
                        if !b.is_finite() {
                            return Err(Error::NonFinite { what: "b".into(), x, y: yq });
                        }
                        *slot = b;
                    }
                }
                stencils.push(stencil);
            }
        }
        self.mutation = Some(MutationTables { weights: kernel.weights().to_vec(), stencils, births });
        Ok(self)
    }

    pub fn has_mutation(&self) -> bool {
        self.mutation.is_some()
    }

    /// Birth flux `A(0, y_j) m(0, y_j)` for every column.
    fn births(&self, m: &[f64]) -> Vec<f64> {
        let nx = self.grid.nx();
        let w = self.options.boundary.weight(self.grid.x.step());
        match &self.mutation {
            None => m
                .par_chunks(nx)
                .zip(self.tables.columns.par_iter())
                .map(|(col, coef)| (1..nx).map(|i| w * coef.b[i] * col[i]).sum())
                .collect(),
            Some(mt) => {
                let nz = mt.weights.len();
                let ny = self.grid.ny();
                (0..ny)
                    .into_par_iter()
                    .map(|j| {
                        let mut total = 0.0;
                        for q in 0..nz {
                            let Some(st) = mt.stencils[j * nz + q] else { continue };
                            let b = &mt.births[(j * nz + q) * nx..(j * nz + q + 1) * nx];
                            let lower = &m[st.j0 * nx..(st.j0 + 1) * nx];
                            let inner: f64 = if st.theta == 0.0 {
                                (1..nx).map(|i| w * b[i] * lower[i]).sum()
                            } else {
                                let upper = &m[(st.j0 + 1) * nx..(st.j0 + 2) * nx];
                                let t = st.theta;
                                (1..nx)
                                    .map(|i| w * b[i] * ((1.0 - t) * lower[i] + t * upper[i]))
                                    .sum()
                            };
                            total += mt.weights[q] * inner;
                        }
                        total
                    })
                    .collect()
            }
        }
    }

    /// One step of the scheme.
    pub fn step(&self, state: &PopulationState) -> Result<PopulationState> {
        let g = &self.grid;
        let nx = g.nx();
        let a = g.a();
        let c = g.courant();
        let rho = state.rho;
        let births = self.births(&state.m);
        let factor = match self.options.competition {
            Competition::Exponential => (-a * rho).exp(),
            Competition::Explicit => 1.0,
        };
        let explicit = match self.options.competition {
            Competition::Exponential => 0.0,
            Competition::Explicit => a * rho,
        };
        let mut next = vec![0.0; state.m.len()];
        next.par_chunks_mut(nx)
            .zip(state.m.par_chunks(nx))
            .zip(self.tables.columns.par_iter())
            .zip(births.par_iter())
            .for_each(|(((out, old), coef), &birth)| {
                out[0] = factor * (birth / coef.a[0]);
                for i in 1..nx {
                    let flux = coef.a[i] * old[i] - coef.a[i - 1] * old[i - 1];
                    let v = (old[i] - c * flux - explicit * old[i]) / (1.0 + a * coef.d[i]);
                    out[i] = factor * v;
                }
            });
        if let Some(k) = next.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Instability {
                step: state.step + 1,
                i: k % nx,
                j: k / nx,
                value: next[k],
            });
        }
        let rho = self.weights.total(&next);
        Ok(PopulationState { m: next, t: (state.step + 1) as f64 * g.dt, step: state.step + 1, rho })
    }

    /// Steps to `t_final`, recording snapshots at `snapshot_times` and the full
    /// `ρ` series. `observer` sees every time level, including the initial one.
    pub fn run<F>(&self, initial: PopulationState, t_final: f64, snapshot_times: &[f64], mut observer: F) -> Trajectory
    where
        F: FnMut(&PopulationState) -> Result<()>,
    {
        let mut traj = Trajectory::default();
        let steps = match self.grid.steps_to(t_final) {
            Ok(n) => n,
            Err(e) => {
                traj.failure = Some(e);
                return traj;
            }
        };
        let mut marks = Vec::with_capacity(snapshot_times.len());
        for &t in snapshot_times {
            match self.grid.steps_to(t) {
                Ok(k) if k <= steps => marks.push(k),
                Ok(_) => {}
                Err(e) => {
                    traj.failure = Some(e.context("snapshot times"));
                    return traj;
                }
            }
        }
        let mut state = initial;
        loop {
            traj.rho.push((state.t, state.rho));
            if marks.contains(&state.step) {
                traj.snapshots.push(state.clone());
            }
            if let Err(e) = observer(&state) {
                traj.failure = Some(e);
                break;
            }
            if state.step >= steps {
                break;
            }
            match self.step(&state) {
                Ok(next) => state = next,
                Err(e) => {
                    traj.failure = Some(e.context(format!("transport step at t = {}", state.t)));
                    break;
                }
            }
        }
        traj.final_state = Some(state);
        traj
    }

    /// `∫ m(x, y_j) dx` per trait node.
    pub fn marginal(&self, state: &PopulationState) -> Vec<f64> {
        self.weights.marginal(&state.m)
    }

    /// Mass-weighted mean trait.
    pub fn mean_trait(&self, state: &PopulationState) -> f64 {
        let marginal = self.marginal(state);
        let (mut num, mut den) = (0.0, 0.0);
        for (j, (v, w)) in marginal.iter().zip(&self.weights.y).enumerate() {
            num += self.grid.y.node(j) * v * w;
            den += v * w;
        }
        num / den
    }
}

/// Recorded output of a run.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub snapshots: Vec<PopulationState>,
    /// `(t, ρ)` at every time level.
    pub rho: Vec<(f64, f64)>,
    pub final_state: Option<PopulationState>,
    /// The error that stopped the run early, if any.
    pub failure: Option<Error>,
}

impl Trajectory {
    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// True when `v` rises to a single peak and then falls, up to `rel_tol·max`.
pub fn is_unimodal(v: &[f64], rel_tol: f64) -> bool {
    let Some((peak, &top)) = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return true;
    };
    let tol = rel_tol * top.abs();
    v[..=peak].windows(2).all(|w| w[1] >= w[0] - tol) && v[peak..].windows(2).all(|w| w[1] <= w[0] + tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Axis, CoefficientExpr, KernelSpec};

    fn selection_grid() -> Grid {
        Grid::new(
            Axis::new(0.0, 1.0, 90).unwrap(),
            Axis::new(0.0, 4.0, 40).unwrap(),
            5e-5,
            5e-3,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn hand_oracle_on_two_by_one_grid() {
        let model = CoefficientModel::parse("1", "0", "1").unwrap();
        let (dt, eps) = (0.1, 1.0);
        let grid = Grid::new(Axis::new(0.0, 1.0, 1).unwrap(), Axis::new(0.0, 1.0, 1).unwrap(), dt, eps, 1.0).unwrap();
        let options = SchemeOptions { competition: Competition::Explicit, ..SchemeOptions::default() };
        let tr = Transport::new(&model, grid, options).unwrap();
        let m = vec![1.0; 4];
        let rho0 = tr.weights.total(&m);
        assert_eq!(rho0, 1.0);
        let next = tr.step(&PopulationState { m, t: 0.0, step: 0, rho: rho0 }).unwrap();
        let a = dt / eps;
        let upwind = (1.0 * 1.0 - 1.0 * 1.0) / 1.0;
        let expected = (1.0 - a * upwind - a * rho0) / (1.0 + a);
        assert!((next.m[1] - expected).abs() < 1e-15);
        assert!((next.m[3] - expected).abs() < 1e-15);
        assert_eq!(next.m[0], 0.0);
        assert!((next.rho - tr.weights.total(&next.m)).abs() <= 1e-12 * next.rho);
    }

    #[test]
    fn zero_population_stays_zero() {
        let grid = selection_grid();
        let tr = Transport::new(&CoefficientModel::selection_example(), grid, SchemeOptions::default()).unwrap();
        let zero = PopulationState { m: vec![0.0; grid.nx() * grid.ny()], t: 0.0, step: 0, rho: 0.0 };
        let next = tr.step(&zero).unwrap();
        assert!(next.m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_initial_data() {
        let grid = Grid::new(Axis::new(0.0, 2.0, 20).unwrap(), Axis::new(-1.0, 2.0, 30).unwrap(), 0.01, 1.0, 1.0).unwrap();
        let init = InitialData {
            u0: CoefficientExpr::constant(0.0),
            p0: CoefficientExpr::constant(1.0),
            k0: 1.0,
            gamma_lo: None,
            gamma_hi: None,
            mass: None,
        };
        let p = init_population(&init, &grid).unwrap();
        assert!(p.state.m.iter().all(|v| *v == 1.0));
        assert!((p.state.rho - 6.0).abs() < 1e-12);
    }

    #[test]
    fn initial_data_underflows_to_zero_far_from_peak() {
        let grid = selection_grid();
        let p = init_population(&InitialData::selection_example(), &grid).unwrap();
        assert!((p.state.rho - 1000.0).abs() < 1e-9);
        assert_eq!(p.state.m[grid.index(0, 40)], 0.0);
        assert!(p.state.m[grid.index(0, 5)] > 0.0);
    }

    #[test]
    fn delta_kernel_reproduces_no_mutation_step() {
        let grid = selection_grid();
        let model = CoefficientModel::selection_example();
        let plain = Transport::new(&model, grid, SchemeOptions::default()).unwrap();
        let mutating = plain.clone().with_mutation(&model, &MutationKernel::delta()).unwrap();
        let init = init_population(&InitialData::selection_example(), &grid).unwrap().state;
        let (mut a, mut b) = (init.clone(), init);
        for _ in 0..200 {
            a = plain.step(&a).unwrap();
            b = mutating.step(&b).unwrap();
            for (u, v) in a.m.iter().zip(&b.m) {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn symmetric_problem_stays_symmetric() {
        let grid = Grid::new(Axis::new(0.0, 1.0, 40).unwrap(), Axis::new(-1.0, 1.0, 40).unwrap(), 2.5e-4, 1e-2, 1.0).unwrap();
        let model = CoefficientModel::parse("1", "4-y^2", "1+x").unwrap();
        let kernel = MutationKernel::new(KernelSpec::Gaussian { sigma: 2.0, nodes: Some(41) }).unwrap();
        let tr = Transport::new(&model, grid, SchemeOptions::default())
            .unwrap()
            .with_mutation(&model, &kernel)
            .unwrap();
        let init = InitialData {
            u0: CoefficientExpr::parse("-y^2/2").unwrap(),
            p0: CoefficientExpr::parse("exp(-x)").unwrap(),
            k0: 1.0,
            gamma_lo: None,
            gamma_hi: None,
            mass: None,
        };
        let mut s = init_population(&init, &grid).unwrap().state;
        for _ in 0..100 {
            s = tr.step(&s).unwrap();
        }
        let nx = grid.nx();
        for j in 0..grid.ny() {
            let mirror = grid.ny() - 1 - j;
            for i in 0..nx {
                let (u, v) = (s.m[grid.index(i, j)], s.m[grid.index(i, mirror)]);
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1e-300), "({i},{j})");
            }
        }
    }

    #[test]
    fn explicit_competition_breaks_positivity_on_large_initial_mass() {
        let grid = selection_grid();
        let model = CoefficientModel::selection_example();
        let options = SchemeOptions { competition: Competition::Explicit, ..SchemeOptions::default() };
        let tr = Transport::new(&model, grid, options).unwrap();
        let init = init_population(&InitialData::selection_example(), &grid).unwrap().state;
        assert!(matches!(tr.step(&init), Err(Error::Instability { step: 1, .. })));
    }

    #[test]
    fn gaussian_run_respects_mass_bound() {
        let grid = Grid::new(Axis::new(0.0, 1.0, 45).unwrap(), Axis::new(0.0, 4.0, 40).unwrap(), 1e-4, 5e-3, 1.0).unwrap();
        let model = CoefficientModel::selection_example();
        let kernel = MutationKernel::gaussian(1.0).unwrap();
        let tr = Transport::new(&model, grid, SchemeOptions::default())
            .unwrap()
            .with_mutation(&model, &kernel)
            .unwrap();
        let init = init_population(&InitialData::selection_example(), &grid).unwrap().state;
        let report = model.validate(&grid.x, &grid.y).unwrap();
        let bounds = SaturationBounds::new(report.r_lo, report.r_hi, init.rho);
        let traj = tr.run(init, 0.2, &[], |_| Ok(())).into_result().unwrap();
        assert!(traj.rho.iter().all(|(_, r)| bounds.contains(*r, 10.0 * grid.dt)));
    }

    #[test]
    fn zero_final_time_records_only_the_initial_snapshot() {
        let grid = selection_grid();
        let tr = Transport::new(&CoefficientModel::selection_example(), grid, SchemeOptions::default()).unwrap();
        let init = init_population(&InitialData::selection_example(), &grid).unwrap().state;
        let traj = tr.run(init.clone(), 0.0, &[0.0], |_| Ok(())).into_result().unwrap();
        assert_eq!(traj.snapshots, vec![init]);
        assert_eq!(traj.rho.len(), 1);
    }

    #[test]
    fn scheme_is_first_order() {
        // b is scaled so that p0 satisfies the birth boundary condition at t = 0.
        let model = CoefficientModel::parse("1", "2/(1-exp(-4))*exp(-x)", "1+x").unwrap();
        let init = InitialData {
            u0: CoefficientExpr::parse("-(y-0.5)^2/2").unwrap(),
            p0: CoefficientExpr::parse("exp(-x)").unwrap(),
            k0: 1.0,
            gamma_lo: None,
            gamma_hi: None,
            mass: None,
        };
        let solve = |cells: usize| {
            let dx = 2.0 / cells as f64;
            let grid = Grid::new(Axis::new(0.0, 2.0, cells).unwrap(), Axis::new(0.0, 1.0, 4).unwrap(), 0.5 * dx, 1.0, 1.0).unwrap();
            let tr = Transport::new(&model, grid, SchemeOptions::default()).unwrap();
            let s = init_population(&init, &grid).unwrap().state;
            let f = tr.run(s, 0.1, &[], |_| Ok(())).into_result().unwrap().final_state.unwrap();
            (grid, f)
        };
        let (g1, s1) = solve(40);
        let (g2, s2) = solve(80);
        let (g3, s3) = solve(160);
        let mut d1: f64 = 0.0;
        let mut d2: f64 = 0.0;
        for j in 0..g1.ny() {
            for i in 0..g1.nx() {
                let a = s1.m[g1.index(i, j)];
                let b = s2.m[g2.index(2 * i, j)];
                let c = s3.m[g3.index(4 * i, j)];
                d1 = d1.max((a - b).abs());
                d2 = d2.max((b - c).abs());
            }
        }
        assert!(d1 / d2 >= 1.8, "{d1} {d2}");
    }

    #[test]
    fn unimodality() {
        assert!(is_unimodal(&[0.0, 1.0, 3.0, 2.0, 0.0], 0.0));
        assert!(!is_unimodal(&[0.0, 2.0, 1.0, 2.5, 0.0], 0.0));
    }
}
