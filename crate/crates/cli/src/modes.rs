//! The run modes and the artifacts each one writes.

use renewal_core::adaptive::{rho_monotonicity_check, CriticalReport, EigenLandscape, Landscape, LimitProblem};
use renewal_core::config::{Mode, RunConfig};
use renewal_core::decomposition::{evolve_u, rho_integral, DecompositionTracker, Reference, TimeRule};
use renewal_core::eigen::{EigenField, EigenSolver};
use renewal_core::hjb::{viscosity_limit_study, HjbProblem};
use renewal_core::model::{CoefficientExpr, CoefficientModel, ValidationReport};
use renewal_core::transport::{init_population, is_unimodal, SaturationBounds, Transport};
use renewal_core::Error;

use rayon::prelude::*;

use crate::output::{csv_num, Output};
use crate::RunError;

/// `key = value` lines collected over a run and written to `summary.txt`.
#[derive(Debug, Default)]
pub struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    pub fn num(&mut self, key: &str, v: f64) {
        self.lines.push((key.into(), csv_num(v)));
    }

    pub fn flag(&mut self, key: &str, v: bool) {
        self.lines.push((key.into(), v.to_string()));
    }

    pub fn text(&mut self, key: &str, v: impl Into<String>) {
        self.lines.push((key.into(), v.into()));
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn ctx(what: &'static str) -> impl Fn(Error) -> Error {
    move |e| e.context(what)
}

fn warn(summary: &mut Summary, module: &str, message: &str) {
    eprintln!("warning [{module}]: {message}");
    summary.text(&format!("warning.{module}"), message);
}

fn validate_model(model: &CoefficientModel, cfg: &RunConfig, mode: Mode, out: &mut Output, summary: &mut Summary) -> Result<ValidationReport, RunError> {
    let (x, y) = (cfg.x_axis(mode)?, cfg.y_axis(mode)?);
    let report = model.validate(&x, &y).map_err(ctx("model: validate"))?;
    out.write("validation.txt", &report.to_string())?;
    let report = report.into_result().map_err(ctx("model: validate"))?;
    for c in report.warnings() {
        warn(summary, "model", &format!("assumption {} fails at {} node(s)", c.assumption.label(), c.violations));
    }
    Ok(report)
}

/// Outcome of the eigen mode used by the full report.
pub struct EigenOutcome {
    pub field: EigenField,
    pub critical: CriticalReport,
}

pub fn eigen(cfg: &RunConfig, mode: Mode, out: &mut Output, summary: &mut Summary) -> Result<EigenOutcome, RunError> {
    let model = cfg.model(mode)?;
    validate_model(model, cfg, mode, out, summary)?;
    let (x, y) = (cfg.x_axis(mode)?, cfg.y_axis(mode)?);
    let solver = EigenSolver::new(model.clone(), x, cfg.eigen);
    let field = solver.field(&y, 1.0).map_err(ctx("eigen: field"))?;
    for w in &field.warnings {
        warn(summary, "eigen", w);
    }
    let rows: Vec<Vec<f64>> = field
        .nodes
        .iter()
        .enumerate()
        .map(|(j, n)| match n {
            Some(n) => vec![n.y, n.lambda, n.grad_lambda, n.d_eta_lambda],
            None => vec![y.node(j), f64::NAN, f64::NAN, f64::NAN],
        })
        .collect();
    let header = ["y", "Lambda", "grad_Lambda", "d_eta_Lambda"];
    out.csv_f64("lambda.csv", &header, rows.clone())?;
    out.dat("lambda.dat", &header, rows)?;
    for (name, pick) in [("q_matrix.dat", 0), ("phi_matrix.dat", 1)] {
        let matrix = (0..x.len()).map(|i| {
            field
                .nodes
                .iter()
                .map(|n| n.as_ref().map_or(f64::NAN, |n| if pick == 0 { n.q[i] } else { n.phi[i] }))
                .collect()
        });
        out.dat(name, &["rows: age nodes i = 0..M, columns: trait nodes j = 0..N"], matrix)?;
    }

    let u0 = match &cfg.initial {
        Some(init) => init.u0.clone(),
        None => CoefficientExpr::constant(0.0),
    };
    let limit = LimitProblem::new(EigenLandscape::new(solver, u0), y).map_err(ctx("eigen: landscape"))?;
    let critical = limit.critical_points(&field.grad_lambda()).map_err(ctx("eigen: critical points"))?;
    out.csv(
        "critical_points.csv",
        &["y", "kind", "second_difference"],
        critical
            .points
            .iter()
            .map(|p| vec![csv_num(p.y), format!("{:?}", p.kind).to_lowercase(), csv_num(p.second_difference)]),
    )?;
    if critical.degenerate {
        warn(summary, "eigen", "grad Lambda vanishes on the whole trait grid (degenerate landscape)");
    }
    if let Some(j) = field.argmin_lambda() {
        summary.num("eigen.argmin_y", y.node(j));
        summary.num("eigen.min_lambda", field.lambda()[j]);
    }
    summary.num("eigen.critical_points", critical.points.len() as f64);
    Ok(EigenOutcome { field, critical })
}

/// Outcome of a PDE run used by the full report.
pub struct SimOutcome {
    pub mean_trait: f64,
    pub dy: f64,
}

pub fn simulate(cfg: &RunConfig, mode: Mode, out: &mut Output, summary: &mut Summary, mutation: bool, decompose: bool) -> Result<SimOutcome, RunError> {
    let model = cfg.model(mode)?;
    let report = validate_model(model, cfg, mode, out, summary)?;
    let grid = cfg.pde_grid(mode)?;
    let init = cfg.initial(mode)?;
    let t_final = cfg.t_final(mode)?;
    let times = cfg.snapshot_times(mode)?;
    let options = cfg.scheme_options();
    let mut transport = Transport::new(model, grid, options).map_err(ctx("transport: setup"))?;
    if mutation {
        let kernel = cfg.kernel(mode)?;
        transport = transport.with_mutation(model, &kernel).map_err(ctx("transport: mutation tables"))?;
    }
    let pop = init_population(init, &grid).map_err(ctx("transport: initial population"))?;
    let u0 = pop.factorization_u0(grid.eps);
    let reference = if mutation {
        None
    } else {
        Some(Reference::scheme(model, &grid, options.boundary).map_err(ctx("decomposition: scheme eigenelements"))?)
    };
    let mut tracker = match (&reference, decompose) {
        (Some(r), true) => {
            let mut t = DecompositionTracker::new(grid, r.clone(), u0.clone(), &pop.state, cfg.run.decompose_every)
                .map_err(ctx("decomposition: initial factorization"))?;
            t.extra_steps = times.iter().map(|t| grid.steps_to(*t)).collect::<Result<_, _>>()?;
            Some(t)
        }
        _ => None,
    };
    eprintln!("simulate: {} steps on a {}x{} grid", grid.steps_to(t_final)?, grid.nx(), grid.ny());
    let traj = transport.run(pop.state.clone(), t_final, &times, |s| match tracker.as_mut() {
        Some(t) => t.observe(s),
        None => Ok(()),
    });

    out.csv_f64("rho.csv", &["t", "rho"], traj.rho.iter().map(|(t, r)| vec![*t, *r]))?;
    out.dat("rho.dat", &["t", "rho"], traj.rho.iter().map(|(t, r)| vec![*t, *r]))?;
    let mut snapshot_rows = Vec::new();
    for (k, s) in traj.snapshots.iter().enumerate() {
        let marginal = transport.marginal(s);
        let u = match &reference {
            Some(r) => evolve_u(&u0, &r.lambda, &traj.rho, s.t, TimeRule::LeftEndpoint)?,
            None => marginal.iter().map(|m| grid.eps * m.ln()).collect(),
        };
        let rows: Vec<Vec<f64>> = (0..grid.ny()).map(|j| vec![grid.y.node(j), marginal[j], u[j]]).collect();
        out.dat(&format!("snapshot_{k}.dat"), &[&format!("t = {}", s.t), "y", "m", "u"], rows.clone())?;
        snapshot_rows.extend(rows.into_iter().map(|r| vec![s.t, r[0], r[1], r[2]]));
        let matrix = (0..grid.nx()).map(|i| (0..grid.ny()).map(|j| s.m[grid.index(i, j)]).collect());
        out.dat(
            &format!("isoline_{k}.dat"),
            &[&format!("t = {}", s.t), "rows: age nodes i = 0..M, columns: trait nodes j = 0..N"],
            matrix,
        )?;
    }
    out.csv_f64("snapshots.csv", &["t", "y", "m", "u"], snapshot_rows)?;
    summary.num("simulate.snapshots", traj.snapshots.len() as f64);

    let bounds = SaturationBounds::new(report.r_lo, report.r_hi, pop.state.rho);
    let saturated = traj.rho.iter().all(|(_, r)| bounds.contains(*r, 10.0 * grid.dt));
    summary.flag("simulate.rho_within_saturation_bounds", saturated);
    summary.num("simulate.rho_m", bounds.rho_m);
    summary.num("simulate.rho_M", bounds.rho_big_m);

    if let Some(t) = &tracker {
        let rows = t.records.iter().flat_map(|d| {
            (0..grid.ny()).map(move |j| vec![d.t, grid.y.node(j), d.entropy[j], d.distance2[j]])
        });
        out.csv_f64("entropy.csv", &["t", "y", "entropy", "distance2"], rows)?;
        summary.num("decompose.records", t.records.len() as f64);
        summary.num("decompose.worst_entropy_increase", t.worst_entropy_increase);
        summary.num("decompose.worst_distance_increase", t.worst_distance_increase);
        summary.num("decompose.worst_reconstruction_error", t.worst_reconstruction);
        summary.num("decompose.sandwich_violations", t.sandwich_violations as f64);
        summary.flag("decompose.entropy_nonincreasing", t.worst_entropy_increase <= 1e-8);
    }

    let traj = traj.into_result().map_err(ctx("simulate: transport run"))?;
    let last = traj.final_state.as_ref().expect("a completed run has a final state");
    let marginal = transport.marginal(last);
    let mean_trait = transport.mean_trait(last);
    summary.num("simulate.final_t", last.t);
    summary.num("simulate.final_rho", last.rho);
    summary.num("simulate.mean_trait", mean_trait);
    summary.flag("simulate.final_marginal_unimodal", is_unimodal(&marginal, 1e-9));
    Ok(SimOutcome { mean_trait, dy: grid.y.step() })
}

pub fn adaptive(cfg: &RunConfig, mode: Mode, out: &mut Output, summary: &mut Summary) -> Result<(), RunError> {
    let model = cfg.model(mode)?;
    let (x, y) = (cfg.x_axis(mode)?, cfg.y_axis(mode)?);
    let init = cfg.initial(mode)?;
    let solver = EigenSolver::new(model.clone(), x, cfg.eigen);
    let problem = LimitProblem::new(EigenLandscape::new(solver, init.u0.clone()), y).map_err(ctx("adaptive: landscape"))?;
    let t_final = match cfg.adaptive.t_final {
        Some(t) => t,
        None => cfg.t_final(mode)?,
    };
    let state = problem.trajectory(t_final, cfg.adaptive.dt).map_err(ctx("adaptive: canonical trajectory"))?;
    for w in &state.warnings {
        warn(summary, "adaptive", w);
    }
    let mut rows = Vec::with_capacity(state.ybar.len());
    for (k, &(t, ybar)) in state.ybar.iter().enumerate() {
        let rho = state.rho[k].1;
        let u = problem.u_grid(t, &state.rho)?;
        let integral = rho_integral(&state.rho, t, TimeRule::Trapezoid)?;
        let cp = problem
            .concentration_point(t, &u, integral, rho)
            .map_err(|e| e.context(format!("adaptive: concentration point at t = {t}")))?;
        rows.push(vec![t, ybar, state.lambda[k].1, rho, state.max_u[k].1, cp.ybar, cp.gradient_residual, cp.value_residual]);
    }
    out.csv_f64(
        "adaptive.csv",
        &["t", "ybar", "Lambda_ybar", "rho", "max_u", "ybar_grid", "gradient_residual", "value_residual"],
        rows,
    )?;
    let grad: Vec<f64> = (0..y.len())
        .into_par_iter()
        .map(|j| problem.landscape.grad_lambda(y.node(j)))
        .collect::<Result<_, _>>()
        .map_err(ctx("adaptive: grad Lambda"))?;
    let critical = problem.critical_points(&grad).map_err(ctx("adaptive: critical points"))?;
    out.csv(
        "adaptive_critical_points.csv",
        &["y", "kind", "second_difference"],
        critical
            .points
            .iter()
            .map(|p| vec![csv_num(p.y), format!("{:?}", p.kind).to_lowercase(), csv_num(p.second_difference)]),
    )?;
    let mono = rho_monotonicity_check(&state.rho);
    summary.flag("adaptive.lambda_nonincreasing", state.lambda_nonincreasing());
    summary.flag("adaptive.rho_nondecreasing", mono.ok);
    let dt = cfg.adaptive.dt;
    summary.flag("adaptive.sup_constraint", state.sup_constraint_holds(1e-6_f64.max(10.0 * dt * dt)));
    summary.num("adaptive.max_u", state.max_u.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max));
    if let Some((t, y)) = state.ybar.last() {
        summary.num("adaptive.final_t", *t);
        summary.num("adaptive.final_ybar", *y);
    }
    if let Some(e) = &state.stopped {
        warn(summary, "adaptive", &format!("trajectory stopped early: {e}"));
    }
    Ok(())
}

pub fn hjb(cfg: &RunConfig, mode: Mode, out: &mut Output, summary: &mut Summary) -> Result<(), RunError> {
    let model = cfg.model(mode)?;
    let x = cfg.x_axis(mode)?;
    let y = cfg.hjb_y_axis(mode)?;
    let kernel = cfg.kernel(mode)?;
    let init = cfg.initial(mode)?;
    let eps = cfg.hjb_eps(mode)?;
    let t_final = cfg.hjb_t_final(mode)?;
    let mut settings = cfg.hjb.settings();
    let steps = (t_final / settings.time_step(eps)).ceil().max(1.0) as usize;
    settings.record_every = steps.div_ceil(100).max(1);
    let problem = HjbProblem::new(model, x, y, kernel, eps, init.k0, settings, cfg.eigen).map_err(ctx("hjb: setup"))?;
    let u0 = init.u0_on(&y).map_err(ctx("hjb: initial datum"))?;
    eprintln!("hjb: eps = {eps}, {} trait nodes", y.len());
    let run = problem.solve(&u0, t_final).map_err(ctx("hjb: solve"))?;
    let rows = run.records.iter().flat_map(|s| {
        (0..s.u.len()).map(move |j| vec![s.t, y.node(j), s.u[j], s.dudt[j], s.eta[j]])
    });
    out.csv_f64("hjb.csv", &["t", "y", "U", "dUdt", "eta"], rows)?;
    summary.num("hjb.eps", eps);
    summary.num("hjb.R", run.r);
    summary.num("hjb.doublings", run.doublings as f64);
    summary.num("hjb.sup_dudt0", run.sup_dudt0);
    summary.num("hjb.max_sup_dudt", run.max_sup_dudt);
    summary.flag("hjb.a_priori_bound", run.a_priori_bound_holds());
    summary.flag("hjb.contraction", run.contraction_holds());
    summary.num("hjb.eta_bracket_violations", run.eta_violations as f64);

    if !cfg.hjb.eps_list.is_empty() {
        let n = y.len();
        let margin = (cfg.hjb.window_margin * n as f64).floor() as usize;
        let window = margin.max(1)..(n - margin).min(n - 1);
        let study = viscosity_limit_study(&problem, &u0, &cfg.hjb.eps_list, t_final, cfg.hjb.sample, window)
            .map_err(ctx("hjb: viscosity limit study"))?;
        let rows = study.d.iter().enumerate().map(|(k, d)| vec![study.eps[k], study.eps[k + 1], *d]);
        out.csv_f64("hjb_convergence.csv", &["eps_k", "eps_k1", "D_k"], rows)?;
        summary.flag("hjb.cauchy_gaps_decreasing", study.decreasing);
        summary.num("hjb.limit_residual", study.residual);
        summary.num("hjb.limit_residual_skipped", study.residual_skipped as f64);
    }
    Ok(())
}

/// Eigenelements, the PDE run with its decomposition, the limit dynamics and,
/// when a kernel is configured, the HJ solve.
pub fn full_report(cfg: &RunConfig, out: &mut Output, summary: &mut Summary) -> Result<(), RunError> {
    let mode = Mode::FullReport;
    let e = eigen(cfg, mode, out, summary)?;
    let sim = simulate(cfg, mode, out, summary, false, true)?;
    if let Some(j) = e.field.argmin_lambda() {
        let gap = (sim.mean_trait - e.field.y.node(j)).abs();
        summary.num("report.mean_trait_gap_to_argmin", gap);
        summary.flag("report.mean_trait_within_2dy", gap <= 2.0 * sim.dy);
    }
    let minima = e.critical.minima().count();
    summary.num("report.interior_minima", minima as f64);
    adaptive(cfg, mode, out, summary)?;
    if cfg.kernel.is_some() {
        hjb(cfg, mode, out, summary)?;
    }
    Ok(())
}
