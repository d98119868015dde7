use super::*;
use crate::model::KernelSpec;

fn constant_solver(cells: usize, x_max: f64, tail: TailClosure) -> EigenSolver {
    let settings = EigenSettings { tail, ..EigenSettings::default() };
    EigenSolver::new(
        CoefficientModel::constant(1.0, 2.0, 1.0),
        Axis::new(0.0, x_max, cells).unwrap(),
        settings,
    )
}

fn selection_solver() -> EigenSolver {
    EigenSolver::new(
        CoefficientModel::selection_example(),
        Axis::new(0.0, 1.0, 90).unwrap(),
        EigenSettings::default(),
    )
}

#[test]
fn fitness_integrand_values() {
    let s = constant_solver(40, 1.0, TailClosure::Truncated);
    let f = s.fitness_integrand(0.0, 0.0).unwrap();
    assert_eq!(f[0], 2.0);
    assert!((f[40] - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
    let f = selection_solver().fitness_integrand(1.0, 3.7).unwrap();
    assert_eq!(f[0], 10.0);
}

#[test]
fn fitness_integrand_overflow_guard() {
    let s = constant_solver(1999, 40.0, TailClosure::Truncated);
    assert!(matches!(s.fitness_integrand(0.0, 30.0), Err(Error::Overflow { .. })));
}

#[test]
fn capital_f_closed_forms() {
    let s = constant_solver(1999, 40.0, TailClosure::Truncated);
    assert!((s.capital_f(0.0, 0.0).unwrap() - 2.0).abs() < 1e-8);
    assert!((s.capital_f(0.0, -1.0).unwrap() - 1.0).abs() < 1e-8);
    let sel = selection_solver();
    for y in [0.5, 1.3, 3.0] {
        for l in [-10.0, 0.0, 5.0] {
            assert!(sel.capital_f(y, l + 1e-3).unwrap() > sel.capital_f(y, l).unwrap());
        }
    }
}

#[test]
fn capital_f_derivative_matches_finite_difference() {
    for rule in [XRule::ExpFitted, XRule::Trapezoid] {
        for tail in [TailClosure::Truncated, TailClosure::Exponential] {
            let settings = EigenSettings { rule, tail, ..EigenSettings::default() };
            let s = EigenSolver::new(
                CoefficientModel::selection_example(),
                Axis::new(0.0, 4.0, 360).unwrap(),
                settings,
            );
            let p = s.problem(1.1).unwrap();
            let l = -3.0;
            let (_, df) = p.capital_f_with_derivative(l, &settings).unwrap();
            let h = 1e-5;
            let fd = (p.capital_f(l + h, &settings).unwrap() - p.capital_f(l - h, &settings).unwrap()) / (2.0 * h);
            assert!((df - fd).abs() < 1e-7 * df.abs(), "{rule:?} {tail:?}: {df} vs {fd}");
        }
    }
}

#[test]
fn constant_model_eigenvalues() {
    for tail in [TailClosure::Truncated, TailClosure::Exponential] {
        let s = constant_solver(1999, 40.0, tail);
        let l1 = s.solve_lambda(0.0, 1.0).unwrap().lambda;
        let l2 = s.solve_lambda(0.0, 2.0).unwrap().lambda;
        assert!((l1 + 1.0).abs() < 1e-10, "{l1}");
        assert!((l2 + 3.0).abs() < 1e-10, "{l2}");
    }
}

#[test]
fn implicit_function_identity() {
    let s = selection_solver();
    for j in 1..=40 {
        let y = 0.1 * j as f64;
        let p = s.problem(y).unwrap();
        for eta in [0.5, 1.0, 2.0] {
            let root = p.solve(eta, &s.settings).unwrap();
            let f = p.capital_f(root.lambda, &s.settings).unwrap();
            assert!((f - 1.0 / eta).abs() <= 1e-12 * (1.0 / eta).max(1.0), "y={y} eta={eta}");
        }
    }
}

#[test]
fn eigenvalue_decreases_with_eta() {
    let s = selection_solver();
    for j in 1..=40 {
        let y = 0.1 * j as f64;
        let l: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&e| s.solve_lambda(y, e).unwrap().lambda).collect();
        assert!(l[0] > l[1] && l[1] > l[2], "y={y}: {l:?}");
    }
}

#[test]
fn growth_bounds_enclose_minus_lambda() {
    let s = EigenSolver::new(
        CoefficientModel::parse("1", "3+x/(1+x)", "1+0.5*x/(1+x)").unwrap(),
        Axis::new(0.0, 30.0, 1500).unwrap(),
        EigenSettings { tail: TailClosure::Exponential, ..EigenSettings::default() },
    );
    let x = s.x;
    let y = Axis::new(0.0, 1.0, 4).unwrap();
    let report = s.model.validate(&x, &y).unwrap();
    let (lo, hi) = report.growth_bounds().unwrap();
    let l = s.solve_lambda(0.5, 1.0).unwrap().lambda;
    assert!(lo <= -l && -l <= hi, "{lo} <= {} <= {hi}", -l);
}

#[test]
fn sterile_column_is_reported() {
    assert!(matches!(selection_solver().solve_lambda(0.0, 1.0), Err(Error::Sterile { .. })));
}

#[test]
fn constant_model_eigenfunctions() {
    let s = constant_solver(1999, 40.0, TailClosure::Exponential);
    let q = s.eigenfunction_q(0.0, 1.0).unwrap();
    let phi = s.dual_phi(0.0, 1.0).unwrap();
    for i in 0..s.x.len() {
        let x = s.x.node(i);
        assert!((q[i] - (-2.0 * x).exp()).abs() < 1e-7, "Q at {x}");
        assert!((phi[i] - 2.0).abs() < 1e-7, "Phi at {x}: {}", phi[i]);
    }
    let fine = constant_solver(4000, 40.0, TailClosure::Exponential);
    let q = fine.eigenfunction_q(0.0, 1.0).unwrap();
    assert_eq!(fine.x.node(100), 1.0);
    assert!((q[100] - 0.135335).abs() < 1e-6);
}

#[test]
fn normalizations_hold_on_selection_example() {
    let s = selection_solver();
    let bvals = |y: f64| s.model.column(&s.x, y).unwrap().b;
    for y in [0.5, 1.3, 2.0] {
        let q = s.eigenfunction_q(y, 1.0).unwrap();
        let phi = s.dual_phi(y, 1.0).unwrap();
        let bq: Vec<f64> = bvals(y).iter().zip(&q).map(|(b, q)| b * q).collect();
        assert!((XRule::ExpFitted.integrate(&bq, s.x.step()) - 1.0).abs() < 1e-8);
        let qphi: Vec<f64> = q.iter().zip(&phi).map(|(a, b)| a * b).collect();
        assert!((XRule::ExpFitted.integrate(&qphi, s.x.step()) - 1.0).abs() < 1e-8);
        assert!(q.iter().all(|v| *v > 0.0));
        let last = qphi.len() - 1;
        assert!(qphi[last] < 1e-5 * qphi[0]);
    }
}

#[test]
fn q_decays_below_threshold_on_long_age_axis() {
    let s = EigenSolver::new(
        CoefficientModel::selection_example(),
        Axis::new(0.0, 4.0, 360).unwrap(),
        EigenSettings::default(),
    );
    let q = s.eigenfunction_q(0.5, 1.0).unwrap();
    assert!(q[q.len() - 1] / q[0] < 1e-6);
}

#[test]
fn dual_equation_residual_is_small() {
    // −A Φ' + (d − Λ) Φ = η b Φ(0)
    let s = EigenSolver::new(
        CoefficientModel::selection_example(),
        Axis::new(0.0, 2.0, 4000).unwrap(),
        EigenSettings::default(),
    );
    let y = 1.1;
    let col = s.model.column(&s.x, y).unwrap();
    let root = s.solve_lambda(y, 1.0).unwrap();
    let phi = s.dual_phi(y, 1.0).unwrap();
    let h = s.x.step();
    let mut worst: f64 = 0.0;
    for i in 1..phi.len() - 1 {
        let dphi = (phi[i + 1] - phi[i - 1]) / (2.0 * h);
        let r = -col.a[i] * dphi + (col.d[i] - root.lambda) * phi[i] - col.b[i] * phi[0];
        worst = worst.max(r.abs() / phi[0]);
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn eigen_residual_is_first_order() {
    let residuals = |model: &CoefficientModel, x_max: f64, y: f64, bound: bool| -> Vec<f64> {
        [90, 180, 360]
            .iter()
            .map(|&cells| {
                let x = Axis::new(0.0, x_max, cells).unwrap();
                let settings = EigenSettings::default();
                let col = model.column(&x, y).unwrap();
                let p = ColumnProblem::new(&col);
                let root = p.solve(1.0, &settings).unwrap();
                let q = p.eigenfunction(&root, 1.0, &settings).unwrap();
                let r = p.transport_residual(&col, root.lambda, &q);
                let qmax = q.iter().copied().fold(0.0, f64::max);
                if bound {
                    assert!(r <= 5.0 * x.step() * qmax, "cells={cells}: {r}");
                }
                r
            })
            .collect()
    };
    let constant = residuals(&CoefficientModel::constant(1.0, 2.0, 1.0), 10.0, 0.0, true);
    let selection = residuals(&CoefficientModel::selection_example(), 1.0, 1.2, false);
    for res in [constant, selection] {
        assert!(res[0] / res[1] >= 1.8 && res[1] / res[2] >= 1.8, "{res:?}");
    }
}

#[test]
fn y_independent_model_has_zero_gradient() {
    let s = constant_solver(400, 20.0, TailClosure::Truncated);
    let (g, d_eta) = s.grad_lambda(0.7, 1.0).unwrap();
    assert!(g.abs() < 1e-9);
    assert!(d_eta < 0.0);
}

#[test]
fn gradient_matches_finite_difference_of_eigenvalue() {
    let s = selection_solver();
    for y in [0.4, 1.0, 1.3, 2.2, 3.5] {
        let (g, d_eta) = s.grad_lambda(y, 1.0).unwrap();
        let h = 1e-4;
        let fd = (s.solve_lambda(y + h, 1.0).unwrap().lambda - s.solve_lambda(y - h, 1.0).unwrap().lambda) / (2.0 * h);
        assert!((g - fd).abs() < 1e-5, "y={y}: {g} vs {fd}");
        assert!(d_eta < 0.0);
    }
}

#[test]
fn field_on_selection_grid() {
    let s = selection_solver();
    let y = Axis::new(0.0, 4.0, 40).unwrap();
    let field = s.field(&y, 1.0).unwrap();
    assert!(field.nodes[0].is_none());
    let j = field.argmin_lambda().unwrap();
    assert!(j > 0 && j < 40);
    assert!((y.node(j) - 1.3).abs() < 1e-12, "argmin at {}", y.node(j));
    assert!(field.nodes.iter().flatten().all(|n| n.d_eta_lambda < 0.0));
    assert!(field.warnings.iter().any(|w| w.contains("one-sided")));
}

#[test]
fn eta_of_p_values() {
    let k = MutationKernel::gaussian(1.0).unwrap();
    assert!((eta_of_p(&k, 0.0).unwrap() - 1.0).abs() < 1e-10);
    assert!((eta_of_p(&k, 1.0).unwrap() - 1.648721).abs() < 1e-6);
    assert!(eta_of_p(&k, 3.0).is_err());
}

#[test]
fn hamiltonian_at_zero_momentum() {
    let k = MutationKernel::new(KernelSpec::Gaussian { sigma: 1.0, nodes: None }).unwrap();
    let h = Hamiltonian::new(constant_solver(1999, 40.0, TailClosure::Exponential), k.clone());
    assert!((h.eval(0.3, 0.0).unwrap() - 1.0).abs() < 1e-9);
    let sel = Hamiltonian::new(selection_solver(), k);
    let l = sel.solver.solve_lambda(1.0, 1.0).unwrap().lambda;
    assert_eq!(sel.eval(1.0, 0.0).unwrap(), -l);
}

#[test]
fn hamiltonian_is_convex_in_momentum() {
    let k = MutationKernel::gaussian(1.0).unwrap();
    let ham = Hamiltonian::new(selection_solver(), k);
    let h = 1e-3;
    for y in [0.3, 0.8, 1.2] {
        for i in 0..9 {
            let p = -1.9 + 0.45 * i as f64;
            let v = ham.eval_many(y, &[p - h, p, p + h]).unwrap();
            assert!((v[0] - 2.0 * v[1] + v[2]) / (h * h) >= -1e-6);
        }
    }
}
