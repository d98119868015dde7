//! Principal eigenelements of the one-step column operator of the transport scheme.
//!
//! Without competition one scheme step maps a trait column `m` to `L m` with
//!
//! ```text
//! (L m)_0 = Σ_{i≥1} w_i b_i m_i / A_0,
//! (L m)_i = [m_i − c (A_i m_i − A_{i−1} m_{i−1})] / (1 + a d_i),   i ≥ 1,
//! ```
//!
//! where `a = Δt/ε` and `c = a/Δx`. Its Perron root `μ` and eigenvectors are the
//! discrete counterparts of `(Λ, Q, Φ)`, with `Λ_h = −ln(μ)/a`.

use crate::model::Column;
use crate::quadrature::trapezoid_weights;
use crate::{Error, Result};

/// Weights `w_i` of the birth sum at the age boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryWeights {
    /// `w_i = Δx`.
    #[default]
    Quadrature,
    /// `w_i = 1`.
    Literal,
}

impl BoundaryWeights {
    pub fn weight(self, dx: f64) -> f64 {
        match self {
            BoundaryWeights::Quadrature => dx,
            BoundaryWeights::Literal => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeEigen {
    pub mu: f64,
    /// `−ln(μ)/a`.
    pub lambda_h: f64,
    /// Right eigenvector, normalized by `Σ w_i b_i Q_i = 1`.
    pub q: Vec<f64>,
    /// Left eigenvector as a density against trapezoid weights, normalized so
    /// that the trapezoid integral of `Q Φ` is 1.
    pub phi: Vec<f64>,
    /// Left eigenvector as nodal weights: `phi_weights[i] = τ_i Φ_i`.
    pub phi_weights: Vec<f64>,
}

/// Scheme eigenelements of one column for `a = Δt/ε` and courant number `c = a/Δx`.
pub fn scheme_eigen(col: &Column, a: f64, c: f64, weights: BoundaryWeights) -> Result<SchemeEigen> {
    let n = col.len();
    if n < 2 {
        return Err(Error::Grid("scheme eigenproblem needs at least two age nodes".into()));
    }
    if col.is_sterile() {
        return Err(Error::Sterile { y: col.y });
    }
    let w = weights.weight(col.h);
    let denom: Vec<f64> = col.d.iter().map(|d| 1.0 + a * d).collect();
    let diag: Vec<f64> = (0..n).map(|i| (1.0 - c * col.a[i]) / denom[i]).collect();
    if let Some(i) = diag.iter().position(|&v| v < 0.0) {
        return Err(Error::Grid(format!(
            "scheme column operator is not positive at age node {i}: CFL violated"
        )));
    }
    let floor = diag[1..].iter().copied().fold(0.0, f64::max);

    // Σ w b q(μ) − μ A_0, strictly decreasing for μ above every diagonal entry.
    let excess = |mu: f64| -> f64 {
        let mut q = 1.0;
        let mut sum = 0.0;
        for i in 1..n {
            q *= c * col.a[i - 1] / (mu * denom[i] - 1.0 + c * col.a[i]);
            sum += w * col.b[i] * q;
        }
        sum - mu * col.a[0]
    };

    let mut lo = floor;
    let mut hi = floor.max(1.0);
    let mut expansions = 0;
    while excess(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(Error::BracketExpansion { y: col.y, eta: 1.0, lo, hi });
        }
    }
    if lo == floor && floor > 0.0 {
        let probe = floor * (1.0 + 1e-15) + f64::MIN_POSITIVE;
        if excess(probe) <= 0.0 {
            return Err(Error::Accuracy {
                y: col.y,
                message: "scheme operator is reducible: no Perron root above the diagonal".into(),
            });
        }
    }
    while hi - lo > 2.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);

    let mut q = vec![0.0; n];
    q[0] = 1.0;
    for i in 1..n {
        q[i] = c * col.a[i - 1] * q[i - 1] / (mu * denom[i] - 1.0 + c * col.a[i]);
    }
    let births: f64 = (1..n).map(|i| w * col.b[i] * q[i]).sum();
    for v in &mut q {
        *v /= births;
    }

    let mut left = vec![0.0; n];
    left[0] = 1.0;
    let mut next = 0.0;
    for j in (1..n).rev() {
        let from_next = if j + 1 < n { next * c * col.a[j] / denom[j + 1] } else { 0.0 };
        left[j] = (w * col.b[j] / col.a[0] + from_next) / (mu - diag[j]);
        next = left[j];
    }
    let pairing: f64 = left.iter().zip(&q).map(|(l, q)| l * q).sum();
    let phi_weights: Vec<f64> = left.iter().map(|l| l / pairing).collect();
    let tau = trapezoid_weights(n, col.h);
    let phi = phi_weights.iter().zip(&tau).map(|(p, t)| p / t).collect();

    Ok(SchemeEigen {
        mu,
        lambda_h: -mu.ln() / a,
        q,
        phi,
        phi_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Axis, CoefficientModel};

    fn apply(col: &Column, a: f64, c: f64, w: f64, m: &[f64]) -> Vec<f64> {
        let n = m.len();
        let mut out = vec![0.0; n];
        out[0] = (1..n).map(|i| w * col.b[i] * m[i]).sum::<f64>() / col.a[0];
        for i in 1..n {
            out[i] = (m[i] - c * (col.a[i] * m[i] - col.a[i - 1] * m[i - 1])) / (1.0 + a * col.d[i]);
        }
        out
    }

    fn apply_transpose(col: &Column, a: f64, c: f64, w: f64, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut s = 0.0;
            if j >= 1 {
                s += v[0] * w * col.b[j] / col.a[0];
                s += v[j] * (1.0 - c * col.a[j]) / (1.0 + a * col.d[j]);
            }
            if j + 1 < n {
                s += v[j + 1] * c * col.a[j] / (1.0 + a * col.d[j + 1]);
            }
            out[j] = s;
        }
        out
    }

    #[test]
    fn eigenvectors_satisfy_both_eigen_equations() {
        let x = Axis::new(0.0, 1.0, 90).unwrap();
        let model = CoefficientModel::selection_example();
        let (a, dx) = (5e-5 / 5e-3, x.step());
        let c = a / dx;
        for y in [0.3, 1.2, 2.5] {
            let col = model.column(&x, y).unwrap();
            let e = scheme_eigen(&col, a, c, BoundaryWeights::Quadrature).unwrap();
            let lq = apply(&col, a, c, dx, &e.q);
            for (l, q) in lq.iter().zip(&e.q) {
                assert!((l - e.mu * q).abs() <= 1e-12 * q.abs().max(1e-3), "y={y}");
            }
            let lt = apply_transpose(&col, a, c, dx, &e.phi_weights);
            for (l, p) in lt.iter().zip(&e.phi_weights) {
                assert!((l - e.mu * p).abs() <= 1e-12 * p.abs().max(1e-3), "y={y}");
            }
            let pairing: f64 = e.phi_weights.iter().zip(&e.q).map(|(a, b)| a * b).sum();
            assert!((pairing - 1.0).abs() < 1e-13);
            assert!(e.q.iter().all(|v| *v > 0.0) && e.phi.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn selection_example_discrete_root_at_peak_trait() {
        let x = Axis::new(0.0, 1.0, 90).unwrap();
        let col = CoefficientModel::selection_example().column(&x, 1.2).unwrap();
        let a = 5e-5 / 5e-3;
        let e = scheme_eigen(&col, a, a / x.step(), BoundaryWeights::Quadrature).unwrap();
        assert!((e.mu - 1.07225).abs() < 1e-4, "mu = {}", e.mu);
    }

    #[test]
    fn discrete_eigenvalue_converges_to_continuous_one() {
        let model = CoefficientModel::constant(1.0, 2.0, 1.0);
        let mut errs = Vec::new();
        for cells in [200, 400, 800] {
            let x = Axis::new(0.0, 20.0, cells).unwrap();
            let col = model.column(&x, 0.0).unwrap();
            let a = 0.5 * x.step();
            let e = scheme_eigen(&col, a, a / x.step(), BoundaryWeights::Quadrature).unwrap();
            errs.push((e.lambda_h + 1.0).abs());
        }
        assert!(errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8, "{errs:?}");
    }
}
