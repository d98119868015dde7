//! Quadrature rules on uniform grids.
//!
//! Two rules are used across the crate. The composite trapezoid rule is linear
//! in the integrand and is the rule every scheme-coupled integral uses (ρ, the
//! birth sum, the relative entropy). The exponentially fitted rule treats each
//! cell as an exponential between its two end values; it is exact on
//! `c·exp(kx)`, second order otherwise, and is the rule of the continuous
//! eigenproblem, whose integrands are all of the form `h(x)·exp(-G(x))`.

use serde::{Deserialize, Serialize};

/// Selects how an integral over the age axis is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XRule {
    Trapezoid,
    ExpFitted,
}

impl XRule {
    pub fn integrate(self, values: &[f64], h: f64) -> f64 {
        match self {
            XRule::Trapezoid => trapezoid(values, h),
            XRule::ExpFitted => exp_fitted(values, h),
        }
    }
}

pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (0.5 * (values[0] + values[n - 1]) + inner)
        }
    }
}

/// Trapezoid weights for `n` nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n >= 2 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    } else if n == 1 {
        w[0] = 0.0;
    }
    w
}

/// Running trapezoid integral, starting at 0 on the first node.
pub fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    if let Some(&first) = values.first() {
        out.push(0.0);
        let mut prev = first;
        for &v in &values[1..] {
            acc += 0.5 * h * (prev + v);
            out.push(acc);
            prev = v;
        }
    }
    out
}

/// `(e^r - 1)/r`, continuous at 0.
pub(crate) fn phi1(r: f64) -> f64 {
    if r.abs() < 1e-4 {
        1.0 + r * (0.5 + r * (1.0 / 6.0 + r / 24.0))
    } else {
        r.exp_m1() / r
    }
}

/// Derivative of [`phi1`].
pub(crate) fn phi1_prime(r: f64) -> f64 {
    if r.abs() < 1e-4 {
        0.5 + r * (1.0 / 3.0 + r * (0.125 + r / 30.0))
    } else {
        (r.exp() * (r - 1.0) + 1.0) / (r * r)
    }
}

/// Integral over one cell of width `h` of the exponential through `(0, a)` and
/// `(h, b)`. Falls back to the trapezoid when the end values are not both positive.
pub fn exp_fitted_cell(a: f64, b: f64, h: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        let r = (b / a).ln();
        h * a * phi1(r)
    } else {
        0.5 * h * (a + b)
    }
}

pub fn exp_fitted(values: &[f64], h: f64) -> f64 {
    values
        .windows(2)
        .map(|w| exp_fitted_cell(w[0], w[1], h))
        .sum()
}

/// Running exponentially fitted integral from each node to the last node.
pub fn exp_fitted_tail(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in (0..n.saturating_sub(1)).rev() {
        out[i] = out[i + 1] + exp_fitted_cell(values[i], values[i + 1], h);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_on_linear() {
        let h = 0.25;
        let v: Vec<f64> = (0..5).map(|i| 1.0 + 2.0 * i as f64 * h).collect();
        assert!((trapezoid(&v, h) - 2.0).abs() < 1e-15);
        let w = trapezoid_weights(5, h);
        let s: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((s - 2.0).abs() < 1e-15);
    }

    #[test]
    fn exp_fitted_is_exact_on_exponentials() {
        let h = 0.1;
        let v: Vec<f64> = (0..=100).map(|i| (-3.0 * i as f64 * h).exp()).collect();
        let exact = (1.0 - (-30.0f64).exp()) / 3.0;
        assert!((exp_fitted(&v, h) - exact).abs() < 1e-14);
        let tail = exp_fitted_tail(&v, h);
        assert!((tail[0] - exact).abs() < 1e-14);
        assert_eq!(tail[100], 0.0);
    }

    #[test]
    fn exp_fitted_is_second_order_on_smooth_functions() {
        let f = |x: f64| 1.0 / (1.0 + x * x);
        let exact = 1.0f64.atan();
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let v: Vec<f64> = (0..=n).map(|i| f(i as f64 * h)).collect();
            (exp_fitted(&v, h) - exact).abs()
        };
        let ratio = err(20) / err(40);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn phi1_series_matches_closed_form() {
        for r in [-2e-4f64, -5e-5, 0.0, 5e-5, 2e-4] {
            let closed = if r == 0.0 { 1.0 } else { r.exp_m1() / r };
            assert!((phi1(r) - closed).abs() < 1e-15);
        }
        let h = 1e-6;
        for r in [-1.0, -1e-3, 3e-5, 0.7] {
            let fd = (phi1(r + h) - phi1(r - h)) / (2.0 * h);
            assert!((phi1_prime(r) - fd).abs() < 1e-8, "r={r}");
        }
    }
}
