//! Mutation kernels and their quadrature on a z-grid.

use serde::{Deserialize, Serialize};

use crate::quadrature::trapezoid_weights;
use crate::{Error, Result};

/// Half-width of the Gaussian support, in units of σ.
pub const GAUSSIAN_SUPPORT: f64 = 8.0;
pub const DEFAULT_Z_NODES: usize = 161;

/// User-facing description of a mutation kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelSpec {
    Gaussian {
        sigma: f64,
        #[serde(default)]
        nodes: Option<usize>,
    },
    Uniform {
        h: f64,
        #[serde(default)]
        nodes: Option<usize>,
    },
    Delta,
    Tabulated {
        z: Vec<f64>,
        density: Vec<f64>,
        #[serde(default)]
        p_max: Option<f64>,
    },
}

/// A kernel discretized on its z-grid: nodes and combined quadrature weights
/// `M(z_q)·w_q`, normalized so they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationKernel {
    spec: KernelSpec,
    z: Vec<f64>,
    weights: Vec<f64>,
    p_max: f64,
}

impl MutationKernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        let (z, density, dz, p_max) = match &spec {
            KernelSpec::Gaussian { sigma, nodes } => {
                positive("gaussian sigma", *sigma)?;
                let n = odd_nodes(nodes.unwrap_or(DEFAULT_Z_NODES))?;
                let half = GAUSSIAN_SUPPORT * sigma;
                let dz = 2.0 * half / (n - 1) as f64;
                let z: Vec<f64> = (0..n).map(|q| -half + q as f64 * dz).collect();
                let density = z
                    .iter()
                    .map(|z| (-0.5 * (z / sigma).powi(2)).exp())
                    .collect();
                (z, density, dz, 2.0 / sigma)
            }
            KernelSpec::Uniform { h, nodes } => {
                positive("uniform half-width", *h)?;
                let n = odd_nodes(nodes.unwrap_or(DEFAULT_Z_NODES))?;
                let dz = 2.0 * h / (n - 1) as f64;
                let z: Vec<f64> = (0..n).map(|q| -h + q as f64 * dz).collect();
                (z, vec![1.0; n], dz, 50.0 / h)
            }
            KernelSpec::Delta => (vec![0.0], vec![1.0], 1.0, f64::INFINITY),
            KernelSpec::Tabulated { z, density, p_max } => {
                if z.len() != density.len() || z.len() < 2 {
                    return Err(Error::Domain(
                        "tabulated kernel needs matching z and density arrays of length >= 2"
                            .into(),
                    ));
                }
                let dz = z[1] - z[0];
                let uniform = z
                    .windows(2)
                    .all(|w| ((w[1] - w[0]) - dz).abs() <= 1e-9 * dz.abs().max(1.0));
                if !(dz > 0.0) || !uniform {
                    return Err(Error::Domain(
                        "tabulated kernel z-grid must be uniform and increasing".into(),
                    ));
                }
                if let Some(q) = density.iter().position(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::Domain(format!(
                        "tabulated kernel density invalid at z = {}",
                        z[q]
                    )));
                }
                (z.clone(), density.clone(), dz, p_max.unwrap_or(f64::INFINITY))
            }
        };
        let trap = if z.len() == 1 {
            vec![1.0]
        } else {
            trapezoid_weights(z.len(), dz)
        };
        let raw: Vec<f64> = density.iter().zip(&trap).map(|(m, w)| m * w).collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("kernel has zero mass".into()));
        }
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(Self {
            spec,
            z,
            weights,
            p_max,
        })
    }

    pub fn delta() -> Self {
        Self::new(KernelSpec::Delta).expect("delta kernel")
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelSpec::Gaussian { sigma, nodes: None })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[f64] {
        &self.z
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn is_delta(&self) -> bool {
        self.z.len() == 1 && self.z[0] == 0.0
    }

    /// Quadrature of `M(z)·weight(z)` over the z-grid.
    pub fn quadrature(&self, mut weight: impl FnMut(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&z, &w) in self.z.iter().zip(&self.weights) {
            let v = weight(z);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "kernel weight".into(),
                    x: z,
                    y: f64::NAN,
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Exponential moment `η(p) = ∫ M(z) e^{p z} dz`.
    pub fn eta(&self, p: f64) -> Result<f64> {
        if p.abs() > self.p_max {
            return Err(Error::Domain(format!(
                "momentum |p| = {} exceeds p_max = {}",
                p.abs(),
                self.p_max
            )));
        }
        self.quadrature(|z| (p * z).exp())
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be positive, got {v}")))
    }
}

fn odd_nodes(n: usize) -> Result<usize> {
    if n < 3 {
        return Err(Error::Domain(format!("kernel needs at least 3 nodes, got {n}")));
    }
    Ok(if n % 2 == 0 { n + 1 } else { n })
}
