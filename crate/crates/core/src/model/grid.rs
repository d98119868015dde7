//! Uniform age and trait grids, time step and scale parameter.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A uniform 1-D axis `[min, max]` split into `cells` equal cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, cells: usize) -> Result<Self> {
        if cells == 0 || !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Grid(format!(
                "axis [{min}, {max}] with {cells} cells is empty"
            )));
        }
        Ok(Self { min, max, cells })
    }

    /// Axis with spacing `h`; `(max - min)/h` must be an integer up to rounding.
    pub fn with_step(min: f64, max: f64, h: f64) -> Result<Self> {
        let cells = ((max - min) / h).round();
        if !(cells >= 1.0) || ((max - min) / h - cells).abs() > 1e-6 {
            return Err(Error::Grid(format!(
                "step {h} does not divide [{min}, {max}]"
            )));
        }
        Self::new(min, max, cells as usize)
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.cells as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i == self.cells {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// Index of the node nearest to `v`, clamped to the axis.
    pub fn nearest(&self, v: f64) -> usize {
        let k = ((v - self.min) / self.step()).round();
        k.clamp(0.0, self.cells as f64) as usize
    }
}

/// The full discretization used by the transport scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x: Axis,
    pub y: Axis,
    pub dt: f64,
    pub eps: f64,
}

impl Grid {
    /// Builds the grid, rejecting time steps that break `Δt·A∞ ≤ ε·Δx`.
    pub fn new(x: Axis, y: Axis, dt: f64, eps: f64, a_inf: f64) -> Result<Self> {
        if !(dt > 0.0) || !(eps > 0.0) {
            return Err(Error::Grid(format!(
                "dt and eps must be positive (dt = {dt}, eps = {eps})"
            )));
        }
        let lhs = dt * a_inf;
        let rhs = eps * x.step();
        if lhs > rhs * (1.0 + 1e-12) {
            return Err(Error::Grid(format!(
                "CFL violated: dt*A_inf = {lhs:e} > eps*dx = {rhs:e}"
            )));
        }
        Ok(Self { x, y, dt, eps })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.x.len()
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.y.len()
    }

    /// `Δt/ε`.
    #[inline]
    pub fn a(&self) -> f64 {
        self.dt / self.eps
    }

    /// Courant number `Δt/(εΔx)`.
    #[inline]
    pub fn courant(&self) -> f64 {
        self.a() / self.x.step()
    }

    /// Number of steps to reach `t`, which must be a multiple of `Δt` up to rounding.
    pub fn steps_to(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if t < 0.0 || (t / self.dt - k).abs() > 1e-6 {
            return Err(Error::Grid(format!(
                "time {t} is not a multiple of dt = {}",
                self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Flat index of node `(i, j)`; each trait column is contiguous.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_nodes_hit_the_endpoints() {
        let a = Axis::with_step(0.0, 4.0, 0.1).unwrap();
        assert_eq!(a.cells, 40);
        assert_eq!(a.node(0), 0.0);
        assert_eq!(a.node(40), 4.0);
        assert!((a.node(13) - 1.3).abs() < 1e-15);
        assert_eq!(a.nearest(1.26), 13);
        assert!(Axis::with_step(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn cfl_guard() {
        let x = Axis::new(0.0, 1.0, 90).unwrap();
        let y = Axis::new(0.0, 4.0, 40).unwrap();
        assert!(Grid::new(x, y, 5e-5, 5e-3, 1.0).is_ok());
        assert!(Grid::new(x, y, 6e-5, 5e-3, 1.0).is_err());
        assert!(Grid::new(x, y, 5e-5, 5e-3, 1.2).is_err());
    }

    #[test]
    fn step_count() {
        let x = Axis::new(0.0, 1.0, 90).unwrap();
        let y = Axis::new(0.0, 4.0, 40).unwrap();
        let g = Grid::new(x, y, 5e-5, 5e-3, 1.0).unwrap();
        assert_eq!(g.steps_to(1.5).unwrap(), 30_000);
        assert_eq!(g.steps_to(0.0).unwrap(), 0);
        assert!(g.steps_to(1.5e-5).is_err());
    }
}
