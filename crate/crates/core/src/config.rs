//! Run configuration read from TOML files.
//!
//! Every section is a flat table of keys:
//!
//! ```toml
//! [run]
//! mode = "simulate"
//! T = 1.5
//!
//! [model]
//! A = "1"
//! b = "10*y/(1+x^2)"
//! d = "y^3*(2+x/3)"
//!
//! [grid]
//! x_max = 1.0
//! x_cells = 90
//! y_min = 0.0
//! y_max = 4.0
//! y_cells = 40
//! dt = 5e-5
//! eps = 5e-3
//!
//! [initial]
//! u0 = "-(y-0.5)^2/2"
//! p0 = "exp(-0.8*x)"
//! k0 = 3.5
//! mass = 1000.0
//! ```
//!
//! The sections a mode needs are checked by [`RunConfig::validate`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eigen::{BoundaryWeights, EigenSettings};
use crate::hjb::HjbSettings;
use crate::model::{Axis, CoefficientModel, Grid, InitialData, KernelSpec, MutationKernel};
use crate::transport::{Competition, SchemeOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Eigen,
    Simulate,
    SimulateMutation,
    Decompose,
    Adaptive,
    Hjb,
    FullReport,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Eigen,
        Mode::Simulate,
        Mode::SimulateMutation,
        Mode::Decompose,
        Mode::Adaptive,
        Mode::Hjb,
        Mode::FullReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Eigen => "eigen",
            Mode::Simulate => "simulate",
            Mode::SimulateMutation => "simulate-mutation",
            Mode::Decompose => "decompose",
            Mode::Adaptive => "adaptive",
            Mode::Hjb => "hjb",
            Mode::FullReport => "full-report",
        }
    }

    /// Modes that time-step the renewal equation.
    pub fn is_pde(self) -> bool {
        matches!(self, Mode::Simulate | Mode::SimulateMutation | Mode::Decompose | Mode::FullReport)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config { path: "run.mode".into(), message: format!("unknown mode `{s}`") })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Option<Mode>,
    /// Final time.
    #[serde(rename = "T")]
    pub t_final: Option<f64>,
    pub out: Option<PathBuf>,
    /// Snapshots are written at multiples of this interval up to `T`.
    pub snapshot_interval: Option<f64>,
    /// Explicit snapshot times; take precedence over the interval.
    pub snapshots: Option<Vec<f64>>,
    /// Birth sum with unit weights instead of `Δx`.
    pub paper_literal_boundary: bool,
    pub competition: Competition,
    /// Record the decomposition every this many steps.
    pub decompose_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: None,
            t_final: None,
            out: None,
            snapshot_interval: None,
            snapshots: None,
            paper_literal_boundary: false,
            competition: Competition::default(),
            decompose_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_max: f64,
    /// Number of age cells `M`.
    pub x_cells: usize,
    #[serde(default)]
    pub y_min: f64,
    pub y_max: f64,
    /// Number of trait cells `N`.
    pub y_cells: usize,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSection {
    /// Step of the canonical equation.
    pub dt: f64,
    /// Defaults to `run.T`.
    pub t_final: Option<f64>,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        Self { dt: 1e-3, t_final: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbSection {
    /// Defaults to `grid.eps`.
    pub eps: Option<f64>,
    /// Defaults to `run.T`.
    pub t_final: Option<f64>,
    /// Trait window of the HJ solve; defaults to the grid's trait axis.
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    pub y_cells: Option<usize>,
    pub dt: Option<f64>,
    pub r: f64,
    pub max_doublings: usize,
    pub cache_resolution: f64,
    /// Decreasing ε sequence of the convergence study; empty to skip it.
    pub eps_list: Vec<f64>,
    /// Comparison interval of the convergence study.
    pub sample: f64,
    /// Fraction of trait nodes dropped at each end of the comparison window.
    pub window_margin: f64,
}

impl Default for HjbSection {
    fn default() -> Self {
        let s = HjbSettings::default();
        Self {
            eps: None,
            t_final: None,
            y_min: None,
            y_max: None,
            y_cells: None,
            dt: None,
            r: s.r,
            max_doublings: s.max_doublings,
            cache_resolution: s.cache_resolution,
            eps_list: Vec::new(),
            sample: 0.1,
            window_margin: 0.2,
        }
    }
}

impl HjbSection {
    pub fn settings(&self) -> HjbSettings {
        HjbSettings {
            dt: self.dt,
            r: self.r,
            max_doublings: self.max_doublings,
            cache_resolution: self.cache_resolution,
            record_every: 1,
        }
    }
}

/// A parsed configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub model: Option<CoefficientModel>,
    pub grid: Option<GridSection>,
    pub kernel: Option<KernelSpec>,
    pub initial: Option<InitialData>,
    #[serde(default)]
    pub eigen: EigenSettings,
    #[serde(default)]
    pub adaptive: AdaptiveSection,
    #[serde(default)]
    pub hjb: HjbSection,
}

fn missing(path: &str, mode: Mode) -> Error {
    Error::Config { path: path.into(), message: format!("required by mode `{}` but missing", mode.name()) }
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "<config>".into());
            Error::Config { path, message }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    /// Replaces `ε` everywhere it is configured.
    pub fn override_eps(&mut self, eps: f64) {
        if let Some(g) = self.grid.as_mut() {
            g.eps = Some(eps);
        }
        self.hjb.eps = Some(eps);
    }

    pub fn mode(&self) -> Result<Mode> {
        self.run.mode.ok_or_else(|| invalid("run.mode", "no mode given on the command line or in the file"))
    }

    pub fn model(&self, mode: Mode) -> Result<&CoefficientModel> {
        self.model.as_ref().ok_or_else(|| missing("model", mode))
    }

    pub fn grid_section(&self, mode: Mode) -> Result<&GridSection> {
        self.grid.as_ref().ok_or_else(|| missing("grid", mode))
    }

    pub fn initial(&self, mode: Mode) -> Result<&InitialData> {
        self.initial.as_ref().ok_or_else(|| missing("initial", mode))
    }

    pub fn kernel(&self, mode: Mode) -> Result<MutationKernel> {
        let spec = self.kernel.clone().ok_or_else(|| missing("kernel", mode))?;
        MutationKernel::new(spec).map_err(|e| e.context("kernel"))
    }

    pub fn t_final(&self, mode: Mode) -> Result<f64> {
        let t = self.run.t_final.ok_or_else(|| missing("run.T", mode))?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid("run.T", format!("must be a finite nonnegative time, got {t}")));
        }
        Ok(t)
    }

    pub fn x_axis(&self, mode: Mode) -> Result<Axis> {
        let g = self.grid_section(mode)?;
        Axis::new(0.0, g.x_max, g.x_cells).map_err(|e| e.context("grid.x_max/grid.x_cells"))
    }

    pub fn y_axis(&self, mode: Mode) -> Result<Axis> {
        let g = self.grid_section(mode)?;
        Axis::new(g.y_min, g.y_max, g.y_cells).map_err(|e| e.context("grid.y_min/grid.y_max/grid.y_cells"))
    }

    /// The space-time grid of the PDE modes, checked against the CFL condition.
    pub fn pde_grid(&self, mode: Mode) -> Result<Grid> {
        let g = self.grid_section(mode)?;
        let dt = g.dt.ok_or_else(|| missing("grid.dt", mode))?;
        let eps = g.eps.ok_or_else(|| missing("grid.eps", mode))?;
        let (x, y) = (self.x_axis(mode)?, self.y_axis(mode)?);
        let model = self.model(mode)?;
        let a_inf = match model.a_inf {
            Some(v) => v,
            None => model.a_inf_on(&x, &y).map_err(|e| e.context("model.A"))?,
        };
        Grid::new(x, y, dt, eps, a_inf).map_err(|e| e.context("grid.dt"))
    }

    pub fn scheme_options(&self) -> SchemeOptions {
        SchemeOptions {
            competition: self.run.competition,
            boundary: if self.run.paper_literal_boundary { BoundaryWeights::Literal } else { BoundaryWeights::Quadrature },
        }
    }

    /// Snapshot times in `[0, T]`: the explicit list, or the multiples of the
    /// interval, or just `0` and `T`.
    pub fn snapshot_times(&self, mode: Mode) -> Result<Vec<f64>> {
        let t_final = self.t_final(mode)?;
        let mut times = if let Some(list) = &self.run.snapshots {
            if let Some(bad) = list.iter().find(|t| !(**t >= 0.0 && **t <= t_final * (1.0 + 1e-12))) {
                return Err(invalid("run.snapshots", format!("time {bad} outside [0, {t_final}]")));
            }
            list.clone()
        } else if let Some(step) = self.run.snapshot_interval {
            if !(step > 0.0) {
                return Err(invalid("run.snapshot_interval", format!("must be positive, got {step}")));
            }
            let n = (t_final / step + 1e-9).floor() as usize;
            (0..=n).map(|k| k as f64 * step).collect()
        } else {
            vec![0.0, t_final]
        };
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(times)
    }

    pub fn hjb_y_axis(&self, mode: Mode) -> Result<Axis> {
        let base = self.y_axis(mode)?;
        let h = &self.hjb;
        Axis::new(h.y_min.unwrap_or(base.min), h.y_max.unwrap_or(base.max), h.y_cells.unwrap_or(base.cells))
            .map_err(|e| e.context("hjb.y_min/hjb.y_max/hjb.y_cells"))
    }

    pub fn hjb_eps(&self, mode: Mode) -> Result<f64> {
        let eps = self
            .hjb
            .eps
            .or_else(|| self.grid.as_ref().and_then(|g| g.eps))
            .ok_or_else(|| missing("hjb.eps", mode))?;
        if !(eps > 0.0) {
            return Err(invalid("hjb.eps", format!("must be positive, got {eps}")));
        }
        Ok(eps)
    }

    pub fn hjb_t_final(&self, mode: Mode) -> Result<f64> {
        match self.hjb.t_final {
            Some(t) if t >= 0.0 => Ok(t),
            Some(t) => Err(invalid("hjb.t_final", format!("must be nonnegative, got {t}"))),
            None => self.t_final(mode),
        }
    }

    /// Checks that every section `mode` reads is present and consistent.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        let model = self.model(mode)?;
        self.x_axis(mode)?;
        let y = self.y_axis(mode)?;
        let needs_initial = !matches!(mode, Mode::Eigen);
        if needs_initial {
            let init = self.initial(mode)?;
            init.u0_on(&y).map_err(|e| e.context("initial.u0"))?;
        }
        if mode.is_pde() {
            self.pde_grid(mode)?;
            self.t_final(mode)?;
            self.snapshot_times(mode)?;
            if self.run.decompose_every == 0 {
                return Err(invalid("run.decompose_every", "must be at least 1"));
            }
        }
        if matches!(mode, Mode::SimulateMutation | Mode::Hjb) || self.kernel.is_some() {
            self.kernel(mode)?;
        }
        if mode == Mode::Adaptive {
            self.t_final(mode)?;
            if !(self.adaptive.dt > 0.0) {
                return Err(invalid("adaptive.dt", format!("must be positive, got {}", self.adaptive.dt)));
            }
        }
        if mode == Mode::Hjb {
            self.hjb_eps(mode)?;
            self.hjb_t_final(mode)?;
            self.hjb_y_axis(mode)?;
            if !(self.hjb.r > 0.0) {
                return Err(invalid("hjb.r", "must be positive"));
            }
            let list = &self.hjb.eps_list;
            if !list.is_empty() && (list.len() < 3 || list.windows(2).any(|w| !(w[1] < w[0]))) {
                return Err(invalid("hjb.eps_list", "must be strictly decreasing with at least 3 entries"));
            }
            if !(0.0..0.5).contains(&self.hjb.window_margin) {
                return Err(invalid("hjb.window_margin", "must lie in [0, 0.5)"));
            }
        }
        if let (Some(lo), Some(hi)) = (model.r_lo, model.r_hi) {
            if lo > hi {
                return Err(invalid("model.r_lo", format!("r_lo = {lo} exceeds r_hi = {hi}")));
            }
        }
        Ok(())
    }
}
