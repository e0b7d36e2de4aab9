//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critical_search::{SearchOptions, SearchWindow};
use crate::error::{Error, Result};
use crate::ground_state::GroundStateOptions;
use crate::linearized_ops::Form;
use crate::potential::{make_broken_ring, make_constant, make_gaussian_well, make_ring_well, Potential};
use crate::reduction::FixedPointOptions;
use crate::spectral::{FracParams, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    GroundState,
    ResidualScan,
    Spectrum,
    Corrector,
    Reduce,
    FindCritical,
    Concentration,
    Assemble,
    ScalingStudy,
}

impl Mode {
    pub const ALL: [Mode; 9] = [
        Mode::GroundState,
        Mode::ResidualScan,
        Mode::Spectrum,
        Mode::Corrector,
        Mode::Reduce,
        Mode::FindCritical,
        Mode::Concentration,
        Mode::Assemble,
        Mode::ScalingStudy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::GroundState => "ground-state",
            Mode::ResidualScan => "residual-scan",
            Mode::Spectrum => "spectrum",
            Mode::Corrector => "corrector",
            Mode::Reduce => "reduce",
            Mode::FindCritical => "find-critical",
            Mode::Concentration => "concentration",
            Mode::Assemble => "assemble",
            Mode::ScalingStudy => "scaling-study",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub s: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub size: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Constant {
        #[serde(default)]
        value: f64,
    },
    GaussianWell {
        #[serde(rename = "A")]
        depth: f64,
        center: Vec<f64>,
        width: f64,
    },
    RingWell {
        #[serde(rename = "A")]
        depth: f64,
        radius: f64,
        width: f64,
    },
    BrokenRing {
        #[serde(rename = "A")]
        depth: f64,
        radius: f64,
        width: f64,
        bump_width: f64,
    },
}

impl PotentialSpec {
    pub fn build(&self, dim: usize) -> Result<Potential> {
        let v = match self {
            PotentialSpec::Constant { value } => make_constant(dim, *value),
            PotentialSpec::GaussianWell { depth, center, width } => make_gaussian_well(*depth, center, *width),
            PotentialSpec::RingWell { depth, radius, width } => make_ring_well(*depth, *radius, *width),
            PotentialSpec::BrokenRing { depth, radius, width, bump_width } => {
                make_broken_ring(*depth, *radius, *width, *bump_width)
            }
        }
        .map_err(|e| Error::config("potential", e.to_string()))?;
        if v.dim != dim {
            return Err(Error::config(
                "potential",
                format!("potential is {}-dimensional but params.n = {dim}", v.dim),
            ));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    #[default]
    Residual,
    CorrectorNorm,
    CorrectorGrad,
    PhiGap,
    TangentGap,
    I1,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Residual => "residual",
            Quantity::CorrectorNorm => "corrector_norm",
            Quantity::CorrectorGrad => "corrector_grad",
            Quantity::PhiGap => "phi_gap",
            Quantity::TangentGap => "tangent_gap",
            Quantity::I1 => "I1",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// `|slope - target| <= tolerance`.
    #[default]
    Within,
    /// `slope >= target - tolerance`.
    AtLeast,
    /// `slope <= target + tolerance`.
    AtMost,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub eps: Vec<f64>,
    /// Sample positions in original coordinates; `xi = x / eps`.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub quantity: Quantity,
    pub target: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub bound: Bound,
    /// Difference step in `xi` for `corrector_grad`.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_fd_step() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumTarget {
    /// `L_0` at the ground state.
    #[default]
    GroundState,
    /// `L_{eps, xi}` at each sweep sample, projected onto the tangent complement.
    Ansatz,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub target: SpectrumTarget,
    #[serde(default = "default_form")]
    pub form: Form,
    #[serde(default)]
    pub dump_eigenfields: bool,
}

fn default_count() -> usize {
    4
}

fn default_form() -> Form {
    Form::Strong
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection { count: default_count(), target: SpectrumTarget::default(), form: default_form(), dump_eigenfields: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub window: SearchWindow,
    pub starts: Option<usize>,
    #[serde(default = "default_max_candidates")]
    pub max_candidates: usize,
    /// Nonzero exit when fewer critical points than the cup length are found.
    #[serde(default = "default_true")]
    pub enforce: bool,
}

fn default_max_candidates() -> usize {
    16
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "d_gs_iterate")]
    pub ground_state_iterate: f64,
    #[serde(default = "d_gs_residual")]
    pub ground_state_residual: f64,
    #[serde(default = "d_gs_max_iter")]
    pub ground_state_max_iter: usize,
    #[serde(default = "d_fp_tol")]
    pub fixed_point: f64,
    #[serde(default = "d_fp_max_iter")]
    pub fixed_point_max_iter: usize,
    #[serde(default = "d_krylov")]
    pub krylov: f64,
    /// Trust-ball radius; default `0.5 ||z||_s`.
    pub delta: Option<f64>,
    #[serde(default = "d_crit")]
    pub critical: f64,
}

fn d_gs_iterate() -> f64 {
    1e-12
}
fn d_gs_residual() -> f64 {
    1e-9
}
fn d_gs_max_iter() -> usize {
    2000
}
fn d_fp_tol() -> f64 {
    1e-9
}
fn d_fp_max_iter() -> usize {
    60
}
fn d_krylov() -> f64 {
    1e-10
}
fn d_crit() -> f64 {
    1e-8
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ground_state_iterate: d_gs_iterate(),
            ground_state_residual: d_gs_residual(),
            ground_state_max_iter: d_gs_max_iter(),
            fixed_point: d_fp_tol(),
            fixed_point_max_iter: d_fp_max_iter(),
            krylov: d_krylov(),
            delta: None,
            critical: d_crit(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub params: ParamsSection,
    pub grid: GridSection,
    #[serde(default = "default_potential")]
    pub potential: PotentialSpec,
    pub sweep: Option<SweepSection>,
    pub study: Option<StudySection>,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    pub search: Option<SearchSection>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_potential() -> PotentialSpec {
    PotentialSpec::Constant { value: 0.0 }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let key = e.span().map(|r| text[r].trim().to_string()).unwrap_or_default();
            Error::config(key, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn frac_params(&self) -> Result<FracParams> {
        let ParamsSection { s, p, n } = self.params;
        FracParams::new(s, p, n).map_err(|e| {
            let key = if !(s > 0.0 && s < 1.0) {
                "params.s"
            } else if !(1..=2).contains(&n) {
                "params.n"
            } else {
                "params.p"
            };
            Error::config(key, e.to_string())
        })
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.params.n, self.grid.size, self.grid.half_width).map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn ground_state_options(&self) -> GroundStateOptions {
        let t = &self.tolerances;
        GroundStateOptions {
            iterate_tol: t.ground_state_iterate,
            residual_tol: t.ground_state_residual,
            max_iter: t.ground_state_max_iter,
            ..Default::default()
        }
    }

    pub fn fixed_point_options(&self) -> Result<FixedPointOptions> {
        let params = self.frac_params()?;
        let t = &self.tolerances;
        let o = FixedPointOptions {
            delta: t.delta,
            tol: t.fixed_point,
            max_iter: t.fixed_point_max_iter,
            krylov_rtol: t.krylov,
            ..FixedPointOptions::for_params(&params)
        };
        o.validate().map_err(|e| Error::config("tolerances", e.to_string()))?;
        Ok(o)
    }

    pub fn search_options(&self) -> Result<SearchOptions> {
        let search = self.search()?;
        Ok(SearchOptions {
            starts: search.starts,
            seed: self.seed,
            tol_crit: self.tolerances.critical,
            max_candidates: search.max_candidates,
            fixed_point: self.fixed_point_options()?,
            ..Default::default()
        })
    }

    pub fn sweep(&self) -> Result<&SweepSection> {
        self.sweep.as_ref().ok_or_else(|| Error::config("sweep", "missing [sweep] section"))
    }

    pub fn study(&self) -> Result<&StudySection> {
        self.study.as_ref().ok_or_else(|| Error::config("study", "missing [study] section"))
    }

    pub fn search(&self) -> Result<&SearchSection> {
        self.search.as_ref().ok_or_else(|| Error::config("search", "missing [search] section"))
    }

    /// Checks everything that can be checked without computing, for `mode`.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(Error::config(
                    "mode",
                    format!("config declares `{}` but `{}` was requested", m.name(), mode.name()),
                ));
            }
        }
        let params = self.frac_params()?;
        self.build_grid()?;
        self.potential.build(params.dim)?;
        let needs_reduction = !matches!(mode, Mode::GroundState)
            && !(mode == Mode::Spectrum && self.spectrum.target == SpectrumTarget::GroundState);
        if needs_reduction {
            params.validate_for_reduction().map_err(|e| Error::config("params", e.to_string()))?;
            self.fixed_point_options()?;
        }
        let needs_sweep = matches!(
            mode,
            Mode::ResidualScan | Mode::Corrector | Mode::Reduce | Mode::ScalingStudy | Mode::FindCritical | Mode::Concentration | Mode::Assemble
        ) || (mode == Mode::Spectrum && self.spectrum.target == SpectrumTarget::Ansatz);
        if needs_sweep {
            let sweep = self.sweep()?;
            if sweep.eps.is_empty() || sweep.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(Error::config("sweep.eps", "needs at least one positive value"));
            }
            for p in &sweep.points {
                if p.len() != params.dim {
                    return Err(Error::config(
                        "sweep.points",
                        format!("point {p:?} does not have {} coordinates", params.dim),
                    ));
                }
            }
        }
        let needs_points = matches!(mode, Mode::ResidualScan | Mode::Corrector | Mode::Reduce | Mode::ScalingStudy)
            || (mode == Mode::Spectrum && self.spectrum.target == SpectrumTarget::Ansatz);
        if needs_points && self.sweep()?.points.is_empty() {
            return Err(Error::config("sweep.points", "at least one sample point is required"));
        }
        if mode == Mode::ScalingStudy {
            let study = self.study()?;
            if !(study.tolerance >= 0.0) {
                return Err(Error::config("study.tolerance", "must be non-negative"));
            }
            if !(study.fd_step > 0.0) {
                return Err(Error::config("study.fd_step", "must be positive"));
            }
            check_geometric(&self.sweep()?.eps)?;
        }
        if matches!(mode, Mode::FindCritical | Mode::Concentration | Mode::Assemble) {
            let search = self.search()?;
            search.window.validate().map_err(|e| Error::config("search.window", e.to_string()))?;
            if search.window.dim() != params.dim {
                return Err(Error::config("search.window", "window dimension does not match params.n"));
            }
            if search.max_candidates == 0 {
                return Err(Error::config("search.max_candidates", "must be positive"));
            }
        }
        if mode == Mode::Spectrum && !(1..=20).contains(&self.spectrum.count) {
            return Err(Error::config("spectrum.count", "must lie in 1..=20"));
        }
        Ok(())
    }
}

/// Geometric with ratio at most 1/2 and at least 4 entries.
pub fn check_geometric(eps: &[f64]) -> Result<()> {
    if eps.len() < 4 {
        return Err(Error::config("sweep.eps", format!("a scaling study needs at least 4 values, got {}", eps.len())));
    }
    let ratio = eps[1] / eps[0];
    if !(ratio > 0.0 && ratio <= 0.5 + 1e-12) {
        return Err(Error::config("sweep.eps", format!("ratio {ratio} must lie in (0, 1/2]")));
    }
    for w in eps.windows(2) {
        let r = w[1] / w[0];
        if (r - ratio).abs() > 1e-9 * ratio {
            return Err(Error::config("sweep.eps", "values must form a geometric sequence"));
        }
    }
    Ok(())
}
