//! Run configuration: TOML with sections, unknown keys rejected, and a
//! resolved echo written next to every run's outputs so the run reproduces.

use layerbound::geometry::AnalyticSurface;

fn default_delta() -> f64 {
    8.0
}

use layerbound::planar::PotentialSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialCfg>,
    #[serde(default)]
    pub layer: LayerCfg,
    #[serde(default)]
    pub coupling: CouplingCfg,
    #[serde(default)]
    pub grid: GridCfg,
    #[serde(default)]
    pub modes: ModesCfg,
    #[serde(default)]
    pub solver: SolverCfg,
    #[serde(default)]
    pub output: OutputCfg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceCfg {
    /// gaussian_bump | parabolic_cylinder | ripple | plane
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope2: Option<f64>,
    /// Declared decay exponent of the hypotheses' weight (1 + |x|^delta).
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialCfg {
    /// gaussian_well | gaussian_barrier | compact_bump | dipole_uv
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCfg {
    /// Transverse half-width.
    pub a: f64,
    /// Deformation sweep.
    #[serde(default)]
    pub eps: Vec<f64>,
}

impl Default for LayerCfg {
    fn default() -> Self {
        Self { a: std::f64::consts::FRAC_PI_2, eps: vec![0.1] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingCfg {
    /// Coupling sweep for the planar pipelines.
    pub lambda: Vec<f64>,
}

impl Default for CouplingCfg {
    fn default() -> Self {
        Self { lambda: vec![0.04, 0.02, 0.01] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCfg {
    pub extent: f64,
    pub nodes: usize,
}

impl Default for GridCfg {
    fn default() -> Self {
        Self { extent: 10.0, nodes: 161 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesCfg {
    /// Asymptotic mode cutoff.
    pub n: usize,
    /// Birman-Schwinger resolvent cutoff.
    pub bs: usize,
    /// Direct-solver block count.
    pub direct: usize,
    /// Transverse quadrature order.
    pub nu: usize,
}

impl Default for ModesCfg {
    fn default() -> Self {
        Self { n: 64, bs: 8, direct: 8, nu: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCfg {
    /// Eigensolver residual tolerance.
    pub tol: f64,
    /// Direct-solver box half-length.
    pub box_half_length: f64,
    /// Direct-solver finest spacing.
    pub h: f64,
    /// Bracket box budget.
    pub l_budget: f64,
}

impl Default for SolverCfg {
    fn default() -> Self {
        Self { tol: 1e-8, box_half_length: 40.0, h: 0.1, l_budget: 820.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    pub dir: String,
}

impl Default for OutputCfg {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// Configuration problems carry exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let cfg: Config = toml::from_str(&text).map_err(|e| ConfigError(e.to_string()))?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &Config) -> Result<(), ConfigError> {
    if !(cfg.layer.a > 0.0) {
        return Err(ConfigError(format!("layer.a must be positive, got {}", cfg.layer.a)));
    }
    for &e in &cfg.layer.eps {
        if !(e > 0.0) {
            return Err(ConfigError(format!("layer.eps entries must be positive, got {e}")));
        }
    }
    for &l in &cfg.coupling.lambda {
        if !(l > 0.0) {
            return Err(ConfigError(format!("coupling.lambda entries must be positive, got {l}")));
        }
    }
    if cfg.grid.nodes < 9 || !(cfg.grid.extent > 0.0) {
        return Err(ConfigError("grid needs nodes >= 9 and positive extent".into()));
    }
    if cfg.modes.n < 2 || cfg.modes.bs < 2 || cfg.modes.direct < 1 {
        return Err(ConfigError("mode cutoffs too small".into()));
    }
    if cfg.modes.nu < 2 * cfg.modes.bs.max(cfg.modes.direct) {
        return Err(ConfigError(format!(
            "modes.nu = {} must be at least twice the largest solver cutoff",
            cfg.modes.nu
        )));
    }
    if !(cfg.solver.tol > 0.0) || !(cfg.solver.h > 0.0) || !(cfg.solver.box_half_length > 0.0) {
        return Err(ConfigError("solver tolerances and sizes must be positive".into()));
    }
    if let Some(s) = &cfg.surface {
        build_surface(s)?;
    }
    if let Some(p) = &cfg.potential {
        build_potential(p, cfg.layer.a)?;
    }
    Ok(())
}

fn require(v: Option<f64>, what: &str) -> Result<f64, ConfigError> {
    v.ok_or_else(|| ConfigError(format!("missing parameter '{what}'")))
}

pub fn build_surface(cfg: &SurfaceCfg) -> Result<AnalyticSurface, ConfigError> {
    match cfg.name.as_str() {
        "gaussian_bump" => Ok(AnalyticSurface::gaussian_bump(
            cfg.amplitude.unwrap_or(1.0),
            positive(cfg.width.unwrap_or(1.0), "surface.width")?,
        )),
        "parabolic_cylinder" => {
            Ok(AnalyticSurface::parabolic_cylinder(require(cfg.curvature, "surface.curvature")?))
        }
        "ripple" => Ok(AnalyticSurface::ripple(
            cfg.amplitude.unwrap_or(1.0),
            positive(cfg.frequency.unwrap_or(1.0), "surface.frequency")?,
            positive(cfg.width.unwrap_or(1.0), "surface.width")?,
        )),
        "plane" => Ok(AnalyticSurface::linear(
            cfg.slope1.unwrap_or(0.0),
            cfg.slope2.unwrap_or(0.0),
        )),
        other => Err(ConfigError(format!("unknown surface '{other}'"))),
    }
}

pub fn build_potential(cfg: &PotentialCfg, a: f64) -> Result<PotentialSpec, ConfigError> {
    let delta = positive(cfg.delta, "potential.delta")?;
    let spec = match cfg.name.as_str() {
        "gaussian_barrier" => PotentialSpec::gaussian_barrier(
            positive(cfg.depth.unwrap_or(1.0), "potential.depth")?,
            positive(cfg.width.unwrap_or(1.0), "potential.width")?,
        ),
        "gaussian_well" => PotentialSpec::gaussian_well(
            positive(cfg.depth.unwrap_or(1.0), "potential.depth")?,
            positive(cfg.width.unwrap_or(1.0), "potential.width")?,
        ),
        "compact_bump" => PotentialSpec::compact_bump(
            positive(cfg.depth.unwrap_or(1.0), "potential.depth")?,
            positive(cfg.radius.unwrap_or(3.0), "potential.radius")?,
        ),
        "dipole_uv" => PotentialSpec::dipole_uv(
            positive(cfg.strength.unwrap_or(1.0), "potential.strength")?,
            positive(cfg.width.unwrap_or(1.0), "potential.width")?,
            a,
        ),
        other => return Err(ConfigError(format!("unknown potential '{other}'"))),
    };
    Ok(PotentialSpec { delta, ..spec })
}

fn positive(v: f64, what: &str) -> Result<f64, ConfigError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError(format!("{what} must be positive, got {v}")))
    }
}

/// Serialize the resolved configuration; the echo is itself a valid config.
pub fn echo(cfg: &Config) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}
