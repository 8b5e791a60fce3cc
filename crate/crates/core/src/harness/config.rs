//! TOML run configuration.
//!
//! ```toml
//! format_version = 1
//! seed = 42
//! realizations = 8
//!
//! [grid]
//! extents = [1.0]
//! cells = [64]
//!
//! [coefficients]
//! preset = "smooth-inhomogeneous"   # identity | diag(c1,c2) | shear(g) | smooth-inhomogeneous
//! delta = 0.2
//! phi = { kind = "saturating", k = 0.5 }
//!
//! [[noise.modes]]
//! alpha = 0.2
//! k = [1]
//!
//! [solver]
//! dt = 5e-5
//! theta = 0.5
//! scheme = "ito_em"                 # ito_em | strat_heun
//! n = 16
//! nonneg_policy = "clip_renormalize" # clip_renormalize | clip_only
//! horizon = 0.05
//! cadence = 20
//!
//! [initial]
//! profile = "bump"
//! center = [0.5]
//! width = 0.1
//! height = 1.0
//! base = 0.2
//! ```

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeffs::{Phi, Preset};
use crate::grid::{CellField, Grid, Point};
use crate::noise::NoiseSpec;
use crate::solver::SolverParams;
use crate::{Error, Result};

/// Version of the configuration schema and of the output layout.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub realizations: usize,
    pub grid: GridConfig,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub solver: SolverParams,
    pub initial: InitialSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<ParticleConfig>,
    #[serde(default, skip_serializing_if = "DebugConfig::is_default")]
    pub debug: DebugConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    #[serde(default = "identity_name")]
    pub preset: String,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "identity_phi")]
    pub phi: Phi,
}

fn identity_name() -> String {
    "identity".into()
}

fn identity_phi() -> Phi {
    Phi::Identity
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        CoefficientConfig { preset: identity_name(), delta: 0.0, phi: Phi::Identity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Upper ends `β` of the bands `[β/2, β]`.
    #[serde(default = "default_bands")]
    pub bands: Vec<f64>,
    /// Write density snapshots next to the diagnostics.
    #[serde(default = "yes")]
    pub store_fields: bool,
}

fn default_bands() -> Vec<f64> {
    vec![0.1, 0.05, 0.025]
}

fn yes() -> bool {
    true
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { bands: default_bands(), store_fields: true }
    }
}

/// Second datum for the coupled-path experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub second: InitialSpec,
    #[serde(default = "yes")]
    pub shared_noise: bool,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn default_slack() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub count: usize,
    pub bandwidth: f64,
    pub dt: f64,
    /// Defaults to the solver horizon.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "one")]
    pub cadence: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugConfig {
    /// Realizations forced to fail, for exercising the fault path.
    #[serde(default)]
    pub fail_realizations: Vec<u64>,
}

impl DebugConfig {
    fn is_default(&self) -> bool {
        self.fail_realizations.is_empty()
    }
}

/// Named initial profile, optionally rescaled to a prescribed mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    #[serde(flatten)]
    pub profile: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    Constant { value: f64 },
    /// `base + height·exp(−|x − center|²/(2 width²))`
    Bump { center: Vec<f64>, width: f64, height: f64, #[serde(default)] base: f64 },
    TwoBumps { centers: Vec<Vec<f64>>, width: f64, height: f64, #[serde(default)] base: f64 },
    /// `base + value·Π_j ℓ((x_j − lo_j)/w)·ℓ((hi_j − x_j)/w)` with the
    /// logistic `ℓ`; a smoothed indicator of `[lo, hi]`.
    Plateau { lo: Vec<f64>, hi: Vec<f64>, value: f64, smoothing: f64, #[serde(default)] base: f64 },
    /// `mean + amplitude·Π_j cos(π m_j x_j / L_j)`
    Cosine { mean: f64, amplitude: f64, mode: Vec<u32> },
}

fn coord(v: &[f64], axis: usize) -> f64 {
    v.get(axis).copied().unwrap_or(0.0)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Profile {
    pub fn eval(&self, x: Point, grid: &Grid) -> f64 {
        let dims = grid.dims();
        let gauss = |c: &[f64], w: f64| {
            let r2: f64 = (0..dims).map(|a| (x[a] - coord(c, a)).powi(2)).sum();
            (-r2 / (2.0 * w * w)).exp()
        };
        match self {
            Profile::Constant { value } => *value,
            Profile::Bump { center, width, height, base } => base + height * gauss(center, *width),
            Profile::TwoBumps { centers, width, height, base } => {
                base + height * centers.iter().map(|c| gauss(c, *width)).sum::<f64>()
            }
            Profile::Plateau { lo, hi, value, smoothing, base } => {
                let p: f64 = (0..dims)
                    .map(|a| logistic((x[a] - coord(lo, a)) / smoothing) * logistic((coord(hi, a) - x[a]) / smoothing))
                    .product();
                base + value * p
            }
            Profile::Cosine { mean, amplitude, mode } => {
                let p: f64 = (0..dims)
                    .map(|a| (PI * mode.get(a).copied().unwrap_or(0) as f64 * x[a] / grid.extent(a)).cos())
                    .product();
                mean + amplitude * p
            }
        }
    }
}

impl InitialSpec {
    pub fn new(profile: Profile) -> Self {
        InitialSpec { profile, mass: None }
    }

    /// Samples the profile at cell centers and applies the mass rescaling.
    pub fn build(&self, grid: &Grid) -> Result<CellField> {
        let mut rho = CellField::from_fn(grid, |x| self.profile.eval(x, grid));
        if rho.values.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::Config("initial density must be finite and nonnegative".into()));
        }
        if let Some(m) = self.mass {
            let cur = rho.integral();
            if !(cur > 0.0 && m > 0.0) {
                return Err(Error::Config("mass rescaling needs positive masses".into()));
            }
            rho = rho.map(|v| v * m / cur);
        }
        Ok(rho)
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks the schema-level preconditions; module-level ones are checked
    /// when the experiment is assembled.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be ≥ 1".into()));
        }
        self.solver.validate()?;
        for &b in &self.diagnostics.bands {
            if !(b > 0.0) {
                return Err(Error::Config(format!("band upper end must be positive, got {b}")));
            }
        }
        if let Some(c) = &self.coupling {
            if !(c.slack >= 0.0) {
                return Err(Error::Config("coupling slack must be ≥ 0".into()));
            }
        }
        if let Some(p) = &self.particles {
            if p.count == 0 || !(p.bandwidth > 0.0) || !(p.dt > 0.0) || p.cadence == 0 {
                return Err(Error::Config("particles need count ≥ 1, bandwidth > 0, dt > 0, cadence ≥ 1".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(&self.grid.extents, &self.grid.cells)
    }

    pub fn preset(&self) -> Result<Preset> {
        Preset::parse(&self.coefficients.preset, self.coefficients.delta, &self.grid.extents)
    }
}
