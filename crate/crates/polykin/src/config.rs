//! Run configuration: a TOML tree that round-trips losslessly, rejects
//! unknown keys, and resolves (with every default made explicit) into a
//! validated problem setup.

use serde::{Deserialize, Serialize};

use crate::model::{
    FeneChain, Forcing, InitialDensity, InitialPdf, InitialVelocity, MaterialLaws,
    MaxwellianMode, ProblemSetup, RouseSystem, Torus,
};
use crate::solver::{FixedPointConfig, SweepLadders};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Extensibility parameter of each spring (strictly above 2).
    pub b: Vec<f64>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
}

fn default_dimension() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RouseConfig {
    /// Tridiagonal 2 / -1 coupling.
    Classical,
    /// Explicit symmetric positive-definite matrix, row by row.
    Matrix { rows: Vec<Vec<f64>> },
}

impl Default for RouseConfig {
    fn default() -> Self {
        RouseConfig::Classical
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub lengths: [f64; 2],
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { lengths: [std::f64::consts::TAU, std::f64::consts::TAU] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub rho: InitialDensity,
    pub velocity: InitialVelocity,
    pub psi: InitialPdf,
    /// Scale the initial configuration density to unit weighted mass.
    pub normalize: bool,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            rho: InitialDensity::Constant { value: 1.0 },
            velocity: InitialVelocity::Zero,
            psi: InitialPdf::Uniform { value: 1.0 },
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelsConfig {
    pub truncation: u32,
    pub velocity_modes: usize,
    pub pdf_x_modes: usize,
    pub conf_degree: usize,
    /// 0 selects the full tensor product.
    pub pdf_modes: usize,
    pub maxwellian: MaxwellianMode,
}

impl Default for LevelsConfig {
    fn default() -> Self {
        Self {
            truncation: 4,
            velocity_modes: 4,
            pdf_x_modes: 5,
            conf_degree: 2,
            pdf_modes: 0,
            maxwellian: MaxwellianMode::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t_final: f64,
    pub dt: f64,
    /// Characteristic integrator substeps per window.
    pub rk4_substeps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_final: 0.1, dt: 0.01, rk4_substeps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub radial_order: usize,
    pub angular_order: usize,
    /// Spatial grid points per direction; 0 selects four per largest
    /// wavenumber.
    pub spatial_grid: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { radial_order: 8, angular_order: 12, spatial_grid: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Snapshot cadence in steps.
    pub cadence: usize,
    pub directory: String,
    /// Seed for random-field initial data.
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { cadence: 1, directory: "out".into(), seed: 0 }
    }
}

/// Complete serialized run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub chain: ChainConfig,
    #[serde(default)]
    pub rouse: RouseConfig,
    pub laws: MaterialLaws,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default = "default_forcing")]
    pub forcing: Forcing,
    #[serde(default)]
    pub levels: LevelsConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub fixed_point: FixedPointConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: SweepLadders,
}

fn default_forcing() -> Forcing {
    Forcing::None
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::config(format!("{e}")))
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("{e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolve into the validated runtime setup and material laws.
    pub fn build(&self) -> Result<(ProblemSetup, MaterialLaws), Error> {
        let chain = FeneChain::new(self.chain.b.clone(), self.chain.dimension)?;
        let rouse = match &self.rouse {
            RouseConfig::Classical => RouseSystem::classical(chain.springs())?,
            RouseConfig::Matrix { rows } => {
                let k = rows.len();
                if k != chain.springs() || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::config(
                        "coupling matrix must be square with one row per spring",
                    ));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                RouseSystem::new(nalgebra::DMatrix::from_row_slice(k, k, &flat))?
            }
        };
        self.laws.validate()?;
        let setup = ProblemSetup {
            chain,
            rouse,
            torus: Torus::new(self.domain.lengths)?,
            t_final: self.time.t_final,
            dt: self.time.dt,
            rho0: self.initial.rho.clone(),
            v0: self.initial.velocity.clone(),
            psi0: self.initial.psi.clone(),
            forcing: self.forcing.clone(),
            normalize_pdf: self.initial.normalize,
            truncation_level: self.levels.truncation,
            velocity_modes: self.levels.velocity_modes,
            pdf_x_modes: self.levels.pdf_x_modes,
            conf_degree: self.levels.conf_degree,
            pdf_modes: self.levels.pdf_modes,
            maxwellian: self.levels.maxwellian,
            radial_order: self.quadrature.radial_order,
            angular_order: self.quadrature.angular_order,
            spatial_grid: self.quadrature.spatial_grid,
            rk4_substeps: self.time.rk4_substeps,
            fixed_point: self.fixed_point,
            seed: self.output.seed,
        };
        setup.validate()?;
        Ok((setup, self.laws.clone()))
    }

    /// A minimal equilibrium configuration (unit laws, resting fluid,
    /// uniform configuration density).
    pub fn equilibrium_example() -> Self {
        Self {
            chain: ChainConfig { b: vec![4.0], dimension: 2 },
            rouse: RouseConfig::Classical,
            laws: MaterialLaws::unit(),
            domain: DomainConfig::default(),
            initial: InitialConfig::default(),
            forcing: Forcing::None,
            levels: LevelsConfig::default(),
            time: TimeConfig::default(),
            quadrature: QuadratureConfig::default(),
            fixed_point: FixedPointConfig::default(),
            output: OutputConfig::default(),
            sweep: SweepLadders::default(),
        }
    }
}
