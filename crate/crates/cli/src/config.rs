use std::path::Path;

use ntkms_core::coeff::{Engine, Moments, TraceSpec};
use ntkms_core::product_system::{DilationStyle, ProductSystem};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

pub const DEFAULT_BOUND: u64 = 1000;
pub const DEFAULT_BUDGET: u64 = 1_000_000;
pub const DEFAULT_BETA: f64 = 3.0;
pub const DEFAULT_K: u64 = 2;
pub const DEFAULT_D: usize = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SystemName {
    #[default]
    AffineToeplitz,
    AdditiveToeplitz,
    Cuntz,
    LatticeDilation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    #[default]
    Diagonal,
    FirstAxis,
}

impl From<Style> for DilationStyle {
    fn from(s: Style) -> Self {
        match s {
            Style::Diagonal => DilationStyle::Diagonal,
            Style::FirstAxis => DilationStyle::FirstAxis,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TraceName {
    #[default]
    Haar,
    #[value(name = "point_mass", alias = "point-mass")]
    PointMass,
    Poisson,
    #[value(name = "vector_state", alias = "vector-state")]
    VectorState,
}

/// One angle or one per torus coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Angles {
    One(f64),
    Many(Vec<f64>),
}

impl Angles {
    pub fn from_vec(v: Vec<f64>) -> Self {
        if v.len() == 1 {
            Angles::One(v[0])
        } else {
            Angles::Many(v)
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        match self {
            Angles::One(t) => vec![*t],
            Angles::Many(v) => v.clone(),
        }
    }
}

/// Swap two values of one index map; used to exercise the validator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub s: u64,
    pub r: u64,
    pub swap: (usize, usize),
}

/// Flat run configuration, e.g.
/// `{"system": "cuntz", "k": 2, "trace": "haar", "beta": 3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: SystemName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Style>,
    #[serde(default)]
    pub trace: TraceName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Angles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<f64>,
    #[serde(default = "default_bound")]
    pub bound: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub format: Format,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupt: Option<Corruption>,
}

fn default_bound() -> u64 {
    DEFAULT_BOUND
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemName::default(),
            k: None,
            d: None,
            style: None,
            trace: TraceName::default(),
            theta: None,
            radius: None,
            index: None,
            beta: None,
            betas: Vec::new(),
            bound: DEFAULT_BOUND,
            seed: 0,
            format: Format::default(),
            budget: DEFAULT_BUDGET,
            corrupt: None,
        }
    }
}

fn stray(field: &str, owner: impl std::fmt::Debug) -> AppError {
    AppError::Usage(format!("{field} does not apply to {owner:?}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, AppError> {
        serde_json::from_str(text).map_err(|e| AppError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    #[cfg(test)]
    fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(DEFAULT_BETA)
    }

    /// The β-grid, falling back to the single β.
    pub fn grid(&self) -> Vec<f64> {
        if self.betas.is_empty() {
            vec![self.beta()]
        } else {
            self.betas.clone()
        }
    }

    /// The instance without any injected fault.
    pub fn base_system(&self) -> Result<ProductSystem, AppError> {
        let name = self.system;
        if self.k.is_some() && name != SystemName::Cuntz {
            return Err(stray("k", name));
        }
        if (self.d.is_some() || self.style.is_some()) && name != SystemName::LatticeDilation {
            return Err(stray("d/style", name));
        }
        let sys = match name {
            SystemName::AffineToeplitz => ProductSystem::affine_toeplitz(),
            SystemName::AdditiveToeplitz => ProductSystem::additive_toeplitz(),
            SystemName::Cuntz => ProductSystem::cuntz(self.k.unwrap_or(DEFAULT_K)).map_err(AppError::usage)?,
            SystemName::LatticeDilation => {
                ProductSystem::lattice_dilation(self.d.unwrap_or(DEFAULT_D), self.style.unwrap_or_default().into())
                    .map_err(AppError::usage)?
            }
        };
        Ok(sys)
    }

    pub fn build_system(&self) -> Result<ProductSystem, AppError> {
        let sys = self.base_system()?;
        match &self.corrupt {
            None => Ok(sys),
            Some(c) => {
                let s = sys.element(c.s).map_err(AppError::usage)?;
                let r = sys.element(c.r).map_err(AppError::usage)?;
                Ok(sys.corrupted(s, r, c.swap))
            }
        }
    }

    pub fn build_trace(&self, system: &ProductSystem) -> Result<TraceSpec, AppError> {
        let name = self.trace;
        if self.theta.is_some() && name != TraceName::PointMass {
            return Err(stray("theta", name));
        }
        if self.radius.is_some() && name != TraceName::Poisson {
            return Err(stray("radius", name));
        }
        if self.index.is_some() && name != TraceName::VectorState {
            return Err(stray("index", name));
        }
        let engine = system.engine();
        let moments = match name {
            TraceName::Haar => Moments::Haar,
            TraceName::PointMass => {
                let mut theta = self.theta.as_ref().map(Angles::to_vec).unwrap_or_else(|| vec![0.0]);
                if let Engine::Laurent { dim } = engine {
                    if theta.len() == 1 && dim > 1 {
                        theta = vec![theta[0]; dim];
                    }
                }
                Moments::PointMass { theta }
            }
            TraceName::Poisson => Moments::Poisson {
                radius: self.radius.ok_or_else(|| AppError::Usage("poisson needs a radius".into()))?,
            },
            TraceName::VectorState => Moments::VectorState {
                index: self.index.unwrap_or(0),
            },
        };
        TraceSpec::new(engine, moments).map_err(AppError::usage)
    }
}
