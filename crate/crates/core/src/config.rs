//! TOML experiment configuration.
//!
//! ```toml
//! [model]          # true drift θ = (A, B), matrices as arrays of rows
//! [noise]          # sigma, jump_rate, tail_order, [noise.marks]
//! [cost]           # kind = "lq" | "l1_lq" | "entropy_linear" plus weights
//! [sim]            # horizon, x0, steps, episodes, seed
//! [gls]            # a0, b0, m0, num_updates, delta, runs, ...
//! [decouple]       # dx, x_max, dt
//! [concentration]  # statistic, epsilon, m_list, trials
//! [output]         # dir
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decouple::FieldParams;
use crate::error::{Error, Result};
use crate::estimate::RidgeScaling;
use crate::learn::{GlsConfig, RegretMode};
use crate::model::{CostSpec, ModelTheta, NoiseSpec, ProblemInstance, Vector};
use crate::serde_rows;
use crate::stats::ConcentrationParams;

fn default_steps() -> usize {
    100
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    pub horizon: f64,
    #[serde(with = "serde_rows::vector")]
    pub x0: Vector,
    /// Uniform steps on `[0, horizon]`; `dt = horizon / steps`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Episodes for `simulate` and Monte-Carlo evaluation.
    #[serde(default = "one")]
    pub episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlsSection {
    /// Initial guess θ₀.
    #[serde(with = "serde_rows::matrix")]
    pub a0: crate::model::Matrix,
    #[serde(with = "serde_rows::matrix")]
    pub b0: crate::model::Matrix,
    pub m0: usize,
    pub num_updates: usize,
    pub delta: f64,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub pooled: bool,
    #[serde(default)]
    pub ridge: RidgeScaling,
    #[serde(default)]
    pub regret: RegretMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelTheta,
    pub noise: NoiseSpec,
    pub cost: CostSpec,
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gls: Option<GlsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decouple: Option<FieldParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The problem instance, without validation.
    pub fn instance(&self) -> ProblemInstance {
        ProblemInstance {
            theta: self.model.clone(),
            noise: self.noise.clone(),
            cost: self.cost.clone(),
            horizon: self.sim.horizon,
            x0: self.sim.x0.clone(),
        }
    }

    pub fn dt(&self) -> Result<f64> {
        if self.sim.steps == 0 {
            return Err(Error::Grid("steps must be at least 1".into()));
        }
        Ok(self.sim.horizon / self.sim.steps as f64)
    }

    pub fn gls_section(&self) -> Result<&GlsSection> {
        self.gls
            .as_ref()
            .ok_or_else(|| Error::Config("missing [gls] section".into()))
    }

    pub fn gls_config(&self, seed: u64) -> Result<GlsConfig> {
        let g = self.gls_section()?;
        Ok(GlsConfig {
            instance: self.instance(),
            theta0: ModelTheta {
                a: g.a0.clone(),
                b: g.b0.clone(),
            },
            m0: g.m0,
            num_updates: g.num_updates,
            delta: g.delta,
            seed,
            dt: self.dt()?,
            pooled: g.pooled,
            ridge: g.ridge,
            regret: g.regret,
        })
    }
}
