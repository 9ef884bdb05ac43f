//! Experiment configuration files.
//!
//! A config is a JSON document with four sections:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "problem":  { "kind": "quadratic", "n": 2, "seed": 0 },
//!   "topology": { "shape": "ring", "N": 5, "max_degree": 5, "seed": 0 },
//!   "run":      { "adaptive": true, "gamma": 0.5, "tol": 1e-4 },
//!   "output":   { "trace": "trace.csv", "table": "comparison.csv", "format": "csv" }
//! }
//! ```
//!
//! Every section and field is optional and defaults to the standard
//! experiment; unknown fields are rejected. `run` accepts every field of
//! [`RunConfig`].

use std::path::{Path, PathBuf};

use adaptive_admm::engine::RunConfig;
use adaptive_admm::network::{build_comm_matrix, gen_augmented_ring, gen_ring, Topology};
use adaptive_admm::problem::{sample_problem, ObjectiveKind, ProblemSpec};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ObjectiveKind,
    /// State dimension of every agent.
    pub n: usize,
    pub seed: u64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self { kind: ObjectiveKind::Quadratic, n: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Ring,
    AugmentedRing,
}

impl Shape {
    pub fn label(self) -> &'static str {
        match self {
            Shape::Ring => "ring",
            Shape::AugmentedRing => "augmented_ring",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub shape: Shape,
    #[serde(rename = "N")]
    pub agents: usize,
    pub max_degree: usize,
    pub seed: u64,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self { shape: Shape::Ring, agents: 5, max_degree: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Trace written by `run`.
    pub trace: Option<PathBuf>,
    /// Comparison table written by `compare`.
    pub table: Option<PathBuf>,
    pub format: Format,
    /// Append wall-clock time to trace records.
    pub wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemSection,
    pub topology: TopologySection,
    pub run: RunConfig,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            problem: ProblemSection::default(),
            topology: TopologySection::default(),
            run: RunConfig::default(),
            output: OutputSection::default(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Invalid { field: field.to_string(), reason: reason.into() }
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            CliError::Invalid { field, reason: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.problem.n == 0 {
            return Err(invalid("problem.n", "must be at least 1"));
        }
        validate_agents(self.topology.agents, "topology.N")?;
        if self.topology.max_degree < 2 {
            return Err(invalid("topology.max_degree", "must be at least 2 to contain the ring"));
        }
        self.run.validate().map_err(|e| match e {
            adaptive_admm::Error::InvalidConfig { field, reason } => CliError::Invalid { field: format!("run.{field}"), reason },
            other => other.into(),
        })
    }

    /// Topology with `agents` agents; `offset` shifts the augmentation seed.
    pub fn build_topology(&self, agents: usize, offset: u64) -> Result<Topology> {
        let t = match self.topology.shape {
            Shape::Ring => gen_ring(agents)?,
            Shape::AugmentedRing => {
                gen_augmented_ring(agents, self.topology.max_degree, self.topology.seed.wrapping_add(offset))?
            }
        };
        Ok(t)
    }

    /// Problem instance over `topology`; `offset` shifts the problem seed.
    pub fn build_problem(&self, topology: &Topology, offset: u64) -> Result<ProblemSpec> {
        let s = build_comm_matrix(topology);
        Ok(sample_problem(&s, self.problem.n, self.problem.kind, self.problem.seed.wrapping_add(offset))?)
    }
}

pub fn validate_agents(agents: usize, field: &str) -> Result<()> {
    if agents < 3 {
        return Err(invalid(field, format!("a ring needs at least 3 agents, got {agents}")));
    }
    Ok(())
}
