//! Grid navigation benchmark: environment generation, the flat, two-level and
//! hierarchical planners, and their evaluation.

mod experiment;
mod methods;
mod world;

use thiserror::Error;

use crate::executive::ExecError;
use crate::grounding::GroundingError;
use crate::hierarchy::HierarchyError;
use crate::kb::ParseError;
use crate::pomdp::PomdpError;

pub use experiment::{
    methods_for, metrics, run_config, run_experiment, sample_tasks, write_runs, write_summary, write_timings,
    ConfigResult, ExperimentParams, MeanSd, Summary,
};
pub use methods::{init_tlp, run_fp, run_hp, run_tlp, Method, MethodParams, RunRecord, Scenario, Task, TlpInit};
pub use world::{
    generate_world, kernel_weights, knowledge_base_text, shortest_path, table2, ConfigRow, Dir, EnvConfig, GridWorld,
    InitialBelief,
};

#[derive(Debug, Error)]
pub enum NavError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cell {1} is unreachable from cell {0}")]
    Unreachable(usize, usize),
    #[error("TLP needs a known initial building")]
    NeedsKnownStart,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Generated environment plus its knowledge documents.
pub fn generate_environment(cfg: &EnvConfig) -> Result<(GridWorld, String, String), NavError> {
    let world = generate_world(cfg)?;
    let (general, specific) = knowledge_base_text(&world);
    Ok((world, general, specific))
}
