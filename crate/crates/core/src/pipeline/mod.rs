//! Offline map preprocessing, per-query localization and the command line.

pub mod cli;
mod config;
mod localize;
mod map;

use std::path::PathBuf;

use thiserror::Error;

use crate::dynfilter::DynFilterError;
use crate::evalx::EvalError;
use crate::features::FeatureError;
use crate::geom::GeomError;
use crate::io::IoError;
use crate::mapstore::MapError;
use crate::render::RenderError;
use crate::retrieval::RetrievalError;
use crate::synthgen::SynthError;

pub use config::{PipelineConfig, Variant};
pub use localize::{
    load_queries, localize, localize_with_hook, run_localize, LocalizationResult, PairTrace, QueryInput, RunSummary,
    StageTimings,
};
pub use map::{load_map, map_checksum, preprocess_map, BuildReport, BuildStatus, MapArtifacts};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("no built map in {0} (run `build-map` first)")]
    MapNotBuilt(PathBuf),
    #[error("map in {0} is out of date for these inputs or parameters (run `build-map` again)")]
    MapStale(PathBuf),
    #[error("missing input file {0}")]
    MissingFile(PathBuf),
    #[error("{0}")]
    InvalidInput(String),
    #[error("query {0}: no database image produced a pose")]
    NoPoseFound(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    DynFilter(#[from] DynFilterError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// 1 for usage and configuration errors, 2 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            _ => 2,
        }
    }
}
