//! Orchestration behind the `priorart` command: run configuration, the
//! featurize/score/evaluate pipeline, corpus statistics and search.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod search;
pub mod stats;

pub use config::{FeatureMethod, RunConfig};
pub use error::{CliError, CliResult, Stage};
pub use pipeline::{cmd_featurize, cmd_pipeline, run_pipeline, Featurized, FittedModel};
pub use priorart;
pub use search::{cmd_search, SearchHit};
pub use stats::{cmd_stats, CorpusStats};
