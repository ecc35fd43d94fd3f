//! Network assembly: blocks, the full model, configuration, accounting, and
//! checkpoint serialization.

pub mod accounting;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod model;

pub use accounting::{count_flops, count_params, FlopReport, FLOP_CONVENTION};
pub use config::{parse_config_text, ModelConfig, RunConfig};
pub use model::DedustNet;
