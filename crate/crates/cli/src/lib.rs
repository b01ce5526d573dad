//! Library side of the `noisent` binary: configuration handling and one
//! function per subcommand, usable directly from tests.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_eval, cmd_extract, cmd_maskgen, cmd_prompts, cmd_robustness, cmd_stats, cmd_synthcorpus,
    cmd_train, cmd_validate, with_pool, ClientMode, Outcome, PromptJob,
};
pub use config::RunConfig;
