//! Prompt assembly, provider calls, response parsing and run logging.

pub mod config;
pub mod parse;
pub mod persona;
pub mod prompt;
pub mod provider;
pub mod run;
pub mod runlog;
pub mod validate;

pub use config::{derive_run_seed, sub_seed, Decoding, RunConfig};
pub use parse::{normalize_text, parse_response, ParseOptions, ParsedResponse};
pub use persona::Persona;
pub use prompt::{assemble_prompt, permute_pool, permuted_lists, PromptBundle, PromptError};
pub use provider::{
    CassetteMode, CassetteProvider, Completion, CompletionRequest, LiveProvider, ModelProvider,
    ProviderError, RetryPolicy, Vendor,
};
pub use run::{execute_run, HarnessError, RunOptions};
pub use runlog::{LogError, RunLog, RunRecord, SCHEMA_VERSION};
pub use validate::{validate_selection, ValidationResult, ValidationStatus, Violation};
