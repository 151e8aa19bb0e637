use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::RunConfig;
use super::parse::{parse_response, ParseOptions};
use super::prompt::{assemble_prompt, permuted_lists, PromptBundle, PromptError};
use super::provider::{
    complete_with_retry, CompletionRequest, ModelProvider, ProviderError, RequestHints, RetryPolicy,
};
use super::runlog::{ProviderMeta, RunRecord, Timestamps, SCHEMA_VERSION};
use super::validate::{validate_selection, ValidationStatus, Violation};
use crate::library::ConstraintPool;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub parse: ParseOptions,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("prompt assembly for {run_id}: {source}")]
    Prompt {
        run_id: String,
        source: PromptError,
    },
    #[error("provider failure for {run_id}: {source}")]
    Provider {
        run_id: String,
        source: ProviderError,
    },
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn prompt_digest(prompt: &PromptBundle) -> String {
    let mut h = Sha256::new();
    h.update((prompt.system_text.len() as u64).to_le_bytes());
    h.update(prompt.system_text.as_bytes());
    h.update(prompt.user_text.as_bytes());
    hex::encode(h.finalize())
}

/// Builds the prompt, queries the provider, and parses and validates the
/// response. Provider failures after retries are errors and yield no record;
/// parse failures yield a record with status `parse_error`.
pub fn execute_run(
    config: &RunConfig,
    pool: &ConstraintPool,
    provider: &dyn ModelProvider,
    options: &RunOptions,
) -> Result<RunRecord, HarnessError> {
    let run_id = config.run_id();
    let lists = permuted_lists(pool, config.condition, config.seed);
    let prompt = assemble_prompt(config, pool, &lists).map_err(|source| HarnessError::Prompt {
        run_id: run_id.clone(),
        source,
    })?;
    let permutation: Vec<String> = lists
        .iter()
        .flat_map(|l| l.items.iter().map(|&i| pool.get(i).id.clone()))
        .collect();
    let request = CompletionRequest {
        model: config.model.clone(),
        system: prompt.system_text.clone(),
        user: prompt.user_text.clone(),
        decoding: config.decoding.clone(),
        hints: RequestHints {
            condition: Some(config.condition),
            seed: config.seed,
            presented: permutation.clone(),
        },
    };

    let request_ms = now_ms();
    let outcome = complete_with_retry(provider, &request, options.retry).map_err(|source| {
        HarnessError::Provider {
            run_id: run_id.clone(),
            source,
        }
    })?;
    let response_ms = now_ms().max(request_ms);

    let raw = outcome.completion.text;
    let parsed = parse_response(&raw, pool, options.parse);
    let mut validation = validate_selection(&parsed.selections, config.condition, pool);
    for id in &parsed.selections {
        if !permutation.contains(id) {
            validation.violations.push(Violation::NotPresented { id: id.clone() });
            validation.status = ValidationStatus::Invalid;
        }
    }
    if !parsed.problems.is_empty() {
        validation.status = ValidationStatus::ParseError;
        validation.violations.extend(parsed.problems.iter().map(|p| Violation::Parse {
            detail: p.to_string(),
        }));
    }

    Ok(RunRecord {
        schema: SCHEMA_VERSION,
        run_id,
        config: config.clone(),
        permutation,
        prompt_digest: prompt_digest(&prompt),
        raw_response: raw,
        selections: parsed.selections,
        reasons: parsed.reasons,
        compatibility: parsed.compatibility,
        timestamps: Timestamps {
            request_ms,
            response_ms,
        },
        validation,
        fuzzy_matches: parsed.fuzzy_matches,
        provider_meta: Some(ProviderMeta {
            provider: provider.name().to_string(),
            attempts: outcome.attempts,
            input_tokens: outcome.completion.usage.input_tokens,
            output_tokens: outcome.completion.usage.output_tokens,
        }),
    })
}
