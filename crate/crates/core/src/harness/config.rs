use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::persona::Persona;
use crate::condition::TaskCondition;

/// Decoding parameters sent to a provider. Vendor-specific controls such as
/// `reasoning_effort` go in `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn one() -> f64 {
    1.0
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            extra: BTreeMap::new(),
        }
    }
}

impl Decoding {
    /// Stable JSON form used in digests.
    pub fn canonical_json(&self) -> String {
        // BTreeMap keys and fixed field order make this deterministic
        serde_json::to_string(self).expect("decoding serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Manifest-level model label, e.g. `gpt5`.
    pub model: String,
    pub persona: Persona,
    pub condition: TaskCondition,
    pub replication_index: u32,
    pub seed: u64,
    #[serde(default)]
    pub decoding: Decoding,
}

impl RunConfig {
    /// Stable identifier of the (model, persona, condition, replication) cell.
    pub fn run_id(&self) -> String {
        format!(
            "{}/{}/{}/{:04}",
            self.model, self.persona, self.condition, self.replication_index
        )
    }
}

/// Per-run seed derived from the manifest seed and the run's coordinates.
pub fn derive_run_seed(
    master: u64,
    model: &str,
    persona: Persona,
    condition: TaskCondition,
    replication_index: u32,
) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for part in [model, persona.code(), condition.code()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(replication_index.to_le_bytes());
    first_u64(&h.finalize())
}

/// Derives an independent stream seed from a parent seed and a label.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    first_u64(&h.finalize())
}

fn first_u64(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    u64::from_le_bytes(b)
}
