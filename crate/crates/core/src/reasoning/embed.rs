//! Text embedders and an on-disk vector cache.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error("missing credentials: set {0}")]
    Credentials(String),
    #[error("embedding dimension {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("provider returned {found} vectors for {expected} texts")]
    CountMismatch { expected: usize, found: usize },
    #[error("cache entry {0} is corrupt")]
    CorruptCache(String),
    #[error("cache i/o: {0}")]
    Io(#[from] io::Error),
}

pub trait Embedder: Send + Sync {
    /// Identifies the model; part of every cache key.
    fn name(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Deterministic offline embedder: signed feature hashing of unigrams and
/// bigrams, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    name: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            name: format!("hashing-{}", dim.max(1)),
        }
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let tokens = super::phrases::tokenize(text);
        let mut v = vec![0f32; self.dim];
        let mut bump = |feature: &str| {
            let h = Sha256::digest(feature.as_bytes());
            let idx = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize % self.dim;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        };
        for t in &tokens {
            bump(t);
        }
        for w in tokens.windows(2) {
            bump(&format!("{} {}", w[0], w[1]));
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// OpenAI-compatible `/v1/embeddings` client.
pub struct OpenAiEmbedder {
    model: String,
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

pub const OPENAI_EMBEDDING_MODEL: &str = "text-embedding-3-large";

impl OpenAiEmbedder {
    pub fn from_env(model: Option<String>, base_url: Option<String>, timeout: Duration) -> Result<Self, EmbedError> {
        let key = std::env::var("OPENAI_API_KEY").map_err(|_| EmbedError::Credentials("OPENAI_API_KEY".into()))?;
        Ok(Self::new(model, base_url, key, timeout))
    }

    pub fn new(model: Option<String>, base_url: Option<String>, api_key: String, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            model: model.unwrap_or_else(|| OPENAI_EMBEDDING_MODEL.into()),
            base_url: base_url
                .unwrap_or_else(|| "https://api.openai.com".into())
                .trim_end_matches('/')
                .to_string(),
            api_key,
            agent,
        }
    }
}

pub(crate) fn parse_embedding_response(body: &Value, expected: usize) -> Result<Vec<Vec<f32>>, EmbedError> {
    let data = body["data"]
        .as_array()
        .ok_or_else(|| EmbedError::Provider("response has no `data` array".into()))?;
    let mut out = vec![Vec::new(); data.len()];
    for (pos, item) in data.iter().enumerate() {
        let idx = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
        let v = item["embedding"]
            .as_array()
            .ok_or_else(|| EmbedError::Provider("item without `embedding`".into()))?
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| EmbedError::Provider("non-numeric embedding".into()))?;
        if idx >= out.len() {
            return Err(EmbedError::Provider(format!("index {idx} out of range")));
        }
        out[idx] = v;
    }
    if out.len() != expected {
        return Err(EmbedError::CountMismatch {
            expected,
            found: out.len(),
        });
    }
    Ok(out)
}

impl Embedder for OpenAiEmbedder {
    fn name(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let url = format!("{}/v1/embeddings", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .header("authorization", &format!("Bearer {}", self.api_key))
            .send_json(json!({"model": self.model, "input": texts}))
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EmbedError::Provider(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(EmbedError::Provider(format!(
                "HTTP {status}: {}",
                text.chars().take(300).collect::<String>()
            )));
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| EmbedError::Provider(e.to_string()))?;
        parse_embedding_response(&body, texts.len())
    }
}

/// Content-addressed vectors: `<dir>/<key[..2]>/<key>.bin` holding a
/// little-endian u32 dimension followed by f32 values.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn cache_key(model: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update((model.len() as u64).to_le_bytes());
    h.update(model.as_bytes());
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

impl EmbeddingCache {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
        }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.bin"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Vec<f32>>, EmbedError> {
        let bytes = match fs::read(self.path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        if bytes.len() < 4 {
            return Err(EmbedError::CorruptCache(key.into()));
        }
        let dim = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 4 + 4 * dim {
            return Err(EmbedError::CorruptCache(key.into()));
        }
        Ok(Some(
            bytes[4..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ))
    }

    pub fn put(&self, key: &str, v: &[f32]) -> Result<(), EmbedError> {
        let path = self.path(key);
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent)?;
        let mut bytes = Vec::with_capacity(4 + 4 * v.len());
        bytes.extend_from_slice(&(v.len() as u32).to_le_bytes());
        for x in v {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let tmp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}
