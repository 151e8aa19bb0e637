//! Content-addressed record/replay of provider responses.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Completion, CompletionRequest, ModelProvider, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CassetteMode {
    /// Serve only recorded responses; a miss is an error.
    Replay,
    /// Always call the inner provider and store the response.
    Record,
    /// Serve recorded responses, recording on a miss.
    Auto,
}

/// Digest of (model, system text, user text, decoding).
pub fn cassette_key(request: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    for part in [
        request.model.as_str(),
        request.system.as_str(),
        request.user.as_str(),
        request.decoding.canonical_json().as_str(),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct Cassette {
    key: String,
    model: String,
    completion: Completion,
}

pub struct CassetteProvider {
    dir: PathBuf,
    mode: CassetteMode,
    inner: Option<Arc<dyn ModelProvider>>,
    name: String,
}

impl CassetteProvider {
    pub fn new(dir: impl AsRef<Path>, mode: CassetteMode, inner: Option<Arc<dyn ModelProvider>>) -> Self {
        let name = match &inner {
            Some(p) => format!("cassette+{}", p.name()),
            None => "cassette".to_string(),
        };
        Self {
            dir: dir.as_ref().to_path_buf(),
            mode,
            inner,
            name,
        }
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn load(&self, key: &str) -> Result<Option<Completion>, ProviderError> {
        let path = self.path_for(key);
        match std::fs::read(&path) {
            Ok(bytes) => {
                let c: Cassette = serde_json::from_slice(&bytes).map_err(|e| {
                    ProviderError::Storage(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}: {e}", path.display()),
                    ))
                })?;
                Ok(Some(c.completion))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn store(&self, key: &str, model: &str, completion: &Completion) -> Result<(), ProviderError> {
        let path = self.path_for(key);
        let dir = path.parent().expect("cassette path has a parent");
        std::fs::create_dir_all(dir)?;
        let body = serde_json::to_vec_pretty(&Cassette {
            key: key.to_string(),
            model: model.to_string(),
            completion: completion.clone(),
        })
        .expect("cassette serializes");
        // write-then-rename so readers never see a partial file
        static NEXT: AtomicU64 = AtomicU64::new(0);
        let tmp = dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            NEXT.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn record(&self, key: &str, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let inner = self
            .inner
            .as_ref()
            .ok_or_else(|| ProviderError::CassetteMiss(key.to_string()))?;
        let completion = inner.complete(request)?;
        self.store(key, &request.model, &completion)?;
        Ok(completion)
    }
}

impl ModelProvider for CassetteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let key = cassette_key(request);
        match self.mode {
            CassetteMode::Replay => self
                .load(&key)?
                .ok_or(ProviderError::CassetteMiss(key)),
            CassetteMode::Record => self.record(&key, request),
            CassetteMode::Auto => match self.load(&key)? {
                Some(c) => Ok(c),
                None => self.record(&key, request),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Decoding;
    use crate::harness::provider::{RequestHints, Usage};
    use std::sync::atomic::AtomicU32;

    struct Counter(AtomicU32);

    impl ModelProvider for Counter {
        fn name(&self) -> &str {
            "counter"
        }
        fn complete(&self, _: &CompletionRequest) -> Result<Completion, ProviderError> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(Completion {
                text: format!("response {n}"),
                usage: Usage::default(),
            })
        }
    }

    fn request(user: &str, seed: u64) -> CompletionRequest {
        CompletionRequest {
            model: "m".into(),
            system: "s".into(),
            user: user.into(),
            decoding: Decoding::default(),
            hints: RequestHints {
                seed,
                ..Default::default()
            },
        }
    }

    #[test]
    fn key_ignores_hints_but_not_prompt() {
        assert_eq!(cassette_key(&request("u", 1)), cassette_key(&request("u", 2)));
        assert_ne!(cassette_key(&request("u", 1)), cassette_key(&request("v", 1)));
        let mut r = request("u", 1);
        r.decoding.temperature = 0.5;
        assert_ne!(cassette_key(&r), cassette_key(&request("u", 1)));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let inner = Arc::new(Counter(AtomicU32::new(0)));
        let rec = CassetteProvider::new(dir.path(), CassetteMode::Auto, Some(inner.clone()));
        let first = rec.complete(&request("u", 0)).unwrap();
        let again = rec.complete(&request("u", 0)).unwrap();
        assert_eq!(first, again);
        assert_eq!(inner.0.load(Ordering::SeqCst), 1);

        let replay = CassetteProvider::new(dir.path(), CassetteMode::Replay, None);
        assert_eq!(replay.complete(&request("u", 0)).unwrap(), first);
        assert!(matches!(
            replay.complete(&request("other", 0)),
            Err(ProviderError::CassetteMiss(_))
        ));
    }
}
