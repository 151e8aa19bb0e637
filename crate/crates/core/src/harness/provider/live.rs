//! HTTP clients for the vendor APIs. Credentials come from environment
//! variables only.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Completion, CompletionRequest, ModelProvider, ProviderError, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vendor {
    OpenAi,
    Anthropic,
    Google,
    /// Alibaba DashScope through its OpenAI-compatible endpoint.
    DashScope,
}

impl Vendor {
    pub fn default_base_url(self) -> &'static str {
        match self {
            Vendor::OpenAi => "https://api.openai.com/v1",
            Vendor::Anthropic => "https://api.anthropic.com/v1",
            Vendor::Google => "https://generativelanguage.googleapis.com/v1beta",
            Vendor::DashScope => "https://dashscope-intl.aliyuncs.com/compatible-mode/v1",
        }
    }

    pub fn key_env(self) -> &'static str {
        match self {
            Vendor::OpenAi => "OPENAI_API_KEY",
            Vendor::Anthropic => "ANTHROPIC_API_KEY",
            Vendor::Google => "GEMINI_API_KEY",
            Vendor::DashScope => "DASHSCOPE_API_KEY",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Vendor::OpenAi => "openai",
            Vendor::Anthropic => "anthropic",
            Vendor::Google => "google",
            Vendor::DashScope => "dashscope",
        }
    }
}

pub struct LiveProvider {
    vendor: Vendor,
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveProvider {
    /// Reads the API key from the vendor's environment variable.
    pub fn from_env(vendor: Vendor, base_url: Option<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let api_key = std::env::var(vendor.key_env())
            .map_err(|_| ProviderError::Credentials(vendor.key_env().to_string()))?;
        Ok(Self::new(vendor, base_url, api_key, timeout))
    }

    pub fn new(vendor: Vendor, base_url: Option<String>, api_key: String, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            vendor,
            base_url: base_url
                .unwrap_or_else(|| vendor.default_base_url().to_string())
                .trim_end_matches('/')
                .to_string(),
            api_key,
            agent,
        }
    }

    fn post(&self, url: &str, headers: &[(&str, String)], body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        for (k, v) in headers {
            req = req.header(*k, v.as_str());
        }
        let mut resp = req.send_json(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| ProviderError::Transient(format!("undecodable response body: {e}"))),
            408 | 409 | 425 | 429 | 500..=599 => {
                Err(ProviderError::Transient(format!("HTTP {status}: {}", snippet(&text))))
            }
            _ => Err(ProviderError::Fatal(format!("HTTP {status}: {}", snippet(&text)))),
        }
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(300).collect()
}

fn transport_error(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(t) => ProviderError::Timeout(t.to_string()),
        other => ProviderError::Transient(other.to_string()),
    }
}

/// Merges decoding extras (e.g. `reasoning_effort`) into a request body.
fn with_extras(mut body: Value, request: &CompletionRequest) -> Value {
    if let Some(obj) = body.as_object_mut() {
        for (k, v) in &request.decoding.extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    body
}

pub(crate) fn openai_body(request: &CompletionRequest) -> Value {
    with_extras(
        json!({
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
        }),
        request,
    )
}

pub(crate) fn anthropic_body(request: &CompletionRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "system": request.system,
        "messages": [{"role": "user", "content": request.user}],
        "temperature": request.decoding.temperature,
        "top_p": request.decoding.top_p,
        "max_tokens": 8192,
    });
    body = with_extras(body, request);
    body
}

pub(crate) fn google_body(request: &CompletionRequest) -> Value {
    let mut config = json!({
        "temperature": request.decoding.temperature,
        "topP": request.decoding.top_p,
    });
    if let Some(obj) = config.as_object_mut() {
        for (k, v) in &request.decoding.extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    json!({
        "systemInstruction": {"parts": [{"text": request.system}]},
        "contents": [{"role": "user", "parts": [{"text": request.user}]}],
        "generationConfig": config,
    })
}

fn missing(what: &str) -> ProviderError {
    ProviderError::Transient(format!("response missing {what}"))
}

pub(crate) fn openai_text(v: &Value) -> Result<Completion, ProviderError> {
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| missing("choices[0].message.content"))?;
    Ok(Completion {
        text: text.to_string(),
        usage: Usage {
            input_tokens: v["usage"]["prompt_tokens"].as_u64(),
            output_tokens: v["usage"]["completion_tokens"].as_u64(),
        },
    })
}

pub(crate) fn anthropic_text(v: &Value) -> Result<Completion, ProviderError> {
    let blocks = v["content"].as_array().ok_or_else(|| missing("content"))?;
    let text: String = blocks
        .iter()
        .filter(|b| b["type"] == "text")
        .filter_map(|b| b["text"].as_str())
        .collect();
    Ok(Completion {
        text,
        usage: Usage {
            input_tokens: v["usage"]["input_tokens"].as_u64(),
            output_tokens: v["usage"]["output_tokens"].as_u64(),
        },
    })
}

pub(crate) fn google_text(v: &Value) -> Result<Completion, ProviderError> {
    let parts = v["candidates"][0]["content"]["parts"]
        .as_array()
        .ok_or_else(|| missing("candidates[0].content.parts"))?;
    let text: String = parts
        .iter()
        .filter(|p| p["thought"] != true)
        .filter_map(|p| p["text"].as_str())
        .collect();
    Ok(Completion {
        text,
        usage: Usage {
            input_tokens: v["usageMetadata"]["promptTokenCount"].as_u64(),
            output_tokens: v["usageMetadata"]["candidatesTokenCount"].as_u64(),
        },
    })
}

impl ModelProvider for LiveProvider {
    fn name(&self) -> &str {
        self.vendor.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        match self.vendor {
            Vendor::OpenAi | Vendor::DashScope => {
                let url = format!("{}/chat/completions", self.base_url);
                let auth = vec![("authorization", format!("Bearer {}", self.api_key))];
                openai_text(&self.post(&url, &auth, &openai_body(request))?)
            }
            Vendor::Anthropic => {
                let url = format!("{}/messages", self.base_url);
                let headers = vec![
                    ("x-api-key", self.api_key.clone()),
                    ("anthropic-version", "2023-06-01".to_string()),
                ];
                anthropic_text(&self.post(&url, &headers, &anthropic_body(request))?)
            }
            Vendor::Google => {
                let url = format!("{}/models/{}:generateContent", self.base_url, request.model);
                let headers = vec![("x-goog-api-key", self.api_key.clone())];
                google_text(&self.post(&url, &headers, &google_body(request))?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Decoding;
    use crate::harness::provider::RequestHints;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn request() -> CompletionRequest {
        let mut decoding = Decoding::default();
        decoding
            .extra
            .insert("reasoning_effort".into(), json!("high"));
        CompletionRequest {
            model: "gpt-5-2025-08-07".into(),
            system: "sys".into(),
            user: "usr".into(),
            decoding,
            hints: RequestHints::default(),
        }
    }

    #[test]
    fn request_bodies() {
        let r = request();
        let b = openai_body(&r);
        assert_eq!(b["messages"][0]["content"], "sys");
        assert_eq!(b["temperature"], 1.0);
        assert_eq!(b["reasoning_effort"], "high");
        let b = anthropic_body(&r);
        assert_eq!(b["system"], "sys");
        let b = google_body(&r);
        assert_eq!(b["generationConfig"]["topP"], 1.0);
    }

    #[test]
    fn response_extraction() {
        let v = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        let c = openai_text(&v).unwrap();
        assert_eq!(c.text, "hi");
        assert_eq!(c.usage.input_tokens, Some(3));
        let v = json!({"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]});
        assert_eq!(anthropic_text(&v).unwrap().text, "ab");
        let v = json!({"candidates": [{"content": {"parts": [{"text": "x", "thought": true}, {"text": "y"}]}}]});
        assert_eq!(google_text(&v).unwrap().text, "y");
        assert!(openai_text(&json!({})).is_err());
    }

    fn serve_once(response: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut s, _)) = listener.accept() {
                let mut buf = [0u8; 8192];
                let _ = s.read(&mut buf);
                let _ = s.write_all(response.as_bytes());
            }
        });
        format!("http://{addr}")
    }

    #[test]
    fn local_server_round_trip() {
        let body = r#"{"choices":[{"message":{"content":"[]"}}]}"#;
        let resp: &'static str = Box::leak(
            format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .into_boxed_str(),
        );
        let url = serve_once(resp);
        let p = LiveProvider::new(Vendor::OpenAi, Some(url), "k".into(), Duration::from_secs(5));
        assert_eq!(p.complete(&request()).unwrap().text, "[]");
    }

    #[test]
    fn rate_limit_is_retryable_and_bad_request_is_not() {
        let url = serve_once("HTTP/1.1 429 Too Many Requests\r\ncontent-length: 0\r\nconnection: close\r\n\r\n");
        let p = LiveProvider::new(Vendor::OpenAi, Some(url), "k".into(), Duration::from_secs(5));
        assert!(p.complete(&request()).unwrap_err().is_retryable());
        let url = serve_once("HTTP/1.1 400 Bad Request\r\ncontent-length: 0\r\nconnection: close\r\n\r\n");
        let p = LiveProvider::new(Vendor::OpenAi, Some(url), "k".into(), Duration::from_secs(5));
        assert!(matches!(p.complete(&request()).unwrap_err(), ProviderError::Fatal(_)));
    }

    #[test]
    fn missing_key_is_reported() {
        // an env var name no test sets
        let e = match LiveProvider::from_env(Vendor::DashScope, None, Duration::from_secs(1)) {
            Err(e) => e,
            Ok(_) if std::env::var("DASHSCOPE_API_KEY").is_ok() => return,
            Ok(_) => panic!("expected credentials error"),
        };
        assert!(matches!(e, ProviderError::Credentials(_)));
    }
}
