//! Prompt extension, camera-motion classification and toy text embeddings.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::camera::MotionCategory;
use crate::tensor::RngStream;
use crate::{Error, Result};

/// System instruction sent with every extension request.
pub const EXTENSION_INSTRUCTION: &str = include_str!("../resources/prompt_extension_v1.txt");
/// Template used when no endpoint is available; `{prompt}` is substituted.
pub const OFFLINE_TEMPLATE: &str = include_str!("../resources/offline_extension_v1.txt");
pub const CLASSIFICATION_INSTRUCTION: &str =
    include_str!("../resources/camera_classification_v1.txt");

pub const ENV_ENDPOINT: &str = "DCDM_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "DCDM_LLM_MODEL";
pub const ENV_API_KEY: &str = "DCDM_LLM_API_KEY";

pub const MAX_PROMPT_BYTES: usize = 8192;
pub const DEFAULT_EMBED_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt(String);

impl Prompt {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Validation("prompt is empty".into()));
        }
        if text.len() > MAX_PROMPT_BYTES {
            return Err(Error::Validation(format!(
                "prompt is {} bytes, limit is {MAX_PROMPT_BYTES}",
                text.len()
            )));
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    Endpoint,
    OfflineFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedPrompt {
    pub text: String,
    pub source: PromptSource,
    pub original: Prompt,
    /// Set when the endpoint was asked but its answer could not be used.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: Option<String>,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_key_env() -> Option<String> {
    Some(ENV_API_KEY.to_string())
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, timeout_secs: f64) -> Result<Self> {
        let cfg = Self {
            base_url: base_url.into(),
            model: model.into(),
            timeout_secs,
            api_key_env: default_key_env(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `DCDM_LLM_ENDPOINT` and `DCDM_LLM_MODEL`; `None` when no
    /// endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.trim().is_empty())?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        Some(Self {
            base_url,
            model,
            timeout_secs: default_timeout(),
            api_key_env: default_key_env(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config(format!(
                "timeout {} must be > 0",
                self.timeout_secs
            )));
        }
        if self.base_url.trim().is_empty() {
            return Err(Error::Config("endpoint base URL is empty".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn api_key(&self) -> Option<String> {
        self.api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
            .filter(|k| !k.is_empty())
    }

    /// One chat-completion round trip; returns the trimmed message content.
    pub fn chat(&self, system: &str, user: &str) -> Result<String> {
        self.validate()?;
        let timeout = Duration::from_secs_f64(self.timeout_secs);
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let mut request = agent.post(&self.url());
        if let Some(key) = self.api_key() {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0,
        });
        let response = request.send_json(body).map_err(|e| match e {
            ureq::Error::Status(code, resp) => Error::Transport {
                status: Some(code),
                detail: resp.status_text().to_string(),
            },
            ureq::Error::Transport(t) => Error::Transport {
                status: None,
                detail: t.to_string(),
            },
        })?;
        let value: serde_json::Value = response.into_json().map_err(|e| Error::Transport {
            status: None,
            detail: format!("unreadable response body: {e}"),
        })?;
        Ok(value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .trim()
            .to_string())
    }
}

/// Where prompt extension is computed.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtensionMode {
    Endpoint(LlmEndpointConfig),
    Offline,
}

fn offline_extension(p: &Prompt) -> String {
    OFFLINE_TEMPLATE.replace("{prompt}", p.text()).trim_end().to_string()
}

/// Rewrites `p` into an explicit description.
///
/// An endpoint that answers with empty content degrades to the offline
/// template and records a warning; transport failures are errors.
pub fn extend_prompt(p: &Prompt, mode: &ExtensionMode) -> Result<ExtendedPrompt> {
    Prompt::new(p.text())?;
    match mode {
        ExtensionMode::Offline => Ok(ExtendedPrompt {
            text: offline_extension(p),
            source: PromptSource::OfflineFallback,
            original: p.clone(),
            warning: None,
        }),
        ExtensionMode::Endpoint(cfg) => {
            let text = cfg.chat(EXTENSION_INSTRUCTION.trim(), p.text())?;
            if text.is_empty() {
                log::warn!("endpoint returned an empty extension; using offline template");
                return Ok(ExtendedPrompt {
                    text: offline_extension(p),
                    source: PromptSource::OfflineFallback,
                    original: p.clone(),
                    warning: Some("endpoint returned empty content".into()),
                });
            }
            Ok(ExtendedPrompt {
                text,
                source: PromptSource::Endpoint,
                original: p.clone(),
                warning: None,
            })
        }
    }
}

/// Phrase table, checked in order; the first hit wins.
pub const CAMERA_RULES: &[(&[&str], MotionCategory)] = &[
    (&["zoom in", "zooms in", "push in"], MotionCategory::ZoomIn),
    (&["zoom out", "zooms out", "pull back"], MotionCategory::ZoomOut),
    (&["pan left", "pans left", "moves left", "leftward"], MotionCategory::Left),
    (&["pan right", "pans right", "moves right", "rightward"], MotionCategory::Right),
    (
        &["tilt up", "tilts up", "moves up", "upward", "crane up"],
        MotionCategory::Upward,
    ),
    (
        &["tilt down", "tilts down", "moves down", "downward"],
        MotionCategory::Downward,
    ),
];

pub fn classify_camera_motion(p: &Prompt) -> MotionCategory {
    let text = p.text().to_lowercase();
    CAMERA_RULES
        .iter()
        .find(|(phrases, _)| phrases.iter().any(|ph| text.contains(ph)))
        .map(|&(_, m)| m)
        .unwrap_or(MotionCategory::Static)
}

/// Asks the endpoint for a label; unparseable answers fall back to the rule
/// table.
pub fn classify_with_endpoint(p: &Prompt, cfg: &LlmEndpointConfig) -> Result<MotionCategory> {
    let answer = cfg.chat(CLASSIFICATION_INSTRUCTION.trim(), p.text())?;
    Ok(answer
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '_')
        .parse()
        .unwrap_or_else(|_| {
            log::warn!("endpoint label {answer:?} not recognised; using rule table");
            classify_camera_motion(p)
        }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f32>,
    pub source_hash: u64,
}

impl TextEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &TextEmbedding) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

const EMBED_SEED: u64 = 0xDC_D0_0E_4B;

/// Sum of pseudo-random Gaussian directions, one per character trigram of
/// the lowercased text (padded with boundary marks), then L2-normalized.
pub fn embed_text(text: &str, dim: usize) -> Result<TextEmbedding> {
    if dim < 8 {
        return Err(Error::Validation(format!("embedding dim {dim} < 8")));
    }
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    let mut acc = vec![0.0f64; dim];
    let mut buf = [0u8; 12];
    for w in chars.windows(3).chain((chars.len() < 3).then_some(&chars[..])) {
        let mut key = Vec::with_capacity(12);
        for &c in w {
            key.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
        }
        let mut rng = RngStream::new(EMBED_SEED, "embed", fnv1a64(&key));
        for a in acc.iter_mut() {
            *a += rng.gaussian_f64();
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let vector = if norm > 0.0 {
        acc.iter().map(|v| (v / norm) as f32).collect()
    } else {
        let mut v = vec![0.0f32; dim];
        v[0] = 1.0;
        v
    };
    Ok(TextEmbedding {
        vector,
        source_hash: fnv1a64(text.as_bytes()),
    })
}

pub fn embed_prompt(p: &ExtendedPrompt, dim: usize) -> Result<TextEmbedding> {
    embed_text(&p.text, dim)
}

/// One prompt per shot, in shot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotPromptList(pub Vec<Prompt>);

impl ShotPromptList {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_shots(&self, shots: usize) -> Result<()> {
        if self.0.len() != shots {
            return Err(Error::Layout(format!(
                "{} shot prompts for {shots} shots",
                self.0.len()
            )));
        }
        Ok(())
    }
}
