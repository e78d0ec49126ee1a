//! Clients for the two external model roles: a vision-language model queried
//! in three prompt roles, and a box-promptable segmenter.
//!
//! Live clients speak HTTP (`http`); `mock` holds deterministic scripted
//! stand-ins used by tests and offline runs.

pub mod http;
pub mod mock;
pub mod parse;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, ImageDims};
use crate::imaging::{BinaryMask, Image, ImagingError};

pub use http::{HttpMllm, HttpSegmenter};
pub use mock::{BoxFillSegmenter, MockRule, MockScript, OracleSegmenter, ScriptedMllm, SegmenterKind};
pub use parse::{parse_generation_reply, parse_selection_reply, ParseError};

pub const ENV_MLLM_URL: &str = "SEG_AGENT_MLLM_URL";
pub const ENV_MLLM_MODEL: &str = "SEG_AGENT_MLLM_MODEL";
pub const ENV_SEG_URL: &str = "SEG_AGENT_SEG_URL";
pub const ENV_API_KEY: &str = "SEG_AGENT_API_KEY";

/// Appended to the prompt when a reply could not be parsed and the request
/// is retried.
pub const FORMAT_REMINDER: &str = "Respond with only the JSON object and nothing else.";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    BadMaskFormat(#[from] ImagingError),
    #[error("segmenter returned a {actual} mask for a {expected} image")]
    DimsMismatch { expected: ImageDims, actual: ImageDims },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

/// The prompt role a vision-language request is issued in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generation,
    Selection,
    Refinement,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Generation => "generation",
            Role::Selection => "selection",
            Role::Refinement => "refinement",
        })
    }
}

/// One vision-language request.
#[derive(Debug, Clone)]
pub struct MllmRequest<'a> {
    pub role: Role,
    pub image: &'a Image,
    pub instruction: &'a str,
    /// Fully rendered prompt text, including any serialized candidate list.
    pub prompt: String,
    /// Boxes referenced by the prompt (the numbered marks for selection).
    pub context: Vec<BBox>,
    /// Augmentation that produced `image`, for generation requests.
    pub augmentation: Option<crate::geometry::Augmentation>,
    /// Zero-based attempt number; retries append [`FORMAT_REMINDER`].
    pub attempt: u32,
}

impl MllmRequest<'_> {
    /// Prompt text as sent on the wire for this attempt.
    pub fn wire_prompt(&self) -> String {
        if self.attempt == 0 {
            self.prompt.clone()
        } else {
            format!("{}\n{}", self.prompt, FORMAT_REMINDER)
        }
    }
}

/// Structured content recovered from a reply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    /// A box in the frame of the request image, already clamped to it.
    Bbox(BBox),
    /// A 1-based mark index.
    Choice(usize),
}

/// Raw reply text together with the outcome of parsing it under the
/// request role's grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MllmReply {
    pub raw_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Payload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
}

impl MllmReply {
    pub fn parse(req: &MllmRequest<'_>, raw_text: String) -> Self {
        let result = match req.role {
            Role::Generation | Role::Refinement => {
                parse_generation_reply(&raw_text, req.image.dims()).map(Payload::Bbox)
            }
            Role::Selection => parse_selection_reply(&raw_text, req.context.len()).map(Payload::Choice),
        };
        match result {
            Ok(p) => Self { raw_text, parsed: Some(p), parse_error: None },
            Err(e) => Self { raw_text, parsed: None, parse_error: Some(e.to_string()) },
        }
    }
}

/// Every attempt made for one logical query; the last attempt parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub attempts: Vec<MllmReply>,
    pub payload: Payload,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("transport failure after {} attempt(s): {message}", attempts.len() + 1)]
    Transport { attempts: Vec<MllmReply>, message: String },
    #[error("no parseable reply after {} attempt(s)", attempts.len())]
    ParseFailure { attempts: Vec<MllmReply> },
}

impl QueryError {
    pub fn attempts(&self) -> &[MllmReply] {
        match self {
            QueryError::Transport { attempts, .. } | QueryError::ParseFailure { attempts } => attempts,
        }
    }

    /// Number of backend calls issued, including a call that failed in
    /// transport.
    pub fn calls(&self) -> usize {
        match self {
            QueryError::Transport { attempts, .. } => attempts.len() + 1,
            QueryError::ParseFailure { attempts } => attempts.len(),
        }
    }
}

/// A chat-style vision-language model.
pub trait VisionLanguageModel: Send + Sync {
    /// Issues one request and returns the reply text.
    fn complete(&self, req: &MllmRequest<'_>) -> Result<String, BackendError>;

    /// How many times a request is re-sent after an unparseable reply.
    fn max_retries(&self) -> u32 {
        BackendConfig::DEFAULT_MAX_RETRIES
    }
}

/// A segmenter prompted with a single box.
pub trait Segmenter: Send + Sync {
    fn segment(&self, img: &Image, bbox: &BBox) -> Result<BinaryMask, BackendError>;
}

/// Sends `req`, retrying with a format reminder while the reply fails to
/// parse, up to the model's retry budget. Transport errors are not retried.
pub fn mllm_query(model: &dyn VisionLanguageModel, req: &MllmRequest<'_>) -> Result<QueryOutcome, QueryError> {
    let budget = model.max_retries();
    let mut attempts = Vec::new();
    for attempt in 0..=budget {
        let req = MllmRequest { attempt, ..req.clone() };
        let raw = match model.complete(&req) {
            Ok(raw) => raw,
            Err(e) => return Err(QueryError::Transport { attempts, message: e.to_string() }),
        };
        let reply = MllmReply::parse(&req, raw);
        let payload = reply.parsed;
        attempts.push(reply);
        if let Some(payload) = payload {
            return Ok(QueryOutcome { attempts, payload });
        }
        log::debug!("{} reply unparseable (attempt {})", req.role, attempt + 1);
    }
    Err(QueryError::ParseFailure { attempts })
}

/// Runs the segmenter and enforces that the mask matches the image size.
pub fn segment(segmenter: &dyn Segmenter, img: &Image, bbox: &BBox) -> Result<BinaryMask, BackendError> {
    let mask = segmenter.segment(img, bbox)?;
    if mask.dims() != img.dims() {
        return Err(BackendError::DimsMismatch { expected: img.dims(), actual: mask.dims() });
    }
    Ok(mask)
}

/// Connection settings for a live backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "BackendConfig::default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "BackendConfig::default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl BackendConfig {
    pub const DEFAULT_TIMEOUT_SECS: f64 = 60.0;
    pub const DEFAULT_MAX_RETRIES: u32 = 2;

    fn default_timeout() -> f64 {
        Self::DEFAULT_TIMEOUT_SECS
    }

    fn default_retries() -> u32 {
        Self::DEFAULT_MAX_RETRIES
    }

    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: String::new(),
            timeout_secs: Self::DEFAULT_TIMEOUT_SECS,
            max_retries: Self::DEFAULT_MAX_RETRIES,
            temperature: 0.0,
            api_key: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.endpoint.trim().is_empty() {
            return Err(BackendError::Config("endpoint URL is empty".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(BackendError::Config(format!("timeout must be > 0, got {}", self.timeout_secs)));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// `endpoint` joined with `path`, without doubling the slash.
    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint.trim_end_matches('/'), path.trim_start_matches('/'))
    }
}
