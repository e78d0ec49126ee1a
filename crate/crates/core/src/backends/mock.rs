//! Deterministic stand-ins for offline runs and tests.
//!
//! A [`MockScript`] is a JSON document:
//!
//! ```json
//! {
//!   "mllm": {
//!     "max_retries": 2,
//!     "default_reply": "I cannot find it.",
//!     "rules": [
//!       { "role": "generation", "instruction": "the red car", "augmentation": "hflip",
//!         "replies": ["{\"bbox\":[10,20,30,40]}"] },
//!       { "role": "selection", "replies": ["{\"choice\":2}"] },
//!       { "role": "refinement", "prompt_contains": "[10,20,30,40]",
//!         "transport_error": "connection reset" }
//!     ]
//!   },
//!   "segmenter": "box-fill"
//! }
//! ```
//!
//! The first rule whose filters all match a request answers it. `replies`
//! is indexed by attempt number, the last entry repeating. Requests no rule
//! matches get `default_reply`.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, MllmRequest, Role, Segmenter, VisionLanguageModel};
use crate::geometry::{Augmentation, BBox};
use crate::imaging::{box_fill_mask, BinaryMask, Image};

pub const DEFAULT_MOCK_REPLY: &str = "I cannot find it.";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Augmentation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default)]
    pub replies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<String>,
}

impl MockRule {
    pub fn replies(role: Option<Role>, replies: Vec<String>) -> Self {
        Self { role, replies, ..Default::default() }
    }

    pub fn transport_error(role: Option<Role>, message: &str) -> Self {
        Self { role, transport_error: Some(message.to_string()), ..Default::default() }
    }

    pub fn for_instruction(mut self, instruction: &str) -> Self {
        self.instruction = Some(instruction.to_string());
        self
    }

    pub fn for_augmentation(mut self, aug: Augmentation) -> Self {
        self.augmentation = Some(aug);
        self
    }

    pub fn matches(&self, req: &MllmRequest<'_>) -> bool {
        self.role.is_none_or(|r| r == req.role)
            && self.instruction.as_deref().is_none_or(|i| i == req.instruction)
            && self.augmentation.is_none_or(|a| Some(a) == req.augmentation)
            && self.prompt_contains.as_deref().is_none_or(|p| req.prompt.contains(p))
    }
}

fn default_reply() -> String {
    DEFAULT_MOCK_REPLY.to_string()
}

fn default_retries() -> u32 {
    BackendConfig::DEFAULT_MAX_RETRIES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MllmScript {
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_reply")]
    pub default_reply: String,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl Default for MllmScript {
    fn default() -> Self {
        Self { max_retries: default_retries(), default_reply: default_reply(), rules: Vec::new() }
    }
}

/// Scripted vision-language model. Replies are a pure function of the
/// request and the script; the call counter is the only mutable state.
#[derive(Debug, Default)]
pub struct ScriptedMllm {
    script: MllmScript,
    calls: AtomicUsize,
}

impl ScriptedMllm {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Self::from_script(MllmScript { rules, ..Default::default() })
    }

    pub fn from_script(script: MllmScript) -> Self {
        Self { script, calls: AtomicUsize::new(0) }
    }

    /// Answers every request with `reply`.
    pub fn always(reply: &str) -> Self {
        Self::new(vec![MockRule::replies(None, vec![reply.to_string()])])
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.script.max_retries = retries;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn script(&self) -> &MllmScript {
        &self.script
    }
}

impl VisionLanguageModel for ScriptedMllm {
    fn complete(&self, req: &MllmRequest<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let Some(rule) = self.script.rules.iter().find(|r| r.matches(req)) else {
            return Ok(self.script.default_reply.clone());
        };
        if let Some(msg) = &rule.transport_error {
            return Err(BackendError::Transport(msg.clone()));
        }
        let idx = (req.attempt as usize).min(rule.replies.len().saturating_sub(1));
        Ok(rule.replies.get(idx).cloned().unwrap_or_else(|| self.script.default_reply.clone()))
    }

    fn max_retries(&self) -> u32 {
        self.script.max_retries
    }
}

/// Segmenter that returns the pixel-center fill of the prompt box.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoxFillSegmenter;

impl Segmenter for BoxFillSegmenter {
    fn segment(&self, img: &Image, bbox: &BBox) -> Result<BinaryMask, BackendError> {
        Ok(box_fill_mask(bbox, img.dims()))
    }
}

/// Segmenter that ignores its prompt and returns a registered mask, used to
/// bound evaluation from above.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    mask: BinaryMask,
}

impl OracleSegmenter {
    pub fn new(mask: BinaryMask) -> Self {
        Self { mask }
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, _img: &Image, _bbox: &BBox) -> Result<BinaryMask, BackendError> {
        Ok(self.mask.clone())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmenterKind {
    #[default]
    BoxFill,
    /// Returns each sample's ground-truth mask; only meaningful in evaluation.
    Oracle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub mllm: MllmScript,
    #[serde(default)]
    pub segmenter: SegmenterKind,
}

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("invalid mock script {}: {e}", path.display())))
    }

    pub fn mllm(&self) -> ScriptedMllm {
        ScriptedMllm::from_script(self.mllm.clone())
    }
}
