//! HTTP clients for an OpenAI-style chat-completions endpoint and for a
//! `/segment` box-prompt segmentation service.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendConfig, BackendError, MllmRequest, Segmenter, VisionLanguageModel};
use crate::geometry::BBox;
use crate::imaging::{mask_decode, BinaryMask, Image};

fn build_client(cfg: &BackendConfig) -> Result<Client, BackendError> {
    cfg.validate()?;
    Client::builder()
        .timeout(cfg.timeout())
        .build()
        .map_err(|e| BackendError::Transport(format!("cannot build HTTP client: {e}")))
}

fn post_json(client: &Client, cfg: &BackendConfig, path: &str, body: &Value) -> Result<Value, BackendError> {
    let mut req = client.post(cfg.url(path)).json(body);
    if let Some(key) = cfg.api_key.as_deref().filter(|k| !k.is_empty()) {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(BackendError::Transport(format!("HTTP {status}: {}", truncate(&text, 300))));
    }
    serde_json::from_str(&text)
        .map_err(|e| BackendError::Transport(format!("response is not JSON ({e}): {}", truncate(&text, 300))))
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub fn png_data_url(img: &Image) -> String {
    format!("data:image/png;base64,{}", B64.encode(img.to_png()))
}

/// Request body for `POST {endpoint}/v1/chat/completions`.
pub fn chat_completion_body(model: &str, temperature: f64, req: &MllmRequest<'_>) -> Value {
    json!({
        "model": model,
        "temperature": temperature,
        "messages": [{
            "role": "user",
            "content": [
                { "type": "text", "text": req.wire_prompt() },
                { "type": "image_url", "image_url": { "url": png_data_url(req.image) } }
            ]
        }]
    })
}

/// Text of the first choice. Accepts both plain-string content and the
/// list-of-parts form some servers return.
pub fn first_choice_text(resp: &Value) -> Option<String> {
    let content = resp.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let text: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            (!text.is_empty()).then(|| text.join(""))
        }
        _ => None,
    }
}

pub struct HttpMllm {
    cfg: BackendConfig,
    client: Client,
}

impl HttpMllm {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        let client = build_client(&cfg)?;
        Ok(Self { cfg, client })
    }
}

impl VisionLanguageModel for HttpMllm {
    fn complete(&self, req: &MllmRequest<'_>) -> Result<String, BackendError> {
        let body = chat_completion_body(&self.cfg.model, self.cfg.temperature, req);
        let resp = post_json(&self.client, &self.cfg, "v1/chat/completions", &body)?;
        first_choice_text(&resp)
            .ok_or_else(|| BackendError::Transport("chat completion has no message text".into()))
    }

    fn max_retries(&self) -> u32 {
        self.cfg.max_retries
    }
}

/// Body of `POST {endpoint}/segment`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentRequestBody {
    pub image_png_b64: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

/// Reply of `POST {endpoint}/segment`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentResponseBody {
    pub mask_png_b64: String,
}

pub struct HttpSegmenter {
    cfg: BackendConfig,
    client: Client,
}

impl HttpSegmenter {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        let client = build_client(&cfg)?;
        Ok(Self { cfg, client })
    }
}

impl Segmenter for HttpSegmenter {
    fn segment(&self, img: &Image, bbox: &BBox) -> Result<BinaryMask, BackendError> {
        let body = SegmentRequestBody { image_png_b64: B64.encode(img.to_png()), bbox: bbox.to_array() };
        let body = serde_json::to_value(&body).expect("segment request serializes");
        let resp = post_json(&self.client, &self.cfg, "segment", &body)?;
        let resp: SegmentResponseBody = serde_json::from_value(resp)
            .map_err(|e| BackendError::Transport(format!("malformed /segment reply: {e}")))?;
        let png = B64
            .decode(resp.mask_png_b64.trim())
            .map_err(|e| BackendError::Transport(format!("mask_png_b64 is not base64: {e}")))?;
        Ok(mask_decode(&png)?)
    }
}
