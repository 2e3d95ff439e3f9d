//! Chat-completions adapter for a hosted vision-language model.
//!
//! Requests carry the stage's system prompt, the frame as a PNG data URL and
//! a JSON-schema response format. Responses that fail to parse or violate the
//! output contract are retried.

use std::io::Cursor;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{normalize_scores, HazardBackend, HazardError, HazardReport, PromptSet, RawScore, SceneImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub endpoint: String,
    pub hazard_model: String,
    pub emotion_model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Extra attempts after a malformed response.
    pub retries: usize,
    pub timeout_secs: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            hazard_model: "gpt-4o".into(),
            emotion_model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            retries: 3,
            timeout_secs: 30,
        }
    }
}

impl LiveConfig {
    /// Apply `HAZARDNAV_VLM_ENDPOINT`, `HAZARDNAV_VLM_HAZARD_MODEL` and
    /// `HAZARDNAV_VLM_EMOTION_MODEL` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var("HAZARDNAV_VLM_ENDPOINT") {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var("HAZARDNAV_VLM_HAZARD_MODEL") {
            self.hazard_model = v;
        }
        if let Ok(v) = std::env::var("HAZARDNAV_VLM_EMOTION_MODEL") {
            self.emotion_model = v;
        }
        self
    }

    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }
}

/// Sends one chat-completions request body and returns the response body.
pub trait ChatTransport: Send {
    fn complete(&self, request: &Value) -> Result<Value, HazardError>;
}

pub struct LiveBackend<T> {
    pub config: LiveConfig,
    transport: T,
}

impl<T: ChatTransport> LiveBackend<T> {
    pub fn new(config: LiveConfig, transport: T) -> Self {
        Self { config, transport }
    }

    pub fn hazard_request(&self, image: &SceneImage, prompts: &PromptSet) -> Value {
        json!({
            "model": self.config.hazard_model,
            "messages": [
                {"role": "system", "content": prompts.hazard_prompt},
                {"role": "user", "content": [
                    {"type": "text", "text": "Analyze the potential hazards in this image."},
                    {"type": "image_url", "image_url": {"url": image_data_url(image)}}
                ]}
            ],
            "response_format": {
                "type": "json_schema",
                "json_schema": {"name": "hazard_report", "strict": true, "schema": prompts.hazard_schema}
            }
        })
    }

    pub fn emotion_request(&self, reasoning: &str, hazards: &[String], image: &SceneImage, prompts: &PromptSet) -> Value {
        let text = format!(
            "Hazard reasoning:\n{reasoning}\n\nHazardous objects:\n{}",
            serde_json::to_string(hazards).unwrap_or_default()
        );
        json!({
            "model": self.config.emotion_model,
            "messages": [
                {"role": "system", "content": prompts.emotion_prompt},
                {"role": "user", "content": [
                    {"type": "text", "text": text},
                    {"type": "image_url", "image_url": {"url": image_data_url(image)}}
                ]}
            ],
            "response_format": {
                "type": "json_schema",
                "json_schema": {"name": "anxiety_assessment", "strict": true, "schema": prompts.emotion_schema}
            }
        })
    }

    fn with_retries<R>(&self, request: &Value, parse: impl Fn(&str) -> Result<R, String>) -> Result<R, HazardError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            let response = self.transport.complete(request)?;
            match message_content(&response).and_then(|c| parse(&c)) {
                Ok(v) => return Ok(v),
                Err(reason) => {
                    warn!(attempt, %reason, "malformed model response");
                    last = reason;
                }
            }
        }
        Err(HazardError::MalformedResponse { attempts, reason: last })
    }
}

#[derive(Deserialize)]
struct AssessmentWire {
    assessments: Vec<RawScore>,
}

impl<T: ChatTransport> HazardBackend for LiveBackend<T> {
    fn hazard_report(&mut self, image: &SceneImage, prompts: &PromptSet) -> Result<HazardReport, HazardError> {
        let request = self.hazard_request(image, prompts);
        self.with_retries(&request, |content| {
            let report: HazardReport = serde_json::from_str(content).map_err(|e| e.to_string())?;
            report.validate()?;
            Ok(report)
        })
    }

    fn anxiety_scores(
        &mut self,
        reasoning: &str,
        hazards: &[String],
        image: &SceneImage,
        prompts: &PromptSet,
    ) -> Result<Vec<RawScore>, HazardError> {
        let request = self.emotion_request(reasoning, hazards, image, prompts);
        self.with_retries(&request, |content| {
            let wire: AssessmentWire = serde_json::from_str(content).map_err(|e| e.to_string())?;
            normalize_scores(hazards, wire.assessments.clone()).map_err(|e| e.to_string())?;
            Ok(wire.assessments)
        })
    }
}

/// Assistant message text, with a surrounding code fence removed.
fn message_content(response: &Value) -> Result<String, String> {
    let content = response["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| "response has no message content".to_string())?
        .trim();
    let stripped = content
        .strip_prefix("```json")
        .or_else(|| content.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(content);
    Ok(stripped.trim().to_string())
}

/// PNG-encode the RGB raster as a `data:` URL.
pub fn image_data_url(image: &SceneImage) -> String {
    let flat: Vec<u8> = image.pixels.iter().flat_map(|p| p.iter().copied()).collect();
    let mut png = Vec::new();
    if let Some(buf) = image::RgbImage::from_raw(image.width as u32, image.height as u32, flat) {
        let _ = buf.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png);
    }
    format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png))
}

/// Blocking HTTP transport with bearer-token auth.
#[cfg(feature = "live")]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
}

#[cfg(feature = "live")]
impl HttpTransport {
    pub fn new(config: &LiveConfig) -> Result<Self, HazardError> {
        let api_key = config
            .api_key()
            .ok_or_else(|| HazardError::Unavailable(format!("environment variable {} is not set", config.api_key_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| HazardError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: config.endpoint.clone(),
            api_key,
        })
    }
}

#[cfg(feature = "live")]
impl ChatTransport for HttpTransport {
    fn complete(&self, request: &Value) -> Result<Value, HazardError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(|e| HazardError::Transport(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| HazardError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(HazardError::Transport(format!("HTTP {status}: {body}")));
        }
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::Anxiety;
    use crate::hazard::{evaluate_emotion, reason_hazards};
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<String>>,
        seen: Mutex<Vec<Value>>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatTransport for &Scripted {
        fn complete(&self, request: &Value) -> Result<Value, HazardError> {
            self.seen.lock().unwrap().push(request.clone());
            let content = self
                .replies
                .lock()
                .unwrap()
                .pop()
                .ok_or_else(|| HazardError::Transport("no more replies".into()))?;
            Ok(json!({"choices": [{"message": {"role": "assistant", "content": content}}]}))
        }
    }

    fn frame() -> SceneImage {
        SceneImage::with_semantics(0.0, 2, 1, vec!["wall".into(), "door(closed)".into()], vec![0, 1])
    }

    const GOOD_REPORT: &str = r#"{"textual_description":"a hallway","object_list":["wall","closed door"],
        "hazard_reasoning":"the door may open","hazardous_objects":["closed door"]}"#;

    #[test]
    fn request_shape() {
        let t = Scripted::new(&[GOOD_REPORT]);
        let b = LiveBackend::new(LiveConfig::default(), &t);
        let req = b.hazard_request(&frame(), &PromptSet::default());
        assert_eq!(req["model"], "gpt-4o");
        assert_eq!(req["messages"][0]["role"], "system");
        assert!(req["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,iVBOR"));
        assert_eq!(req["response_format"]["type"], "json_schema");
        let req = b.emotion_request("r", &["closed door".into()], &frame(), &PromptSet::default());
        assert_eq!(req["model"], "gpt-4o-mini");
    }

    #[test]
    fn malformed_then_valid_is_retried() {
        let t = Scripted::new(&["not json", r#"{"textual_description":"x"}"#, &format!("```json\n{GOOD_REPORT}\n```")]);
        let mut b = LiveBackend::new(LiveConfig::default(), &t);
        let r = reason_hazards(&mut b, &frame(), &PromptSet::default()).unwrap();
        assert_eq!(r.hazardous_objects, vec!["closed door".to_string()]);
        assert_eq!(t.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_retries() {
        let t = Scripted::new(&["{}", "{}", "{}", "{}", GOOD_REPORT]);
        let mut b = LiveBackend::new(LiveConfig::default(), &t);
        let err = reason_hazards(&mut b, &frame(), &PromptSet::default()).unwrap_err();
        assert!(matches!(err, HazardError::MalformedResponse { attempts: 4, .. }));
    }

    #[test]
    fn subset_violation_counts_as_malformed() {
        let bad = r#"{"textual_description":"x","object_list":[],"hazard_reasoning":"","hazardous_objects":["door"]}"#;
        let t = Scripted::new(&[bad, GOOD_REPORT]);
        let mut b = LiveBackend::new(LiveConfig::default(), &t);
        assert!(reason_hazards(&mut b, &frame(), &PromptSet::default()).is_ok());
    }

    #[test]
    fn live_score_four_is_clamped() {
        let t = Scripted::new(&[r#"{"assessments":[{"object":"closed door","reasoning":"swings","anxiety_score":4}]}"#]);
        let mut b = LiveBackend::new(LiveConfig::default(), &t);
        let a = evaluate_emotion(&mut b, "r", &["closed door".into()], &frame(), &PromptSet::default()).unwrap();
        assert_eq!(a.scores["closed door"], Anxiety::HIGH);
    }

    #[test]
    fn transport_errors_surface() {
        let t = Scripted::new(&[]);
        let mut b = LiveBackend::new(LiveConfig::default(), &t);
        assert!(matches!(
            reason_hazards(&mut b, &frame(), &PromptSet::default()),
            Err(HazardError::Transport(_))
        ));
    }
}
