//! Two-stage hazard reasoning: a hazard reasoner turns an image into a
//! structured [`HazardReport`], and an emotion evaluator scores each
//! hazardous object with an anxiety level in `1..=3`.
//!
//! Backends implement [`HazardBackend`]. [`MockBackend`] answers from a
//! fixture table keyed on the semantic labels visible in the frame and is
//! fully deterministic; [`LiveBackend`] talks to a chat-completions style
//! endpoint. The free functions [`reason_hazards`] and [`evaluate_emotion`]
//! enforce the output contract regardless of backend.

mod cycle;
mod live;
mod mock;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::warn;

use crate::costmap::Anxiety;

pub use cycle::{spawn_concurrent, HazardCycle, HazardSnapshot, LatestSlot};
pub use live::{ChatTransport, LiveBackend, LiveConfig};
#[cfg(feature = "live")]
pub use live::HttpTransport;
pub use mock::{FixtureTable, HazardFixture, MockBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HazardError {
    #[error("malformed response after {attempts} attempt(s): {reason}")]
    MalformedResponse { attempts: usize, reason: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid prompt set: {0}")]
    InvalidPrompts(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

/// A camera frame as seen by the reasoning stages.
///
/// `semantic` holds per-pixel indices into `label_names`; it is present for
/// simulator frames and absent for live camera input.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
    pub semantic: Option<Vec<u16>>,
    pub label_names: Vec<String>,
}

impl SceneImage {
    /// Frame whose RGB raster is derived from its semantic channel.
    pub fn with_semantics(
        timestamp: f64,
        width: usize,
        height: usize,
        label_names: Vec<String>,
        ids: Vec<u16>,
    ) -> Self {
        assert_eq!(ids.len(), width * height, "semantic channel size");
        let pixels = ids.iter().map(|&id| label_color(id)).collect();
        Self {
            timestamp,
            width,
            height,
            pixels,
            semantic: Some(ids),
            label_names,
        }
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.width * self.height;
        self.pixels.len() == n && self.semantic.as_ref().is_none_or(|s| s.len() == n)
    }

    pub fn label_id(&self, name: &str) -> Option<u16> {
        self.label_names.iter().position(|l| l == name).map(|i| i as u16)
    }

    /// Distinct semantic labels present in the frame, sorted.
    pub fn visible_labels(&self) -> BTreeSet<String> {
        let Some(ids) = &self.semantic else {
            return BTreeSet::new();
        };
        let present: BTreeSet<u16> = ids.iter().copied().collect();
        present
            .into_iter()
            .filter_map(|id| self.label_names.get(id as usize).cloned())
            .collect()
    }
}

/// Stable false-color palette for label ids.
pub fn label_color(id: u16) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [128, 128, 128],
        [200, 200, 200],
        [140, 90, 40],
        [30, 120, 220],
        [220, 60, 60],
        [240, 200, 20],
        [60, 180, 90],
        [160, 80, 200],
    ];
    PALETTE[id as usize % PALETTE.len()]
}

/// Structured output of the hazard reasoner.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardReport {
    pub textual_description: String,
    pub object_list: Vec<String>,
    pub hazard_reasoning: String,
    pub hazardous_objects: Vec<String>,
}

impl HazardReport {
    pub fn validate(&self) -> Result<(), String> {
        let objects: BTreeSet<&str> = self.object_list.iter().map(String::as_str).collect();
        if let Some(missing) = self.hazardous_objects.iter().find(|h| !objects.contains(h.as_str())) {
            return Err(format!("hazardous object {missing:?} is not in object_list"));
        }
        Ok(())
    }

    pub fn no_hazards(description: impl Into<String>) -> Self {
        Self {
            textual_description: description.into(),
            object_list: Vec::new(),
            hazard_reasoning: String::new(),
            hazardous_objects: Vec::new(),
        }
    }
}

/// Anxiety score per hazardous object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnxietyAssessment {
    pub scores: BTreeMap<String, Anxiety>,
    pub justification: BTreeMap<String, String>,
}

impl AnxietyAssessment {
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// One unvalidated score as returned by a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScore {
    pub object: String,
    #[serde(default)]
    pub reasoning: String,
    pub anxiety_score: i64,
}

const HAZARD_PROMPT: &str = include_str!("../../assets/prompts/hazard_reasoner.v1.txt");
const EMOTION_PROMPT: &str = include_str!("../../assets/prompts/emotion_evaluator.v1.txt");

/// System prompts and output schemas for both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub version: String,
    pub hazard_prompt: String,
    pub emotion_prompt: String,
    pub hazard_schema: Value,
    pub emotion_schema: Value,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            version: "v1".into(),
            hazard_prompt: HAZARD_PROMPT.into(),
            emotion_prompt: EMOTION_PROMPT.into(),
            hazard_schema: hazard_report_schema(),
            emotion_schema: assessment_schema(),
        }
    }
}

impl PromptSet {
    pub fn validate(&self) -> Result<(), HazardError> {
        if self.hazard_prompt.trim().is_empty() || self.emotion_prompt.trim().is_empty() {
            return Err(HazardError::InvalidPrompts("prompts must be non-empty".into()));
        }
        let required = |schema: &Value| -> BTreeSet<String> {
            schema["required"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect())
                .unwrap_or_default()
        };
        let report_fields: BTreeSet<String> = ["textual_description", "object_list", "hazard_reasoning", "hazardous_objects"]
            .into_iter()
            .map(String::from)
            .collect();
        if required(&self.hazard_schema) != report_fields {
            return Err(HazardError::InvalidPrompts("hazard schema does not match HazardReport".into()));
        }
        let item = &self.emotion_schema["properties"]["assessments"]["items"];
        let score_fields: BTreeSet<String> = ["object", "reasoning", "anxiety_score"].into_iter().map(String::from).collect();
        if required(item) != score_fields {
            return Err(HazardError::InvalidPrompts("emotion schema does not match score entries".into()));
        }
        Ok(())
    }
}

pub fn hazard_report_schema() -> Value {
    json!({
        "type": "object",
        "additionalProperties": false,
        "properties": {
            "textual_description": {"type": "string"},
            "object_list": {"type": "array", "items": {"type": "string"}},
            "hazard_reasoning": {"type": "string"},
            "hazardous_objects": {"type": "array", "items": {"type": "string"}}
        },
        "required": ["textual_description", "object_list", "hazard_reasoning", "hazardous_objects"]
    })
}

pub fn assessment_schema() -> Value {
    json!({
        "type": "object",
        "additionalProperties": false,
        "properties": {
            "assessments": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "properties": {
                        "object": {"type": "string"},
                        "reasoning": {"type": "string"},
                        "anxiety_score": {"type": "integer"}
                    },
                    "required": ["object", "reasoning", "anxiety_score"]
                }
            }
        },
        "required": ["assessments"]
    })
}

pub trait HazardBackend: Send {
    fn hazard_report(&mut self, image: &SceneImage, prompts: &PromptSet) -> Result<HazardReport, HazardError>;

    fn anxiety_scores(
        &mut self,
        reasoning: &str,
        hazards: &[String],
        image: &SceneImage,
        prompts: &PromptSet,
    ) -> Result<Vec<RawScore>, HazardError>;
}

impl<B: HazardBackend + ?Sized> HazardBackend for Box<B> {
    fn hazard_report(&mut self, image: &SceneImage, prompts: &PromptSet) -> Result<HazardReport, HazardError> {
        (**self).hazard_report(image, prompts)
    }

    fn anxiety_scores(
        &mut self,
        reasoning: &str,
        hazards: &[String],
        image: &SceneImage,
        prompts: &PromptSet,
    ) -> Result<Vec<RawScore>, HazardError> {
        (**self).anxiety_scores(reasoning, hazards, image, prompts)
    }
}

/// Run the hazard reasoner and check the report's schema invariants.
pub fn reason_hazards(
    backend: &mut dyn HazardBackend,
    image: &SceneImage,
    prompts: &PromptSet,
) -> Result<HazardReport, HazardError> {
    let report = backend.hazard_report(image, prompts)?;
    report
        .validate()
        .map_err(|reason| HazardError::MalformedResponse { attempts: 1, reason })?;
    Ok(report)
}

/// Run the emotion evaluator and normalize its scores.
///
/// Scores outside `1..=3` are clamped, scores for objects outside `hazards`
/// are dropped, and a missing score is a malformed response.
pub fn evaluate_emotion(
    backend: &mut dyn HazardBackend,
    reasoning: &str,
    hazards: &[String],
    image: &SceneImage,
    prompts: &PromptSet,
) -> Result<AnxietyAssessment, HazardError> {
    if hazards.is_empty() {
        return Ok(AnxietyAssessment::default());
    }
    let raw = backend.anxiety_scores(reasoning, hazards, image, prompts)?;
    normalize_scores(hazards, raw)
}

pub(crate) fn normalize_scores(hazards: &[String], raw: Vec<RawScore>) -> Result<AnxietyAssessment, HazardError> {
    let wanted: BTreeSet<&str> = hazards.iter().map(String::as_str).collect();
    let mut out = AnxietyAssessment::default();
    for entry in raw {
        if !wanted.contains(entry.object.as_str()) {
            warn!(object = %entry.object, "dropping score for object not in the hazard list");
            continue;
        }
        let score = Anxiety::clamp_hazard(entry.anxiety_score);
        if score.get() as i64 != entry.anxiety_score {
            warn!(object = %entry.object, raw = entry.anxiety_score, clamped = score.get(), "anxiety score out of range");
        }
        let slot = out.scores.entry(entry.object.clone()).or_insert(score);
        *slot = (*slot).max(score);
        out.justification.insert(entry.object, entry.reasoning);
    }
    if let Some(missing) = hazards.iter().find(|h| !out.scores.contains_key(h.as_str())) {
        return Err(HazardError::MalformedResponse {
            attempts: 1,
            reason: format!("no anxiety score for {missing:?}"),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(object: &str, s: i64) -> RawScore {
        RawScore {
            object: object.into(),
            reasoning: "r".into(),
            anxiety_score: s,
        }
    }

    #[test]
    fn default_prompts_are_valid() {
        let p = PromptSet::default();
        p.validate().unwrap();
        assert!(p.hazard_prompt.contains("hazardous_objects"));
        assert!(p.emotion_prompt.contains("anxiety_score"));
    }

    #[test]
    fn broken_schema_is_rejected() {
        let mut p = PromptSet::default();
        p.hazard_schema["required"] = json!(["textual_description"]);
        assert!(p.validate().is_err());
        let p = PromptSet {
            emotion_prompt: "  ".into(),
            ..PromptSet::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn report_subset_invariant() {
        let mut r = HazardReport {
            textual_description: "d".into(),
            object_list: vec!["door".into()],
            hazard_reasoning: "x".into(),
            hazardous_objects: vec!["door".into()],
        };
        assert!(r.validate().is_ok());
        r.hazardous_objects.push("chair".into());
        assert!(r.validate().is_err());
    }

    #[test]
    fn report_json_requires_all_fields() {
        let partial = r#"{"textual_description":"d","object_list":[],"hazard_reasoning":""}"#;
        assert!(serde_json::from_str::<HazardReport>(partial).is_err());
    }

    #[test]
    fn out_of_range_scores_clamp() {
        let hazards = vec!["door".to_string(), "sign".to_string()];
        let a = normalize_scores(&hazards, vec![raw("door", 4), raw("sign", 0)]).unwrap();
        assert_eq!(a.scores["door"], Anxiety::HIGH);
        assert_eq!(a.scores["sign"], Anxiety::LOW);
    }

    #[test]
    fn extra_objects_dropped_and_missing_rejected() {
        let hazards = vec!["door".to_string()];
        let a = normalize_scores(&hazards, vec![raw("door", 2), raw("ghost", 3)]).unwrap();
        assert_eq!(a.scores.len(), 1);
        assert!(!a.justification.contains_key("ghost"));
        assert!(matches!(
            normalize_scores(&hazards, vec![raw("ghost", 3)]),
            Err(HazardError::MalformedResponse { .. })
        ));
    }

    #[test]
    fn visible_labels_are_distinct_and_sorted() {
        let img = SceneImage::with_semantics(
            0.0,
            4,
            1,
            vec!["floor".into(), "wall".into(), "chair".into()],
            vec![1, 2, 1, 1],
        );
        let labels: Vec<_> = img.visible_labels().into_iter().collect();
        assert_eq!(labels, vec!["chair".to_string(), "wall".to_string()]);
        assert!(img.is_consistent());
    }
}
