use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HazardBackend, HazardError, HazardReport, PromptSet, RawScore, SceneImage};
use crate::perception::HazardVocabulary;

const DEFAULT_FIXTURES: &str = include_str!("../../assets/fixtures/hazards.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardFixture {
    /// Hazardous-object name reported by the reasoner.
    pub name: String,
    /// Semantic labels that must all be visible for the hazard to fire.
    pub when_all: Vec<String>,
    pub reasoning: String,
    /// Raw score handed to the evaluator; may lie outside 1..=3 on purpose.
    pub anxiety: i64,
    #[serde(default)]
    pub justification: String,
}

/// Label-set keyed answers for the mock backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureTable {
    /// Display name per semantic label; labels not listed keep their own name
    /// and an empty name hides the label from the object list.
    #[serde(default)]
    pub objects: BTreeMap<String, String>,
    #[serde(default)]
    pub hazards: Vec<HazardFixture>,
}

impl FixtureTable {
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_FIXTURES).expect("builtin hazard fixtures parse")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Hazard name to semantic labels, for the oracle segmenter.
    pub fn vocabulary(&self) -> HazardVocabulary {
        let mut v = HazardVocabulary::default();
        for h in &self.hazards {
            v.insert(h.name.clone(), h.when_all.clone());
        }
        v
    }

    fn display(&self, label: &str) -> String {
        self.objects.get(label).cloned().unwrap_or_else(|| label.to_string())
    }
}

/// Deterministic backend answering from a [`FixtureTable`].
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub fixtures: FixtureTable,
    calls: usize,
}

impl MockBackend {
    pub fn new(fixtures: FixtureTable) -> Self {
        Self { fixtures, calls: 0 }
    }

    /// Number of reasoner invocations so far.
    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl HazardBackend for MockBackend {
    fn hazard_report(&mut self, image: &SceneImage, _prompts: &PromptSet) -> Result<HazardReport, HazardError> {
        self.calls += 1;
        let visible = image.visible_labels();
        let mut objects: Vec<String> = Vec::new();
        for label in &visible {
            let name = self.fixtures.display(label);
            if !name.is_empty() && !objects.contains(&name) {
                objects.push(name);
            }
        }
        let fired: Vec<&HazardFixture> = self
            .fixtures
            .hazards
            .iter()
            .filter(|h| !h.when_all.is_empty() && h.when_all.iter().all(|l| visible.contains(l)))
            .collect();
        for h in &fired {
            if !objects.contains(&h.name) {
                objects.push(h.name.clone());
            }
        }
        let textual_description = if objects.is_empty() {
            "The view is empty.".to_string()
        } else {
            format!("The robot's view shows: {}.", objects.join(", "))
        };
        let hazard_reasoning = if fired.is_empty() {
            "Nothing in view is likely to move or endanger the robot.".to_string()
        } else {
            fired.iter().map(|h| h.reasoning.as_str()).collect::<Vec<_>>().join(" ")
        };
        Ok(HazardReport {
            textual_description,
            object_list: objects,
            hazard_reasoning,
            hazardous_objects: fired.iter().map(|h| h.name.clone()).collect(),
        })
    }

    fn anxiety_scores(
        &mut self,
        _reasoning: &str,
        hazards: &[String],
        _image: &SceneImage,
        _prompts: &PromptSet,
    ) -> Result<Vec<RawScore>, HazardError> {
        Ok(hazards
            .iter()
            .map(|name| match self.fixtures.hazards.iter().find(|h| &h.name == name) {
                Some(h) => RawScore {
                    object: name.clone(),
                    reasoning: h.justification.clone(),
                    anxiety_score: h.anxiety,
                },
                None => RawScore {
                    object: name.clone(),
                    reasoning: "no fixture for this object".into(),
                    anxiety_score: 1,
                },
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::Anxiety;
    use crate::hazard::{evaluate_emotion, reason_hazards};

    fn frame(labels: &[&str]) -> SceneImage {
        let names: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let ids = (0..labels.len() as u16).collect();
        SceneImage::with_semantics(0.0, labels.len(), 1, names, ids)
    }

    fn backend() -> MockBackend {
        MockBackend::new(FixtureTable::builtin())
    }

    #[test]
    fn closed_door_is_flagged() {
        let mut b = backend();
        let p = PromptSet::default();
        let img = frame(&["door(closed)", "wall"]);
        let r = reason_hazards(&mut b, &img, &p).unwrap();
        assert_eq!(r.hazardous_objects, vec!["closed door".to_string()]);
        assert!(r.hazard_reasoning.contains("may open abruptly"));
        let a = evaluate_emotion(&mut b, &r.hazard_reasoning, &r.hazardous_objects, &img, &p).unwrap();
        assert_eq!(a.scores["closed door"], Anxiety::HIGH);
    }

    #[test]
    fn seated_chair_needs_both_labels() {
        let mut b = backend();
        let p = PromptSet::default();
        let r = reason_hazards(&mut b, &frame(&["chair", "person(seated)"]), &p).unwrap();
        assert_eq!(r.hazardous_objects, vec!["seated chair".to_string()]);
        assert!(r.hazard_reasoning.contains("stand up suddenly"));
        let r = reason_hazards(&mut b, &frame(&["chair"]), &p).unwrap();
        assert!(r.hazardous_objects.is_empty());
    }

    #[test]
    fn plain_room_has_no_hazards() {
        let mut b = backend();
        let p = PromptSet::default();
        let img = frame(&["floor", "wall"]);
        let r = reason_hazards(&mut b, &img, &p).unwrap();
        assert!(r.hazardous_objects.is_empty());
        let a = evaluate_emotion(&mut b, &r.hazard_reasoning, &r.hazardous_objects, &img, &p).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn unknown_labels_are_not_errors() {
        let mut b = backend();
        let r = reason_hazards(&mut b, &frame(&["spaceship"]), &PromptSet::default()).unwrap();
        assert_eq!(r.object_list, vec!["spaceship".to_string()]);
        assert!(r.hazardous_objects.is_empty());
    }

    #[test]
    fn identical_label_sets_give_identical_outputs() {
        let p = PromptSet::default();
        let a = frame(&["wall", "door(closed)", "chair", "person(seated)"]);
        // same label set, different pixel layout and timestamp
        let mut b = SceneImage::with_semantics(
            7.5,
            8,
            1,
            vec!["person(seated)".into(), "chair".into(), "door(closed)".into(), "wall".into()],
            vec![3, 3, 2, 1, 0, 0, 1, 2],
        );
        b.timestamp = 9.0;
        let ra = reason_hazards(&mut backend(), &a, &p).unwrap();
        let rb = reason_hazards(&mut backend(), &b, &p).unwrap();
        assert_eq!(serde_json::to_vec(&ra).unwrap(), serde_json::to_vec(&rb).unwrap());
        let sa = evaluate_emotion(&mut backend(), &ra.hazard_reasoning, &ra.hazardous_objects, &a, &p).unwrap();
        let sb = evaluate_emotion(&mut backend(), &rb.hazard_reasoning, &rb.hazardous_objects, &b, &p).unwrap();
        assert_eq!(serde_json::to_vec(&sa).unwrap(), serde_json::to_vec(&sb).unwrap());
    }

    #[test]
    fn vocabulary_covers_fixture_hazards() {
        let v = FixtureTable::builtin().vocabulary();
        assert_eq!(v.labels_for("seated chair"), vec!["chair", "person(seated)"]);
        assert_eq!(v.labels_for("unlisted"), vec!["unlisted"]);
    }
}
