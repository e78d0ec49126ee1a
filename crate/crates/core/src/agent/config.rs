use serde::{Deserialize, Serialize};

use crate::geometry::{Augmentation, BBox, DEFAULT_NMS_IOU};

pub const GENERATION_TEMPLATE: &str = "You are given an image and a target description: '{instruction}'. \
Output the bounding box of the target as JSON: {\"bbox\":[x1,y1,x2,y2]} in absolute pixel coordinates. \
Output only the JSON.";

pub const SELECTION_TEMPLATE: &str = "The image shows numbered candidate boxes: {boxes}. \
Which numbered box best covers the target '{instruction}'? Answer only JSON: {\"choice\":k}.";

pub const REFINEMENT_TEMPLATE: &str = "The image shows one candidate box {coords} for the target '{instruction}'. \
If the box should be adjusted to cover the target precisely, output the adjusted box as JSON \
{\"bbox\":[x1,y1,x2,y2]}; otherwise repeat the same box.";

/// Prompt templates for the three query roles.
///
/// Placeholders: `{instruction}` in all three, `{boxes}` in selection and
/// `{coords}` in refinement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub generation: String,
    pub selection: String,
    pub refinement: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            generation: GENERATION_TEMPLATE.to_string(),
            selection: SELECTION_TEMPLATE.to_string(),
            refinement: REFINEMENT_TEMPLATE.to_string(),
        }
    }
}

/// `[x1,y1,x2,y2]` with every coordinate rounded half-up to an integer.
pub fn format_coords(b: &BBox) -> String {
    let r = |v: f64| (v + 0.5).floor() as i64;
    format!("[{},{},{},{}]", r(b.x1()), r(b.y1()), r(b.x2()), r(b.y2()))
}

impl PromptTemplates {
    pub fn generation_prompt(&self, instruction: &str) -> String {
        self.generation.replace("{instruction}", instruction)
    }

    /// Lists the marks as `1: [..]; 2: [..]` in mark order.
    pub fn selection_prompt(&self, instruction: &str, marks: &[BBox]) -> String {
        let boxes = marks
            .iter()
            .enumerate()
            .map(|(i, b)| format!("{}: {}", i + 1, format_coords(b)))
            .collect::<Vec<_>>()
            .join("; ");
        self.selection.replace("{boxes}", &boxes).replace("{instruction}", instruction)
    }

    pub fn refinement_prompt(&self, instruction: &str, current: &BBox) -> String {
        self.refinement
            .replace("{coords}", &format_coords(current))
            .replace("{instruction}", instruction)
    }

    fn validate(&self) -> Result<(), String> {
        for (name, t) in [("generation", &self.generation), ("selection", &self.selection), ("refinement", &self.refinement)] {
            if t.trim().is_empty() {
                return Err(format!("{name} prompt template is empty"));
            }
        }
        Ok(())
    }
}

/// Settings of one reasoning-chain run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub augmentations: Vec<Augmentation>,
    pub nms_iou_threshold: f64,
    pub enable_selection: bool,
    pub enable_refinement: bool,
    pub refinement_rounds: u32,
    pub templates: PromptTemplates,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            augmentations: Augmentation::default_set(),
            nms_iou_threshold: DEFAULT_NMS_IOU,
            enable_selection: true,
            enable_refinement: true,
            refinement_rounds: 1,
            templates: PromptTemplates::default(),
        }
    }
}

impl ChainConfig {
    /// Single raw view, no selection, no refinement: the model is asked once
    /// for a box and that box is segmented.
    pub fn single_step(&self) -> Self {
        Self {
            augmentations: vec![Augmentation::Identity],
            enable_selection: false,
            enable_refinement: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.augmentations.is_empty() {
            return Err("at least one augmentation is required".into());
        }
        for a in &self.augmentations {
            a.validate().map_err(|e| e.to_string())?;
        }
        let t = self.nms_iou_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(format!("NMS IoU threshold must lie in (0, 1], got {t}"));
        }
        self.templates.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ChainConfig::default();
        assert_eq!(c.nms_iou_threshold, 0.8);
        assert_eq!(c.augmentations.len(), 4);
        assert!(c.enable_selection && c.enable_refinement);
        assert_eq!(c.refinement_rounds, 1);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn validation() {
        let mut c = ChainConfig { augmentations: vec![], ..Default::default() };
        assert!(c.validate().is_err());
        c.augmentations = vec![Augmentation::Scale(9.0)];
        assert!(c.validate().is_err());
        c.augmentations = vec![Augmentation::Identity];
        c.nms_iou_threshold = 0.0;
        assert!(c.validate().is_err());
        c.nms_iou_threshold = 1.0;
        assert!(c.validate().is_ok());
        c.templates.selection = "  ".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn prompt_rendering() {
        let t = PromptTemplates::default();
        let g = t.generation_prompt("the red car");
        assert!(g.contains("'the red car'"));
        assert!(g.contains(r#"{"bbox":[x1,y1,x2,y2]}"#));

        let a = BBox::new(10.0, 20.0, 30.0, 40.0).unwrap();
        let b = BBox::new(0.5, 1.49, 2.5, 3.0).unwrap();
        let s = t.selection_prompt("dog", &[a, b]);
        assert!(s.contains("1: [10,20,30,40]; 2: [1,1,3,3]"), "{s}");
        assert!(s.ends_with(r#"Answer only JSON: {"choice":k}."#));

        let r = t.refinement_prompt("dog", &a);
        assert!(r.starts_with("The image shows one candidate box [10,20,30,40] for the target 'dog'."));
    }

    #[test]
    fn single_step_preset() {
        let s = ChainConfig::default().single_step();
        assert_eq!(s.augmentations, vec![Augmentation::Identity]);
        assert!(!s.enable_selection && !s.enable_refinement);
    }

    #[test]
    fn toml_round_trip() {
        let c: ChainConfig = toml::from_str(
            "augmentations = [\"identity\", \"hflip\"]\nnms_iou_threshold = 0.7\nenable_refinement = false\n",
        )
        .unwrap();
        assert_eq!(c.augmentations, vec![Augmentation::Identity, Augmentation::HorizontalFlip]);
        assert_eq!(c.nms_iou_threshold, 0.7);
        assert!(!c.enable_refinement && c.enable_selection);
        assert!(toml::from_str::<ChainConfig>("bogus = 1").is_err());
    }
}
