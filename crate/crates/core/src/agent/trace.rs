//! Serializable record of one chain execution.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backends::MllmReply;
use crate::geometry::{Augmentation, BBox, ImageDims, ScoredCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DegradationFlag {
    /// At least one augmented view produced no usable box.
    GenerationPartial,
    /// Selection never got a parseable answer; the top-consensus box was used.
    SelectionFellBack,
    /// A refinement round failed; the last good box was kept.
    RefinementFellBack,
}

/// One augmented view queried during generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub index: usize,
    pub augmentation: Augmentation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view_dims: Option<ImageDims>,
    pub replies: Vec<MllmReply>,
    /// Box as parsed, in the augmented frame.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view_box: Option<BBox>,
    /// Box mapped back into the original frame and clamped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<BBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Backend calls issued for this view.
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub views: Vec<ViewRecord>,
    pub candidates: Vec<ScoredCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub enabled: bool,
    /// NMS survivors in mark order (mark `k` is `survivors[k - 1]`).
    pub survivors: Vec<ScoredCandidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub som_image: Option<String>,
    pub replies: Vec<MllmReply>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub choice: Option<usize>,
    pub selected: BBox,
    pub fell_back: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRound {
    pub round: u32,
    pub input: BBox,
    pub som_image: String,
    pub replies: Vec<MllmReply>,
    pub output: BBox,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub enabled: bool,
    pub rounds: Vec<RefinementRound>,
    pub refined: BBox,
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRecord {
    pub prompt_box: BBox,
    pub mask_dims: ImageDims,
    pub mask_area: u64,
    pub mask_file: String,
}

/// Stages in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum StageRecord {
    Generation(GenerationRecord),
    Selection(SelectionRecord),
    Refinement(RefinementRecord),
    Segmentation(SegmentationRecord),
}

impl StageRecord {
    pub fn calls(&self) -> usize {
        match self {
            StageRecord::Generation(g) => g.views.iter().map(|v| v.calls).sum(),
            StageRecord::Selection(s) => s.calls,
            StageRecord::Refinement(r) => r.rounds.iter().map(|r| r.calls).sum(),
            StageRecord::Segmentation(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub instruction: String,
    pub image_dims: ImageDims,
    pub stages: Vec<StageRecord>,
    pub final_box: BBox,
    pub degradation_flags: BTreeSet<DegradationFlag>,
    /// Total vision-language calls; equals the sum over stages.
    pub mllm_calls: usize,
}

impl ChainTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Every box recorded in the original image frame.
    pub fn boxes(&self) -> Vec<BBox> {
        let mut out = vec![self.final_box];
        for stage in &self.stages {
            match stage {
                StageRecord::Generation(g) => {
                    out.extend(g.views.iter().filter_map(|v| v.candidate));
                    out.extend(g.candidates.iter().map(|c| c.bbox));
                }
                StageRecord::Selection(s) => {
                    out.extend(s.survivors.iter().map(|c| c.bbox));
                    out.push(s.selected);
                }
                StageRecord::Refinement(r) => {
                    out.extend(r.rounds.iter().flat_map(|x| [x.input, x.output]));
                    out.push(r.refined);
                }
                StageRecord::Segmentation(s) => out.push(s.prompt_box),
            }
        }
        out
    }
}

/// Wall-clock seconds per stage. Kept out of [`ChainTrace`] so traces stay
/// reproducible byte for byte.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub generation_s: f64,
    pub selection_s: f64,
    pub refinement_s: f64,
    pub segmentation_s: f64,
}
