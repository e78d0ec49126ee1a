use std::collections::BTreeSet;
use std::thread;
use std::time::Instant;

use thiserror::Error;

use super::config::ChainConfig;
use super::trace::{
    ChainTrace, DegradationFlag, GenerationRecord, RefinementRecord, RefinementRound, SegmentationRecord,
    SelectionRecord, StageRecord, StageTimings, ViewRecord,
};
use crate::backends::{self, mllm_query, BackendError, MllmRequest, Payload, Role, Segmenter, VisionLanguageModel};
use crate::geometry::{
    clamp_box, consensus_nms, inverse_box, iou, score_candidates, Augmentation, BBox, ScoredCandidate, SourcedBox,
};
use crate::imaging::{apply_augmentation, render_som, BinaryMask, Image, MarkStyle};

pub const SELECTION_SOM_FILE: &str = "som_selection.png";
pub const MASK_FILE: &str = "mask.png";

pub fn refinement_som_file(round: u32) -> String {
    format!("som_refinement_{}.png", round + 1)
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("all {} generation views failed to produce a box", views.len())]
    AllCandidatesFailed { views: Vec<ViewRecord> },
    #[error("segmentation failed: {0}")]
    Segmentation(#[from] BackendError),
}

/// Candidates produced by the generation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub candidates: Vec<ScoredCandidate>,
    pub record: GenerationRecord,
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub selected: BBox,
    pub record: SelectionRecord,
    pub som: Option<Image>,
}

#[derive(Debug, Clone)]
pub struct RefinementOutcome {
    pub refined: BBox,
    pub record: RefinementRecord,
    pub soms: Vec<Image>,
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    pub final_box: BBox,
    pub mask: BinaryMask,
    pub trace: ChainTrace,
    pub degradation_flags: BTreeSet<DegradationFlag>,
    /// Rendered Set-of-Mark images, keyed by the file names the trace uses.
    pub som_images: Vec<(String, Image)>,
    pub timings: StageTimings,
}

fn query_view(img: &Image, instruction: &str, cfg: &ChainConfig, index: usize, aug: Augmentation, mllm: &dyn VisionLanguageModel) -> ViewRecord {
    let mut record = ViewRecord {
        index,
        augmentation: aug,
        view_dims: None,
        replies: Vec::new(),
        view_box: None,
        candidate: None,
        error: None,
        calls: 0,
    };
    let view = match apply_augmentation(img, aug) {
        Ok(v) => v,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.view_dims = Some(view.dims());
    let req = MllmRequest {
        role: Role::Generation,
        image: &view,
        instruction,
        prompt: cfg.templates.generation_prompt(instruction),
        context: Vec::new(),
        augmentation: Some(aug),
        attempt: 0,
    };
    match mllm_query(mllm, &req) {
        Ok(out) => {
            record.calls = out.attempts.len();
            record.replies = out.attempts;
            let Payload::Bbox(view_box) = out.payload else {
                unreachable!("generation replies parse to boxes")
            };
            record.view_box = Some(view_box);
            let original = inverse_box(aug, &view_box, img.dims());
            match clamp_box(&original, img.dims()) {
                Ok(b) => record.candidate = Some(b),
                Err(e) => record.error = Some(format!("box left the frame after inverse mapping: {e}")),
            }
        }
        Err(e) => {
            record.calls = e.calls();
            record.error = Some(e.to_string());
            record.replies = e.attempts().to_vec();
        }
    }
    record
}

/// Queries every augmented view (concurrently), maps each parsed box back to
/// the original frame and scores the survivors by consensus. Results are
/// merged in augmentation order.
pub fn run_generation(
    img: &Image,
    instruction: &str,
    cfg: &ChainConfig,
    mllm: &dyn VisionLanguageModel,
) -> Result<GenerationOutcome, ChainError> {
    let views: Vec<ViewRecord> = thread::scope(|s| {
        let handles: Vec<_> = cfg
            .augmentations
            .iter()
            .enumerate()
            .map(|(i, &aug)| s.spawn(move || query_view(img, instruction, cfg, i, aug, mllm)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("generation worker panicked")).collect()
    });

    let sourced: Vec<SourcedBox> = views
        .iter()
        .filter_map(|v| v.candidate.map(|bbox| SourcedBox { bbox, source_index: v.index }))
        .collect();
    if sourced.is_empty() {
        return Err(ChainError::AllCandidatesFailed { views });
    }
    let candidates = score_candidates(&sourced);
    Ok(GenerationOutcome {
        record: GenerationRecord { views, candidates: candidates.clone() },
        candidates,
    })
}

/// Suppresses redundant candidates and picks one box among the survivors,
/// asking the model to compare numbered marks when more than one survives.
pub fn run_selection(
    img: &Image,
    instruction: &str,
    candidates: &[ScoredCandidate],
    cfg: &ChainConfig,
    mllm: &dyn VisionLanguageModel,
    style: &MarkStyle,
) -> Result<SelectionOutcome, ChainError> {
    let sourced: Vec<SourcedBox> = candidates
        .iter()
        .map(|c| SourcedBox { bbox: c.bbox, source_index: c.source_index })
        .collect();
    let survivors = consensus_nms(&sourced, cfg.nms_iou_threshold)
        .map_err(|e| ChainError::InvalidConfig(e.to_string()))?;
    debug_assert!(survivors.iter().enumerate().all(|(i, a)| survivors[i + 1..]
        .iter()
        .all(|b| iou(&a.bbox, &b.bbox) <= cfg.nms_iou_threshold)));
    // keep order starts with the highest-consensus survivor
    let top = survivors[0].bbox;
    let mut record = SelectionRecord {
        enabled: cfg.enable_selection,
        survivors: survivors.clone(),
        som_image: None,
        replies: Vec::new(),
        choice: None,
        selected: top,
        fell_back: false,
        error: None,
        calls: 0,
    };
    if !cfg.enable_selection || survivors.len() == 1 {
        return Ok(SelectionOutcome { selected: top, record, som: None });
    }

    let marks: Vec<BBox> = survivors.iter().map(|c| c.bbox).collect();
    let som = render_som(img, &marks, style);
    record.som_image = Some(SELECTION_SOM_FILE.to_string());
    let req = MllmRequest {
        role: Role::Selection,
        image: &som,
        instruction,
        prompt: cfg.templates.selection_prompt(instruction, &marks),
        context: marks.clone(),
        augmentation: None,
        attempt: 0,
    };
    match mllm_query(mllm, &req) {
        Ok(out) => {
            record.calls = out.attempts.len();
            record.replies = out.attempts;
            let Payload::Choice(k) = out.payload else {
                unreachable!("selection replies parse to choices")
            };
            record.choice = Some(k);
            record.selected = marks[k - 1];
        }
        Err(e) => {
            record.calls = e.calls();
            record.replies = e.attempts().to_vec();
            record.error = Some(e.to_string());
            record.fell_back = true;
        }
    }
    Ok(SelectionOutcome { selected: record.selected, record, som: Some(som) })
}

/// Asks the model to adjust the selected box, one Set-of-Mark render per
/// round. A failed round keeps the current box and ends refinement.
pub fn run_refinement(
    img: &Image,
    instruction: &str,
    selected: BBox,
    cfg: &ChainConfig,
    mllm: &dyn VisionLanguageModel,
    style: &MarkStyle,
) -> RefinementOutcome {
    let mut record = RefinementRecord {
        enabled: cfg.enable_refinement,
        rounds: Vec::new(),
        refined: selected,
        fell_back: false,
    };
    let mut soms = Vec::new();
    if !cfg.enable_refinement {
        return RefinementOutcome { refined: selected, record, soms };
    }
    let mut current = selected;
    for round in 0..cfg.refinement_rounds {
        let som = render_som(img, &[current], style);
        let req = MllmRequest {
            role: Role::Refinement,
            image: &som,
            instruction,
            prompt: cfg.templates.refinement_prompt(instruction, &current),
            context: vec![current],
            augmentation: None,
            attempt: 0,
        };
        let result = mllm_query(mllm, &req);
        let mut entry = RefinementRound {
            round,
            input: current,
            som_image: refinement_som_file(round),
            replies: Vec::new(),
            output: current,
            error: None,
            calls: 0,
        };
        soms.push(som);
        match result {
            Ok(out) => {
                entry.calls = out.attempts.len();
                entry.replies = out.attempts;
                let Payload::Bbox(b) = out.payload else {
                    unreachable!("refinement replies parse to boxes")
                };
                current = b;
                entry.output = b;
                record.rounds.push(entry);
            }
            Err(e) => {
                entry.calls = e.calls();
                entry.replies = e.attempts().to_vec();
                entry.error = Some(e.to_string());
                record.rounds.push(entry);
                record.fell_back = true;
                break;
            }
        }
    }
    record.refined = current;
    RefinementOutcome { refined: current, record, soms }
}

/// Runs generation, selection, refinement and segmentation for one
/// instruction.
pub fn run_chain(
    img: &Image,
    instruction: &str,
    cfg: &ChainConfig,
    mllm: &dyn VisionLanguageModel,
    segmenter: &dyn Segmenter,
) -> Result<ChainResult, ChainError> {
    run_chain_styled(img, instruction, cfg, mllm, segmenter, &MarkStyle::default())
}

pub fn run_chain_styled(
    img: &Image,
    instruction: &str,
    cfg: &ChainConfig,
    mllm: &dyn VisionLanguageModel,
    segmenter: &dyn Segmenter,
    style: &MarkStyle,
) -> Result<ChainResult, ChainError> {
    cfg.validate().map_err(ChainError::InvalidConfig)?;
    if instruction.trim().is_empty() {
        return Err(ChainError::EmptyInstruction);
    }
    let mut timings = StageTimings::default();
    let mut flags = BTreeSet::new();
    let mut som_images = Vec::new();

    let t = Instant::now();
    let generation = run_generation(img, instruction, cfg, mllm)?;
    timings.generation_s = t.elapsed().as_secs_f64();
    if generation.record.views.iter().any(|v| v.candidate.is_none()) {
        flags.insert(DegradationFlag::GenerationPartial);
    }

    let t = Instant::now();
    let selection = run_selection(img, instruction, &generation.candidates, cfg, mllm, style)?;
    timings.selection_s = t.elapsed().as_secs_f64();
    if selection.record.fell_back {
        flags.insert(DegradationFlag::SelectionFellBack);
    }
    if let Some(som) = selection.som {
        som_images.push((SELECTION_SOM_FILE.to_string(), som));
    }

    let t = Instant::now();
    let refinement = run_refinement(img, instruction, selection.selected, cfg, mllm, style);
    timings.refinement_s = t.elapsed().as_secs_f64();
    if refinement.record.fell_back {
        flags.insert(DegradationFlag::RefinementFellBack);
    }
    for (round, som) in refinement.soms.into_iter().enumerate() {
        som_images.push((refinement_som_file(round as u32), som));
    }

    let t = Instant::now();
    let final_box = refinement.refined;
    let mask = backends::segment(segmenter, img, &final_box)?;
    timings.segmentation_s = t.elapsed().as_secs_f64();

    let stages = vec![
        StageRecord::Generation(generation.record),
        StageRecord::Selection(selection.record),
        StageRecord::Refinement(refinement.record),
        StageRecord::Segmentation(SegmentationRecord {
            prompt_box: final_box,
            mask_dims: mask.dims(),
            mask_area: mask.area(),
            mask_file: MASK_FILE.to_string(),
        }),
    ];
    let mllm_calls = stages.iter().map(StageRecord::calls).sum();
    let trace = ChainTrace {
        instruction: instruction.to_string(),
        image_dims: img.dims(),
        stages,
        final_box,
        degradation_flags: flags.clone(),
        mllm_calls,
    };
    Ok(ChainResult { final_box, mask, trace, degradation_flags: flags, som_images, timings })
}

