//! The test-time reasoning chain: propose boxes on augmented views, pick one
//! by comparing numbered marks, refine it, then prompt the segmenter.

mod chain;
mod config;
mod trace;

pub use chain::{
    refinement_som_file, run_chain, run_chain_styled, run_generation, run_refinement, run_selection, ChainError,
    ChainResult, GenerationOutcome, RefinementOutcome, SelectionOutcome, MASK_FILE, SELECTION_SOM_FILE,
};
pub use config::{
    format_coords, ChainConfig, PromptTemplates, GENERATION_TEMPLATE, REFINEMENT_TEMPLATE, SELECTION_TEMPLATE,
};
pub use trace::{
    ChainTrace, DegradationFlag, GenerationRecord, RefinementRecord, RefinementRound, SegmentationRecord,
    SelectionRecord, StageRecord, StageTimings, ViewRecord,
};
