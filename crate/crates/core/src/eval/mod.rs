//! Benchmark harness: manifests of (image, instruction, mask, scenario)
//! samples, gIoU/cIoU metrics and scenario-stratified reports.

mod manifest;
mod metrics;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{check_official_counts, load_manifest, parse_manifest, Sample, Scenario, OFFICIAL_COUNTS};
pub use metrics::{compute_metrics, mask_iou, MaskIou, MetricsReport, SampleScore, Summary, FAILED_FLAG};

use crate::agent::{run_chain, ChainConfig, ChainResult};
use crate::backends::{OracleSegmenter, Segmenter, VisionLanguageModel};
use crate::geometry::ImageDims;
use crate::imaging::{read_mask, BinaryMask, Image};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("missing file {}: {reason}", path.display())]
    MissingFile { path: PathBuf, reason: String },
    #[error("ground-truth mask {}: {reason}", path.display())]
    BadGroundTruth { path: PathBuf, reason: String },
    #[error("mask dimensions differ: prediction {pred}, ground truth {gt}")]
    DimsMismatch { pred: ImageDims, gt: ImageDims },
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("manifest does not match the official release split: {0}")]
    OfficialCounts(String),
    #[error("invalid evaluation setup: {0}")]
    Setup(String),
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where masks come from during evaluation.
#[derive(Clone)]
pub enum SegmenterChoice {
    Shared(Arc<dyn Segmenter>),
    /// Each sample is segmented by an oracle holding its own ground truth.
    Oracle,
}

#[derive(Clone)]
pub struct EvalBackends {
    pub mllm: Arc<dyn VisionLanguageModel>,
    pub segmenter: SegmenterChoice,
}

/// Per-sample hook, called from worker threads with the chain result when
/// the chain succeeded.
pub type SampleHook<'a> = &'a (dyn Fn(&Sample, &ChainResult) + Sync);

fn score_sample(sample: &Sample, gt: &BinaryMask, cfg: &ChainConfig, backends: &EvalBackends, hook: Option<SampleHook<'_>>) -> SampleScore {
    let fail = |reason: String| SampleScore::failed(sample.id.clone(), sample.scenario, gt.area(), reason);
    let img = match Image::open(&sample.image_path) {
        Ok(img) => img,
        Err(e) => return fail(e.to_string()),
    };
    let oracle;
    let segmenter: &dyn Segmenter = match &backends.segmenter {
        SegmenterChoice::Shared(s) => s.as_ref(),
        SegmenterChoice::Oracle => {
            oracle = OracleSegmenter::new(gt.clone());
            &oracle
        }
    };
    let result = match run_chain(&img, &sample.instruction, cfg, backends.mllm.as_ref(), segmenter) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    if let Some(hook) = hook {
        hook(sample, &result);
    }
    match mask_iou(&result.mask, gt) {
        Ok(m) => SampleScore {
            id: sample.id.clone(),
            scenario: sample.scenario,
            iou: m.iou,
            intersection: m.intersection,
            union: m.union,
            flags: result.degradation_flags.iter().map(|f| format!("{f:?}")).collect(),
            error: None,
        },
        Err(e) => fail(e.to_string()),
    }
}

/// Runs the chain on every sample with up to `workers` threads and scores
/// the masks. A sample whose chain fails scores 0 and is flagged; only
/// harness problems (unreadable ground truth, empty manifest) are errors.
pub fn evaluate(
    samples: &[Sample],
    cfg: &ChainConfig,
    backends: &EvalBackends,
    workers: usize,
    hook: Option<SampleHook<'_>>,
) -> Result<MetricsReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    cfg.validate().map_err(EvalError::Setup)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Setup(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let truths = samples
            .par_iter()
            .map(|s| {
                read_mask(&s.mask_path)
                    .map_err(|e| EvalError::BadGroundTruth { path: s.mask_path.clone(), reason: e.to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scores: Vec<SampleScore> = samples
            .par_iter()
            .zip(truths.par_iter())
            .map(|(s, gt)| score_sample(s, gt, cfg, backends, hook))
            .collect();
        MetricsReport::from_scores(scores)
    })
}

impl MetricsReport {
    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        write_file(&dir.join("report.json"), self.to_json().as_bytes())?;
        write_file(&dir.join("report.txt"), self.to_table().as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    std::fs::write(path, bytes).map_err(|source| EvalError::Write { path: path.to_path_buf(), source })
}

/// One configuration of the module ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub generation: bool,
    pub selection: bool,
    pub refinement: bool,
    pub config: ChainConfig,
}

/// The four module combinations: single-step baseline, GM+SM, GM+RM and the
/// full chain. Disabling generation means a single identity view.
pub fn ablation_rows(base: &ChainConfig) -> Vec<AblationRow> {
    let row = |gm: bool, sm: bool, rm: bool| {
        let mut config = base.clone();
        if !gm {
            config = config.single_step();
        }
        config.enable_selection = sm;
        config.enable_refinement = rm;
        AblationRow { generation: gm, selection: sm, refinement: rm, config }
    };
    vec![row(false, false, false), row(true, true, false), row(true, false, true), row(true, true, true)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub generation: bool,
    pub selection: bool,
    pub refinement: bool,
    pub report: MetricsReport,
}

/// gIoU table with one row per module combination and one column per
/// scenario.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let mark = |on: bool| if on { "✓" } else { "✗" };
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let mut out = String::new();
    let _ = writeln!(out, "GM  SM  RM |{:>9}{:>9}{:>9}{:>9}", "ESS", "GOS", "RGS", "Overall");
    for r in results {
        let _ = write!(out, "{}   {}   {}  |", mark(r.generation), mark(r.selection), mark(r.refinement));
        for sc in Scenario::ALL {
            let _ = write!(out, "{:>9}", fmt(r.report.scenarios[&sc].giou));
        }
        let _ = writeln!(out, "{:>9}", fmt(r.report.overall.giou));
    }
    out
}

/// Evaluates every ablation row on the same samples.
pub fn run_ablation(
    samples: &[Sample],
    base: &ChainConfig,
    backends: &EvalBackends,
    workers: usize,
) -> Result<Vec<AblationResult>, EvalError> {
    ablation_rows(base)
        .into_iter()
        .map(|row| {
            let report = evaluate(samples, &row.config, backends, workers, None)?;
            Ok(AblationResult {
                generation: row.generation,
                selection: row.selection,
                refinement: row.refinement,
                report,
            })
        })
        .collect()
}
