use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::manifest::Scenario;
use super::EvalError;
use crate::imaging::BinaryMask;

/// Pixel counts behind one IoU value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskIou {
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

/// IoU of two masks of equal size. Two empty masks score 1.0.
pub fn mask_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<MaskIou, EvalError> {
    if pred.dims() != gt.dims() {
        return Err(EvalError::DimsMismatch { pred: pred.dims(), gt: gt.dims() });
    }
    let (mut intersection, mut union) = (0u64, 0u64);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        intersection += u64::from(p & g);
        union += u64::from(p | g);
    }
    let iou = if union == 0 { 1.0 } else { intersection as f64 / union as f64 };
    Ok(MaskIou { intersection, union, iou })
}

/// Per-sample row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub scenario: Scenario,
    pub iou: f64,
    pub intersection: u64,
    pub union: u64,
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleScore {
    /// Score of a sample whose chain produced no mask: IoU 0, and the full
    /// ground-truth area counted as union.
    pub fn failed(id: String, scenario: Scenario, gt_area: u64, error: String) -> Self {
        Self {
            id,
            scenario,
            iou: 0.0,
            intersection: 0,
            union: gt_area,
            flags: vec![FAILED_FLAG.to_string()],
            error: Some(error),
        }
    }
}

pub const FAILED_FLAG: &str = "Failed";

/// gIoU and cIoU over a group of samples. Both are `None` for an empty group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub giou: Option<f64>,
    pub ciou: Option<f64>,
    pub count: usize,
    pub intersection: u64,
    pub union: u64,
}

impl Summary {
    fn of<'a>(scores: impl Iterator<Item = &'a SampleScore>) -> Self {
        let mut ious = Vec::new();
        let (mut intersection, mut union) = (0u64, 0u64);
        for s in scores {
            ious.push(s.iou);
            intersection += s.intersection;
            union += s.union;
        }
        let count = ious.len();
        if count == 0 {
            return Self { giou: None, ciou: None, count, intersection, union };
        }
        // summing in sorted order makes the mean independent of sample order
        ious.sort_by(f64::total_cmp);
        let giou = ious.iter().sum::<f64>() / count as f64;
        let ciou = if union == 0 { 1.0 } else { intersection as f64 / union as f64 };
        Self { giou: Some(giou), ciou: Some(ciou), count, intersection, union }
    }
}

/// Scenario-stratified gIoU/cIoU with per-sample rows sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Summary,
    pub scenarios: BTreeMap<Scenario, Summary>,
    pub samples: Vec<SampleScore>,
    pub flag_tallies: BTreeMap<String, usize>,
}

impl MetricsReport {
    pub fn from_scores(mut samples: Vec<SampleScore>) -> Result<Self, EvalError> {
        if samples.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let overall = Summary::of(samples.iter());
        let scenarios = Scenario::ALL
            .iter()
            .map(|&sc| (sc, Summary::of(samples.iter().filter(|s| s.scenario == sc))))
            .collect();
        let mut flag_tallies = BTreeMap::new();
        for flag in samples.iter().flat_map(|s| &s.flags) {
            *flag_tallies.entry(flag.clone()).or_insert(0) += 1;
        }
        Ok(Self { overall, scenarios, samples, flag_tallies })
    }

    pub fn giou(&self) -> f64 {
        self.overall.giou.unwrap_or(0.0)
    }

    pub fn ciou(&self) -> f64 {
        self.overall.ciou.unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table: one column per scenario plus the overall column.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let cols: Vec<&Summary> = Scenario::ALL.iter().map(|s| &self.scenarios[s]).chain([&self.overall]).collect();
        let mut out = String::new();
        let _ = writeln!(out, "{:<8}{:>9}{:>9}{:>9}{:>9}", "", "ESS", "GOS", "RGS", "Overall");
        let _ = write!(out, "{:<8}", "gIoU");
        for c in &cols {
            let _ = write!(out, "{:>9}", fmt(c.giou));
        }
        let _ = write!(out, "\n{:<8}", "cIoU");
        for c in &cols {
            let _ = write!(out, "{:>9}", fmt(c.ciou));
        }
        let _ = write!(out, "\n{:<8}", "Samples");
        for c in &cols {
            let _ = write!(out, "{:>9}", c.count);
        }
        out.push('\n');
        if !self.flag_tallies.is_empty() {
            let tallies: Vec<String> = self.flag_tallies.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "Flags: {}", tallies.join(", "));
        }
        out
    }
}

/// gIoU/cIoU over `(prediction, ground truth, scenario)` triples. Samples
/// are identified by their zero-padded position.
pub fn compute_metrics(pairs: &[(BinaryMask, BinaryMask, Scenario)]) -> Result<MetricsReport, EvalError> {
    let width = pairs.len().to_string().len();
    let scores = pairs
        .iter()
        .enumerate()
        .map(|(i, (pred, gt, scenario))| {
            let m = mask_iou(pred, gt)?;
            Ok(SampleScore {
                id: format!("{i:0width$}"),
                scenario: *scenario,
                iou: m.iou,
                intersection: m.intersection,
                union: m.union,
                flags: Vec::new(),
                error: None,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    MetricsReport::from_scores(scores)
}
