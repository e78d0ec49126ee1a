//! Fixture builders shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tempfile::TempDir;

use seg_agent::agent::format_coords;
use seg_agent::geometry::{Augmentation, BBox, ImageDims};
use seg_agent::imaging::{box_fill_mask, mask_encode, Image};

pub fn dims(w: u32, h: u32) -> ImageDims {
    ImageDims::new(w, h).unwrap()
}

pub fn bb(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3]).unwrap()
}

pub fn bbox_reply(b: [f64; 4]) -> String {
    json!({ "bbox": b }).to_string()
}

/// 100x100 gray canvas with the target rectangle painted in `rgb`.
pub fn scene(target: [f64; 4], rgb: [u8; 3]) -> Image {
    let d = dims(100, 100);
    let mut img = Image::solid(d, [90, 90, 90]);
    let mask = box_fill_mask(&bb(target), d);
    for y in 0..100 {
        for x in 0..100 {
            if mask.get(x, y) {
                img.put(x, y, rgb);
            }
        }
    }
    img
}

/// One scripted benchmark sample on a 100x100 image whose ground truth is a
/// filled rectangle.
#[derive(Debug, Clone)]
pub struct FixtureSample {
    pub id: &'static str,
    pub scenario: &'static str,
    pub instruction: &'static str,
    pub gt: [f64; 4],
    /// Replies per default augmentation, in each view's own frame. `None`
    /// leaves the view unscripted so it fails to parse.
    pub views: [Option<[f64; 4]>; 4],
    pub selection: Option<usize>,
    /// (current box, reply) pairs for refinement.
    pub refinements: Vec<([f64; 4], [f64; 4])>,
}

/// Three samples on which each chain stage fixes a different mistake:
/// refinement tightens an agreed but offset box, selection overrides a
/// wrong box that wins the consensus tie, and a clean sample every
/// configuration solves.
pub fn ablation_samples() -> Vec<FixtureSample> {
    vec![
        FixtureSample {
            id: "s1",
            scenario: "ESS",
            instruction: "the red square",
            gt: [20.0, 20.0, 60.0, 60.0],
            views: [
                Some([50.0, 50.0, 90.0, 90.0]),
                Some([38.0, 22.0, 78.0, 62.0]),
                Some([27.5, 27.5, 77.5, 77.5]),
                Some([16.5, 16.5, 46.5, 46.5]),
            ],
            selection: Some(1),
            refinements: vec![([22.0, 22.0, 62.0, 62.0], [20.0, 20.0, 60.0, 60.0])],
        },
        FixtureSample {
            id: "s2",
            scenario: "GOS",
            instruction: "the box in the upper right",
            gt: [60.0, 10.0, 90.0, 40.0],
            views: [
                Some([0.0, 0.0, 30.0, 30.0]),
                Some([70.0, 0.0, 100.0, 30.0]),
                Some([75.0, 12.5, 112.5, 50.0]),
                Some([45.0, 7.5, 67.5, 30.0]),
            ],
            selection: Some(2),
            refinements: vec![
                ([60.0, 10.0, 90.0, 40.0], [60.0, 10.0, 90.0, 40.0]),
                ([0.0, 0.0, 30.0, 30.0], [0.0, 0.0, 30.0, 30.0]),
            ],
        },
        FixtureSample {
            id: "s3",
            scenario: "RGS",
            instruction: "where you would put a cup down",
            gt: [10.0, 60.0, 50.0, 95.0],
            views: [
                Some([10.0, 60.0, 50.0, 95.0]),
                Some([50.0, 60.0, 90.0, 95.0]),
                Some([12.5, 75.0, 62.5, 118.75]),
                Some([7.5, 45.0, 37.5, 71.25]),
            ],
            selection: None,
            refinements: vec![([10.0, 60.0, 50.0, 95.0], [10.0, 60.0, 50.0, 95.0])],
        },
    ]
}

/// A sample no view can answer, so its chain fails outright.
pub fn failing_sample() -> FixtureSample {
    FixtureSample {
        id: "s4",
        scenario: "GOS",
        instruction: "the unicorn",
        gt: [30.0, 30.0, 70.0, 70.0],
        views: [None; 4],
        selection: None,
        refinements: Vec::new(),
    }
}

pub fn mock_rules(samples: &[FixtureSample]) -> Vec<Value> {
    let augs = Augmentation::default_set();
    let mut rules = Vec::new();
    for s in samples {
        for (aug, reply) in augs.iter().zip(&s.views) {
            if let Some(b) = reply {
                rules.push(json!({
                    "role": "generation",
                    "instruction": s.instruction,
                    "augmentation": aug.to_string(),
                    "replies": [bbox_reply(*b)],
                }));
            }
        }
        if let Some(k) = s.selection {
            rules.push(json!({
                "role": "selection",
                "instruction": s.instruction,
                "replies": [json!({ "choice": k }).to_string()],
            }));
        }
        for (current, reply) in &s.refinements {
            rules.push(json!({
                "role": "refinement",
                "instruction": s.instruction,
                "prompt_contains": format_coords(&bb(*current)),
                "replies": [bbox_reply(*reply)],
            }));
        }
    }
    rules
}

pub fn mock_script(samples: &[FixtureSample], segmenter: &str) -> Value {
    json!({ "mllm": { "rules": mock_rules(samples) }, "segmenter": segmenter })
}

pub struct Fixture {
    pub dir: TempDir,
    pub manifest: PathBuf,
    pub script: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn backend_flag(&self) -> String {
        format!("mock:{}", self.script.display())
    }
}

/// Writes images, ground-truth masks, a manifest and a mock script for
/// `samples` into a fresh temporary directory.
pub fn write_fixture(samples: &[FixtureSample], segmenter: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let palette = [[220, 30, 30], [30, 160, 60], [40, 80, 220], [200, 200, 40]];
    let mut lines = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let img = scene(s.gt, palette[i % palette.len()]);
        std::fs::write(dir.path().join(format!("{}.png", s.id)), img.to_png()).unwrap();
        let gt = box_fill_mask(&bb(s.gt), img.dims());
        std::fs::write(dir.path().join(format!("{}_mask.png", s.id)), mask_encode(&gt)).unwrap();
        lines.push(
            json!({
                "id": s.id,
                "image": format!("{}.png", s.id),
                "text": s.instruction,
                "mask": format!("{}_mask.png", s.id),
                "scenario": s.scenario,
            })
            .to_string(),
        );
    }
    let manifest = dir.path().join("manifest.jsonl");
    std::fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    let script = dir.path().join("script.json");
    write_json(&script, &mock_script(samples, segmenter));
    Fixture { dir, manifest, script }
}

pub fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// Box-IoU of two rectangles counted pixel by pixel under the pixel-center
/// rule, used as an independent check on fixture arithmetic.
pub fn pixel_iou(a: [f64; 4], b: [f64; 4], d: ImageDims) -> f64 {
    let inside = |r: [f64; 4], x: u32, y: u32| {
        let (cx, cy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        cx >= r[0] && cx < r[2] && cy >= r[1] && cy < r[3]
    };
    let (mut i, mut u) = (0u64, 0u64);
    for y in 0..d.height {
        for x in 0..d.width {
            let (p, q) = (inside(a, x, y), inside(b, x, y));
            i += u64::from(p && q);
            u += u64::from(p || q);
        }
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}
