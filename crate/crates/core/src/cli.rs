//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 configuration or harness error, 2 when the chain
//! cannot produce any candidate box.
//!
//! Settings resolve in the order flag > environment > config file > default.
//! The config file is TOML:
//!
//! ```toml
//! backend = "live"            # or "mock:path/to/script.json"
//! workers = 4
//!
//! [chain]
//! augmentations = ["identity", "hflip", "scale:1.25", "scale:0.75"]
//! nms_iou_threshold = 0.8
//! enable_selection = true
//! enable_refinement = true
//! refinement_rounds = 1
//!
//! [mllm]
//! endpoint = "http://localhost:8000"
//! model = "qwen2.5-vl-7b-instruct"
//! timeout_secs = 60
//! max_retries = 2
//! temperature = 0.0
//!
//! [segmenter]
//! endpoint = "http://localhost:9000"
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use crate::agent::{run_chain, ChainConfig, ChainError, ChainResult, MASK_FILE};
use crate::backends::{
    self, BackendConfig, BoxFillSegmenter, HttpMllm, HttpSegmenter, MockScript, Segmenter, SegmenterKind,
    VisionLanguageModel,
};
use crate::eval::{
    ablation_table, check_official_counts, evaluate, load_manifest, run_ablation, EvalBackends, Sample,
    SegmenterChoice,
};
use crate::geometry::{clamp_box, Augmentation, BBox};
use crate::imaging::{mask_encode, render_som, Image, MarkStyle};

pub const DEFAULT_OUT_DIR: &str = "seg-agent-out";
const MAX_DEFAULT_WORKERS: usize = 8;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Harness(String),
    #[error("{0}")]
    ChainFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Harness(_) => 1,
            CliError::ChainFailed(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "seg-agent", version, about = "Language-guided segmentation with a generate/select/refine reasoning chain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment the object an instruction describes in one image.
    Segment {
        image: PathBuf,
        instruction: String,
        #[command(flatten)]
        opts: ChainOpts,
    },
    /// Score the chain on a JSON-lines manifest.
    Evaluate {
        manifest: PathBuf,
        #[command(flatten)]
        opts: ChainOpts,
        /// Fail unless the manifest has the public release's 140/64/40 split.
        #[arg(long)]
        expect_official: bool,
    },
    /// Score the four module combinations (baseline, GM+SM, GM+RM, GM+SM+RM).
    Ablate {
        manifest: PathBuf,
        #[command(flatten)]
        opts: ChainOpts,
    },
    /// Draw numbered Set-of-Mark boxes on an image.
    RenderSom {
        image: PathBuf,
        /// Box as x1,y1,x2,y2; repeat for several marks.
        #[arg(long = "box", value_name = "X1,Y1,X2,Y2", required = true)]
        boxes: Vec<String>,
        #[arg(long, default_value = DEFAULT_OUT_DIR)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ChainOpts {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `live` or `mock:PATH` (scripted replies).
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub mllm_url: Option<String>,
    #[arg(long)]
    pub mllm_model: Option<String>,
    #[arg(long)]
    pub seg_url: Option<String>,
    /// Comma-separated augmentations, e.g. `identity,hflip,scale:1.25`.
    #[arg(long)]
    pub aug: Option<String>,
    /// NMS IoU threshold (default 0.8).
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub no_selection: bool,
    #[arg(long)]
    pub no_refinement: bool,
    #[arg(long)]
    pub refine_rounds: Option<u32>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Write traces and Set-of-Mark renders.
    #[arg(long)]
    pub debug: bool,
    #[arg(long, default_value = DEFAULT_OUT_DIR)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointSection {
    endpoint: Option<String>,
    model: Option<String>,
    timeout_secs: Option<f64>,
    max_retries: Option<u32>,
    temperature: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    workers: Option<usize>,
    #[serde(default)]
    chain: ChainConfig,
    #[serde(default)]
    mllm: EndpointSection,
    #[serde(default)]
    segmenter: EndpointSection,
}

/// Everything a subcommand needs, validated before any network call.
pub struct Resolved {
    pub chain: ChainConfig,
    pub backends: EvalBackends,
    pub workers: usize,
    pub debug: bool,
    pub out: PathBuf,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(MAX_DEFAULT_WORKERS)
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

pub fn parse_aug_list(list: &str) -> Result<Vec<Augmentation>, CliError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse().map_err(|e| CliError::Config(format!("--aug: {e}"))))
        .collect()
}

pub fn parse_box(text: &str) -> Result<BBox, CliError> {
    let nums: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("--box `{text}`: {e}")))?;
    let [a, b, c, d] = nums[..] else {
        return Err(CliError::Config(format!("--box `{text}`: expected four numbers")));
    };
    BBox::from_corners(a, b, c, d).map_err(|e| CliError::Config(format!("--box `{text}`: {e}")))
}

impl ChainOpts {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let file: FileConfig = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };

        let mut chain = file.chain;
        if let Some(list) = &self.aug {
            chain.augmentations = parse_aug_list(list)?;
        }
        if let Some(t) = self.nms_iou {
            chain.nms_iou_threshold = t;
        }
        if self.no_selection {
            chain.enable_selection = false;
        }
        if self.no_refinement {
            chain.enable_refinement = false;
        }
        if let Some(r) = self.refine_rounds {
            chain.refinement_rounds = r;
        }
        chain.validate().map_err(CliError::Config)?;

        let workers = self.workers.or(file.workers).unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }

        let backend = self.backend.clone().or(file.backend).unwrap_or_else(|| "live".into());
        let backends = if let Some(path) = backend.strip_prefix("mock:") {
            let script = MockScript::load(path).map_err(|e| CliError::Config(e.to_string()))?;
            let mut mllm = script.mllm();
            if let Some(r) = self.max_retries {
                mllm = mllm.with_retries(r);
            }
            let segmenter = match script.segmenter {
                SegmenterKind::BoxFill => SegmenterChoice::Shared(Arc::new(BoxFillSegmenter)),
                SegmenterKind::Oracle => SegmenterChoice::Oracle,
            };
            EvalBackends { mllm: Arc::new(mllm), segmenter }
        } else if backend == "live" {
            let mllm_cfg = self.endpoint_config(
                &file.mllm,
                self.mllm_url.clone().or_else(|| env(backends::ENV_MLLM_URL)),
                backends::ENV_MLLM_URL,
                "--mllm-url",
            )?;
            let seg_cfg = self.endpoint_config(
                &file.segmenter,
                self.seg_url.clone().or_else(|| env(backends::ENV_SEG_URL)),
                backends::ENV_SEG_URL,
                "--seg-url",
            )?;
            let mllm = HttpMllm::new(mllm_cfg).map_err(|e| CliError::Config(e.to_string()))?;
            let seg = HttpSegmenter::new(seg_cfg).map_err(|e| CliError::Config(e.to_string()))?;
            EvalBackends { mllm: Arc::new(mllm), segmenter: SegmenterChoice::Shared(Arc::new(seg)) }
        } else {
            return Err(CliError::Config(format!("--backend `{backend}`: expected `live` or `mock:PATH`")));
        };

        Ok(Resolved { chain, backends, workers, debug: self.debug, out: self.out.clone() })
    }

    fn endpoint_config(
        &self,
        section: &EndpointSection,
        url: Option<String>,
        env_name: &str,
        flag: &str,
    ) -> Result<BackendConfig, CliError> {
        let endpoint = url.or_else(|| section.endpoint.clone()).ok_or_else(|| {
            CliError::Config(format!("live backend needs an endpoint: pass {flag} or set {env_name}"))
        })?;
        let mut cfg = BackendConfig::new(endpoint);
        cfg.model = self
            .mllm_model
            .clone()
            .or_else(|| env(backends::ENV_MLLM_MODEL))
            .or_else(|| section.model.clone())
            .unwrap_or_default();
        if let Some(t) = self.timeout.or(section.timeout_secs) {
            cfg.timeout_secs = t;
        }
        if let Some(r) = self.max_retries.or(section.max_retries) {
            cfg.max_retries = r;
        }
        if let Some(t) = section.temperature {
            cfg.temperature = t;
        }
        cfg.api_key = env(backends::ENV_API_KEY);
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Harness(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Harness(format!("cannot write {}: {e}", path.display())))
}

/// File-name-safe form of a sample id.
pub fn sanitize_id(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    match s.trim_start_matches('.') {
        "" => "_".to_string(),
        t => t.to_string(),
    }
}

fn write_chain_outputs(dir: &Path, result: &ChainResult, debug: bool) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write(&dir.join(MASK_FILE), &mask_encode(&result.mask))?;
    write(&dir.join("trace.json"), result.trace.to_json().as_bytes())?;
    let timings = serde_json::to_string_pretty(&result.timings).expect("timings serialize");
    write(&dir.join("timings.json"), timings.as_bytes())?;
    if debug {
        for (name, img) in &result.som_images {
            write(&dir.join(name), &img.to_png())?;
        }
    }
    Ok(())
}

pub fn cmd_segment(image: &Path, instruction: &str, opts: &ChainOpts) -> Result<(), CliError> {
    let resolved = opts.resolve()?;
    let img = Image::open(image).map_err(|e| CliError::Config(e.to_string()))?;
    let segmenter: Arc<dyn Segmenter> = match &resolved.backends.segmenter {
        SegmenterChoice::Shared(s) => s.clone(),
        SegmenterChoice::Oracle => {
            return Err(CliError::Config("the oracle segmenter needs ground truth; use `evaluate`".into()))
        }
    };
    let mllm: &dyn VisionLanguageModel = resolved.backends.mllm.as_ref();
    ensure_dir(&resolved.out)?;
    match run_chain(&img, instruction, &resolved.chain, mllm, segmenter.as_ref()) {
        Ok(result) => {
            write_chain_outputs(&resolved.out, &result, resolved.debug)?;
            println!(
                "final box {} -> mask {} px ({})",
                result.final_box,
                result.mask.area(),
                resolved.out.join(MASK_FILE).display()
            );
            Ok(())
        }
        Err(ChainError::AllCandidatesFailed { views }) => {
            let json = serde_json::to_string_pretty(&views).expect("views serialize");
            write(&resolved.out.join("failure.json"), json.as_bytes())?;
            Err(CliError::ChainFailed(format!(
                "all {} generation views failed; details in {}",
                views.len(),
                resolved.out.join("failure.json").display()
            )))
        }
        Err(ChainError::InvalidConfig(m)) => Err(CliError::Config(m)),
        Err(e) => Err(CliError::Harness(e.to_string())),
    }
}

fn load_samples(manifest: &Path) -> Result<Vec<Sample>, CliError> {
    load_manifest(manifest).map_err(|e| CliError::Config(e.to_string()))
}

pub fn cmd_evaluate(manifest: &Path, opts: &ChainOpts, expect_official: bool) -> Result<(), CliError> {
    let resolved = opts.resolve()?;
    let samples = load_samples(manifest)?;
    if expect_official {
        check_official_counts(&samples).map_err(|e| CliError::Config(e.to_string()))?;
    }
    ensure_dir(&resolved.out)?;
    let trace_dir = resolved.out.join("traces");
    if resolved.debug {
        ensure_dir(&trace_dir)?;
    }
    let hook = |sample: &Sample, result: &ChainResult| {
        let dir = trace_dir.join(sanitize_id(&sample.id));
        if let Err(e) = write_chain_outputs(&dir, result, true) {
            log::warn!("sample {}: {e}", sample.id);
        }
    };
    let report = evaluate(
        &samples,
        &resolved.chain,
        &resolved.backends,
        resolved.workers,
        resolved.debug.then_some(&hook as _),
    )
    .map_err(|e| CliError::Harness(e.to_string()))?;
    report.write(&resolved.out).map_err(|e| CliError::Harness(e.to_string()))?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn cmd_ablate(manifest: &Path, opts: &ChainOpts) -> Result<(), CliError> {
    let resolved = opts.resolve()?;
    let samples = load_samples(manifest)?;
    ensure_dir(&resolved.out)?;
    let results = run_ablation(&samples, &resolved.chain, &resolved.backends, resolved.workers)
        .map_err(|e| CliError::Harness(e.to_string()))?;
    let table = ablation_table(&results);
    write(&resolved.out.join("ablation.txt"), table.as_bytes())?;
    let json = serde_json::to_string_pretty(&results).expect("ablation serializes");
    write(&resolved.out.join("ablation.json"), json.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn cmd_render_som(image: &Path, boxes: &[String], out: &Path) -> Result<(), CliError> {
    let img = Image::open(image).map_err(|e| CliError::Config(e.to_string()))?;
    let boxes = boxes
        .iter()
        .map(|b| {
            let b = parse_box(b)?;
            clamp_box(&b, img.dims()).map_err(|e| CliError::Config(format!("box {b}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    ensure_dir(out)?;
    let path = out.join("som.png");
    write(&path, &render_som(&img, &boxes, &MarkStyle::default()).to_png())?;
    println!("{}", path.display());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Segment { image, instruction, opts } => cmd_segment(image, instruction, opts),
        Command::Evaluate { manifest, opts, expect_official } => cmd_evaluate(manifest, opts, *expect_official),
        Command::Ablate { manifest, opts } => cmd_ablate(manifest, opts),
        Command::RenderSom { image, boxes, out } => cmd_render_som(image, boxes, out),
    }
}

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aug_lists() {
        assert_eq!(
            parse_aug_list("identity, hflip,scale:0.75").unwrap(),
            vec![Augmentation::Identity, Augmentation::HorizontalFlip, Augmentation::Scale(0.75)]
        );
        assert!(parse_aug_list("identity,rotate").is_err());
    }

    #[test]
    fn box_flags() {
        assert_eq!(parse_box("30,10,10,40").unwrap(), BBox::new(10.0, 10.0, 30.0, 40.0).unwrap());
        assert!(parse_box("1,2,3").is_err());
        assert!(parse_box("a,b,c,d").is_err());
        assert!(parse_box("1,1,1,5").is_err());
    }

    #[test]
    fn ids_become_safe_file_names() {
        assert_eq!(sanitize_id("coco/val 12"), "coco_val_12");
        assert_eq!(sanitize_id("../../etc"), "_.._etc");
        assert_eq!(sanitize_id(".."), "_");
    }

    #[test]
    fn unknown_flags_exit_1() {
        assert_eq!(run(["seg-agent", "segment", "x.png", "cat", "--bogus"]), 1);
        assert_eq!(run(["seg-agent", "frobnicate"]), 1);
    }

    #[test]
    fn invalid_values_rejected_before_backends() {
        let cli = Cli::try_parse_from(["seg-agent", "evaluate", "m.jsonl", "--nms-iou", "1.5", "--backend", "live"]).unwrap();
        let Command::Evaluate { opts, .. } = cli.command else { panic!() };
        assert!(matches!(opts.resolve(), Err(CliError::Config(m)) if m.contains("threshold")));

        let cli = Cli::try_parse_from(["seg-agent", "evaluate", "m.jsonl", "--backend", "grpc"]).unwrap();
        let Command::Evaluate { opts, .. } = cli.command else { panic!() };
        assert!(matches!(opts.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn config_file_grammar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "backend = \"live\"\nworkers = 3\n[chain]\naugmentations = [\"identity\"]\nrefinement_rounds = 2\n\
             [mllm]\nendpoint = \"http://127.0.0.1:1\"\nmodel = \"m\"\n[segmenter]\nendpoint = \"http://127.0.0.1:2\"\n",
        )
        .unwrap();
        let args = ["seg-agent", "evaluate", "m.jsonl", "--config", p.to_str().unwrap(), "--no-selection"];
        let Command::Evaluate { opts, .. } = Cli::try_parse_from(args).unwrap().command else { panic!() };
        let r = opts.resolve().unwrap();
        assert_eq!(r.workers, 3);
        assert_eq!(r.chain.augmentations, vec![Augmentation::Identity]);
        assert_eq!(r.chain.refinement_rounds, 2);
        assert!(!r.chain.enable_selection);

        std::fs::write(&p, "unknown_key = 1\n").unwrap();
        let Command::Evaluate { opts, .. } = Cli::try_parse_from(args).unwrap().command else { panic!() };
        assert!(matches!(opts.resolve(), Err(CliError::Config(_))));
    }
}
