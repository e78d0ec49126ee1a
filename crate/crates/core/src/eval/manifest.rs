use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Benchmark scenario a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Explicit semantic segmentation: a category name.
    #[serde(rename = "ESS")]
    Ess,
    /// Generic object segmentation: a described object.
    #[serde(rename = "GOS")]
    Gos,
    /// Reasoning-guided segmentation: the target must be inferred.
    #[serde(rename = "RGS")]
    Rgs,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Ess, Scenario::Gos, Scenario::Rgs];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Ess => "ESS",
            Scenario::Gos => "GOS",
            Scenario::Rgs => "RGS",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ESS" => Ok(Scenario::Ess),
            "GOS" => Ok(Scenario::Gos),
            "RGS" => Ok(Scenario::Rgs),
            other => Err(format!("unknown scenario `{other}` (expected ESS, GOS or RGS)")),
        }
    }
}

/// One (image, instruction, ground-truth mask) evaluation triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    pub instruction: String,
    pub mask_path: PathBuf,
    pub scenario: Scenario,
}

#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    image: String,
    text: String,
    mask: String,
    scenario: String,
}

/// Sample counts of the public three-scenario release.
pub const OFFICIAL_COUNTS: [(Scenario, usize); 3] = [(Scenario::Ess, 140), (Scenario::Gos, 64), (Scenario::Rgs, 40)];

/// Loads a JSON-lines manifest. Relative paths resolve against the
/// manifest's directory; blank lines are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::MissingFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<Sample>, EvalError> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::ManifestParse { line: line_no, message };
        let raw: ManifestLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let scenario = raw.scenario.parse::<Scenario>().map_err(bad)?;
        if raw.id.trim().is_empty() {
            return Err(bad("empty id".into()));
        }
        if raw.text.trim().is_empty() {
            return Err(bad("empty instruction text".into()));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(bad(format!("duplicate id `{}`", raw.id)));
        }
        let image_path = base.join(&raw.image);
        let mask_path = base.join(&raw.mask);
        for p in [&image_path, &mask_path] {
            if !p.is_file() {
                return Err(EvalError::MissingFile {
                    path: p.clone(),
                    reason: format!("referenced on manifest line {line_no}"),
                });
            }
        }
        samples.push(Sample { id: raw.id, image_path, instruction: raw.text, mask_path, scenario });
    }
    Ok(samples)
}

/// Checks per-scenario counts against the public release split.
pub fn check_official_counts(samples: &[Sample]) -> Result<(), EvalError> {
    for (scenario, expected) in OFFICIAL_COUNTS {
        let got = samples.iter().filter(|s| s.scenario == scenario).count();
        if got != expected {
            return Err(EvalError::OfficialCounts(format!(
                "{scenario} has {got} samples, the release has {expected} ({} total expected, got {})",
                OFFICIAL_COUNTS.iter().map(|c| c.1).sum::<usize>(),
                samples.len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.png", "a_mask.png", "b.png", "b_mask.png"] {
            std::fs::write(dir.path().join(f), b"x").unwrap();
        }
        dir
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = fixture_dir();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn keeps_file_order() {
        let dir = fixture_dir();
        let text = [
            r#"{"id":"z","image":"a.png","text":"cat","mask":"a_mask.png","scenario":"ESS"}"#,
            r#"{"id":"a","image":"b.png","text":"the tall man","mask":"b_mask.png","scenario":"GOS"}"#,
            "",
            r#"{"id":"m","image":"a.png","text":"food with carbs","mask":"a_mask.png","scenario":"RGS"}"#,
        ]
        .join("\n");
        let s = parse_manifest(&text, dir.path()).unwrap();
        assert_eq!(s.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["z", "a", "m"]);
        assert_eq!(s[1].scenario, Scenario::Gos);
        assert_eq!(s[0].image_path, dir.path().join("a.png"));
    }

    #[test]
    fn unknown_scenario_names_line() {
        let dir = fixture_dir();
        let text = format!(
            "{}\n{}",
            r#"{"id":"1","image":"a.png","text":"cat","mask":"a_mask.png","scenario":"ESS"}"#,
            r#"{"id":"2","image":"a.png","text":"cat","mask":"a_mask.png","scenario":"XYZ"}"#
        );
        let err = parse_manifest(&text, dir.path()).unwrap_err();
        assert!(matches!(err, EvalError::ManifestParse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn rejects_duplicates_missing_keys_and_files() {
        let dir = fixture_dir();
        let one = r#"{"id":"1","image":"a.png","text":"cat","mask":"a_mask.png","scenario":"ESS"}"#;
        let err = parse_manifest(&format!("{one}\n{one}"), dir.path()).unwrap_err();
        assert!(matches!(err, EvalError::ManifestParse { line: 2, .. }));

        let err = parse_manifest(r#"{"id":"1","image":"a.png","mask":"a_mask.png","scenario":"ESS"}"#, dir.path())
            .unwrap_err();
        assert!(matches!(err, EvalError::ManifestParse { line: 1, .. }));

        let err = parse_manifest("not json", dir.path()).unwrap_err();
        assert!(matches!(err, EvalError::ManifestParse { line: 1, .. }));

        let err = parse_manifest(
            r#"{"id":"1","image":"nope.png","text":"cat","mask":"a_mask.png","scenario":"ESS"}"#,
            dir.path(),
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::MissingFile { .. }));

        assert!(matches!(load_manifest(dir.path().join("absent.jsonl")), Err(EvalError::MissingFile { .. })));
    }

    #[test]
    fn official_count_check() {
        let mk = |i: usize, scenario| Sample {
            id: i.to_string(),
            image_path: PathBuf::new(),
            instruction: "x".into(),
            mask_path: PathBuf::new(),
            scenario,
        };
        let mut v: Vec<Sample> = (0..140).map(|i| mk(i, Scenario::Ess)).collect();
        v.extend((140..204).map(|i| mk(i, Scenario::Gos)));
        v.extend((204..244).map(|i| mk(i, Scenario::Rgs)));
        assert_eq!(v.len(), 244);
        assert!(check_official_counts(&v).is_ok());
        v.pop();
        assert!(check_official_counts(&v).is_err());
    }
}
