//! CSV dataset manifest: `path,identity,camera,split,distractor`.
//!
//! Lines starting with `#` are comments. Paths are relative to the
//! manifest's directory unless absolute.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fsutil;

pub const HEADER: [&str; 5] = ["path", "identity", "camera", "split", "distractor"];
pub const DISTRACTOR_ID: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            _ => Err(format!("unknown split `{s}` (train|query|gallery)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Path as written in the manifest.
    pub path: PathBuf,
    /// Raw identity; `-1` for distractors.
    pub identity: i64,
    pub camera: u32,
    pub split: Split,
    pub distractor: bool,
    /// Contiguous training label `0..K`, train split only.
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub samples: Vec<Sample>,
    /// `identity_map[label]` is the raw identity of training label `label`.
    pub identity_map: Vec<i64>,
}

impl Manifest {
    pub fn num_identities(&self) -> usize {
        self.identity_map.len()
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        if sample.path.is_absolute() {
            sample.path.clone()
        } else {
            self.base_dir.join(&sample.path)
        }
    }

    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.split == split).cloned().collect()
    }
}

fn row_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| row_err(path, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(row_err(
            path,
            header.position().map_or(1, |p| p.line() as usize),
            format!("header must be `{}`", HEADER.join(",")),
        ));
    }

    let mut samples = Vec::new();
    let mut remap: HashMap<i64, usize> = HashMap::new();
    let mut identity_map = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            row_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 5 {
            return Err(row_err(path, line, format!("expected 5 fields, found {}", rec.len())));
        }
        let identity: i64 = rec[1]
            .parse()
            .map_err(|_| row_err(path, line, format!("bad identity `{}`", &rec[1])))?;
        let camera: u32 = rec[2]
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| row_err(path, line, format!("bad camera `{}` (integer >= 1)", &rec[2])))?;
        let split: Split = rec[3].parse().map_err(|m: String| row_err(path, line, m))?;
        let distractor = match &rec[4] {
            "0" => false,
            "1" => true,
            other => return Err(row_err(path, line, format!("bad distractor flag `{other}` (0|1)"))),
        };
        if identity < DISTRACTOR_ID {
            return Err(row_err(path, line, format!("identity {identity} must be >= 0 or -1")));
        }
        if (identity == DISTRACTOR_ID) != distractor {
            return Err(row_err(path, line, "identity -1 and distractor=1 must appear together"));
        }
        if distractor && split == Split::Train {
            return Err(row_err(path, line, "distractors cannot be in the train split"));
        }
        let label = (split == Split::Train).then(|| {
            *remap.entry(identity).or_insert_with(|| {
                identity_map.push(identity);
                identity_map.len() - 1
            })
        });
        samples.push(Sample {
            path: PathBuf::from(&rec[0]),
            identity,
            camera,
            split,
            distractor,
            label,
        });
    }
    if identity_map.is_empty() {
        return Err(row_err(path, 0, "no training identities"));
    }
    Ok(Manifest {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        samples,
        identity_map,
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| row_err(path, 0, "manifest is not UTF-8"))?;
    parse_manifest(&text, path)
}

/// Renders samples as manifest CSV, with optional leading `#` comment lines.
pub fn render_manifest(samples: &[Sample], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(&HEADER.join(","));
    out.push('\n');
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.path.display(),
            s.identity,
            s.camera,
            s.split,
            u8::from(s.distractor)
        ));
    }
    out
}

pub fn write_manifest(path: &Path, samples: &[Sample], comments: &[String]) -> Result<()> {
    fsutil::write_atomic(path, render_manifest(samples, comments).as_bytes())
}
