//! Dataset records and their on-disk formats.
//!
//! * NLI: JSON lines `{"premise", "hypothesis", "label"}`; label is written as
//!   its integer code (entailment 0, contradiction 1, neutral 2) and read as
//!   either the code or the class name.
//! * STS: tab-separated `sentence1 \t sentence2 \t score`, score in `[0, 5]`.
//! * CLS: JSON lines `{"text", "label"}`.
//!
//! LF and CRLF are accepted; files are written with LF.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment = 0,
    Contradiction = 1,
    Neutral = 2,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Contradiction, NliLabel::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Contradiction => "contradiction",
            NliLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NliLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown NLI label {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NliExample {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StsExample {
    pub sentence1: String,
    pub sentence2: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsExample {
    pub text: String,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Nli,
    Sts,
    Cls,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Nli => "nli",
            DatasetKind::Sts => "sts",
            DatasetKind::Cls => "cls",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nli" => Ok(DatasetKind::Nli),
            "sts" => Ok(DatasetKind::Sts),
            "cls" => Ok(DatasetKind::Cls),
            other => Err(Error::input(format!("unknown dataset kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Nli(Vec<NliExample>),
    Sts(Vec<StsExample>),
    Cls(Vec<ClsExample>),
}

impl Dataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::Nli(_) => DatasetKind::Nli,
            Dataset::Sts(_) => DatasetKind::Sts,
            Dataset::Cls(_) => DatasetKind::Cls,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Nli(v) => v.len(),
            Dataset::Sts(v) => v.len(),
            Dataset::Cls(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every text in the dataset, in file order.
    pub fn texts(&self) -> Vec<&str> {
        match self {
            Dataset::Nli(v) => v
                .iter()
                .flat_map(|e| [e.premise.as_str(), e.hypothesis.as_str()])
                .collect(),
            Dataset::Sts(v) => v
                .iter()
                .flat_map(|e| [e.sentence1.as_str(), e.sentence2.as_str()])
                .collect(),
            Dataset::Cls(v) => v.iter().map(|e| e.text.as_str()).collect(),
        }
    }

    pub fn into_nli(self) -> Result<Vec<NliExample>> {
        match self {
            Dataset::Nli(v) => Ok(v),
            other => Err(Error::input(format!("expected an nli dataset, got {}", other.kind()))),
        }
    }

    pub fn into_sts(self) -> Result<Vec<StsExample>> {
        match self {
            Dataset::Sts(v) => Ok(v),
            other => Err(Error::input(format!("expected an sts dataset, got {}", other.kind()))),
        }
    }

    pub fn into_cls(self) -> Result<Vec<ClsExample>> {
        match self {
            Dataset::Cls(v) => Ok(v),
            other => Err(Error::input(format!("expected a cls dataset, got {}", other.kind()))),
        }
    }

    /// Serializes in the file format of this dataset's kind.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        match self {
            Dataset::Nli(v) => {
                for e in v {
                    let line = serde_json::json!({
                        "premise": e.premise,
                        "hypothesis": e.hypothesis,
                        "label": e.label.index(),
                    });
                    out.push_str(&line.to_string());
                    out.push('\n');
                }
            }
            Dataset::Sts(v) => {
                for e in v {
                    out.push_str(&format!("{}\t{}\t{}\n", e.sentence1, e.sentence2, e.score));
                }
            }
            Dataset::Cls(v) => {
                for e in v {
                    out.push_str(&serde_json::to_string(e).expect("serializable"));
                    out.push('\n');
                }
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct RawNli {
    premise: String,
    hypothesis: String,
    label: serde_json::Value,
}

#[derive(Deserialize)]
struct RawCls {
    text: String,
    label: serde_json::Value,
}

fn non_empty(field: &str, s: String) -> std::result::Result<String, String> {
    if s.trim().is_empty() {
        Err(format!("field {field:?} is empty"))
    } else {
        Ok(s)
    }
}

fn nli_label(v: &serde_json::Value) -> std::result::Result<NliLabel, String> {
    match v {
        serde_json::Value::String(s) => s.parse().map_err(|_| format!("bad label {s:?}")),
        serde_json::Value::Number(n) => n
            .as_u64()
            .and_then(|i| NliLabel::from_index(i as usize))
            .ok_or_else(|| format!("bad label {n}")),
        other => Err(format!("bad label {other}")),
    }
}

fn parse_nli_line(line: &str) -> std::result::Result<NliExample, String> {
    let raw: RawNli = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Ok(NliExample {
        premise: non_empty("premise", raw.premise)?,
        hypothesis: non_empty("hypothesis", raw.hypothesis)?,
        label: nli_label(&raw.label)?,
    })
}

fn parse_sts_line(line: &str) -> std::result::Result<StsExample, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    let score: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| format!("score {:?} is not a number", fields[2]))?;
    if !(0.0..=5.0).contains(&score) {
        return Err(format!("score {score} outside [0, 5]"));
    }
    Ok(StsExample {
        sentence1: non_empty("sentence1", fields[0].to_string())?,
        sentence2: non_empty("sentence2", fields[1].to_string())?,
        score,
    })
}

fn parse_cls_line(line: &str) -> std::result::Result<ClsExample, String> {
    let raw: RawCls = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let label = match raw.label {
        serde_json::Value::String(s) => s,
        serde_json::Value::Number(n) => n.to_string(),
        other => return Err(format!("bad label {other}")),
    };
    Ok(ClsExample {
        text: non_empty("text", raw.text)?,
        label: non_empty("label", label)?,
    })
}

/// Parses dataset text; `source` names the input in error messages.
pub fn parse_dataset(content: &str, kind: DatasetKind, source: &str) -> Result<Dataset> {
    let mut nli = Vec::new();
    let mut sts = Vec::new();
    let mut cls = Vec::new();
    for (i, line) in content.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        match kind {
            DatasetKind::Nli => nli.push(parse_nli_line(line).map_err(fail)?),
            DatasetKind::Sts => sts.push(parse_sts_line(line).map_err(fail)?),
            DatasetKind::Cls => cls.push(parse_cls_line(line).map_err(fail)?),
        }
    }
    let ds = match kind {
        DatasetKind::Nli => Dataset::Nli(nli),
        DatasetKind::Sts => Dataset::Sts(sts),
        DatasetKind::Cls => Dataset::Cls(cls),
    };
    if ds.is_empty() {
        return Err(Error::input(format!("{source}: dataset contains no examples")));
    }
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>, kind: DatasetKind) -> Result<Dataset> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content, kind, &path.display().to_string())
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    super::write_atomic(path.as_ref(), dataset.to_file_string().as_bytes())
}
