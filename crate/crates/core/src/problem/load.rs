use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value as Json;

use super::{ProblemInstance, Record};
use crate::error::{Error, Result};
use crate::expr::ConstantVocabulary;

/// Source file layouts understood by [`load_records`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// One normalized [`Record`] per line.
    Jsonl,
    /// Objects with `ID`, `Body`, `Question`, `Equation`, `Answer`.
    Svamp,
    /// Objects with `iIndex`, `sQuestion`, `lEquations`, `lSolutions`.
    Mawps,
}

impl FromStr for Dialect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Dialect::Jsonl),
            "svamp" => Ok(Dialect::Svamp),
            "mawps" => Ok(Dialect::Mawps),
            _ => Err(Error::UnknownDialect(s.to_string())),
        }
    }
}

/// A record that could not be turned into a [`ProblemInstance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LoadReport {
    pub problems: Vec<ProblemInstance>,
    pub skipped: Vec<Skipped>,
}

impl LoadReport {
    /// Builds instances from records, skipping and reporting failures.
    pub fn build(records: &[Record], constants: &ConstantVocabulary) -> Self {
        let mut report = LoadReport::default();
        for r in records {
            match ProblemInstance::from_record(r, constants) {
                Ok(p) => report.problems.push(p),
                Err(e) => {
                    tracing::warn!(id = %r.id, error = %e, "skipping record");
                    report.skipped.push(Skipped { id: r.id.clone(), reason: e.to_string() });
                }
            }
        }
        report
    }
}

pub fn load_records(path: &Path, dialect: Dialect) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path)?;
    read_records(&text, dialect)
}

/// Parses records from text. Array-based dialects also accept one object per
/// line.
pub fn read_records(text: &str, dialect: Dialect) -> Result<Vec<Record>> {
    let objects: Vec<Json> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text)?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?
    };
    objects.into_iter().enumerate().map(|(i, o)| convert(o, dialect, i)).collect()
}

fn field_str(o: &Json, key: &str) -> Option<String> {
    match o.get(key)? {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn field_num(o: &Json, key: &str) -> Option<f64> {
    match o.get(key)? {
        Json::Number(n) => n.as_f64(),
        Json::String(s) => s.trim().parse().ok(),
        Json::Array(a) => a.first().and_then(|v| v.as_f64()),
        _ => None,
    }
}

fn convert(o: Json, dialect: Dialect, line: usize) -> Result<Record> {
    let missing = |key: &str| Error::parse(&format!("record {line}"), format!("missing field {key}"));
    match dialect {
        Dialect::Jsonl => Ok(serde_json::from_value(o)?),
        Dialect::Svamp => Ok(Record {
            id: field_str(&o, "ID").unwrap_or_else(|| line.to_string()),
            context: field_str(&o, "Body").ok_or_else(|| missing("Body"))?,
            question: field_str(&o, "Question").unwrap_or_default(),
            equation: field_str(&o, "Equation").ok_or_else(|| missing("Equation"))?,
            answer: field_num(&o, "Answer"),
        }),
        Dialect::Mawps => {
            let equation = match o.get("lEquations") {
                Some(Json::Array(a)) if a.len() == 1 => a[0].as_str().map(str::to_string),
                Some(Json::Array(_)) => {
                    return Err(Error::parse(&format!("record {line}"), "multi-equation problems are not supported"))
                }
                Some(Json::String(s)) => Some(s.clone()),
                _ => None,
            }
            .ok_or_else(|| missing("lEquations"))?;
            Ok(Record {
                id: field_str(&o, "iIndex").unwrap_or_else(|| line.to_string()),
                context: field_str(&o, "sQuestion").ok_or_else(|| missing("sQuestion"))?,
                question: String::new(),
                equation,
                answer: field_num(&o, "lSolutions"),
            })
        }
    }
}

/// Loads a file and builds instances against `constants`.
pub fn load_problems(path: &Path, dialect: Dialect, constants: &ConstantVocabulary) -> Result<LoadReport> {
    let records = load_records(path, dialect)?;
    Ok(LoadReport::build(&records, constants))
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub(super) fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    match Json::deserialize(d)? {
        Json::String(s) => Ok(s),
        Json::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!("expected string or number, found {other}"))),
    }
}

pub(super) fn opt_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    match Json::deserialize(d)? {
        Json::Null => Ok(None),
        Json::Number(n) => Ok(n.as_f64()),
        Json::String(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| serde::de::Error::custom(format!("answer {s:?} is not a number"))),
        other => Err(serde::de::Error::custom(format!("expected a numeric answer, found {other}"))),
    }
}
