use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{options_from_map, Label, McqItem};
use crate::error::{Error, Result};

/// Field names used to read a source JSONL export.
///
/// `options` may be a label-keyed object or an array (labelled `A..` in
/// order); `answer` may be a label string or a zero-based integer index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaMapping {
    /// `None` synthesizes ids as `<id_prefix><line number>`.
    pub id: Option<String>,
    pub question: String,
    pub options: String,
    pub answer: String,
    /// Fields copied verbatim into `meta`.
    #[serde(default)]
    pub meta_fields: Vec<String>,
    /// Stored as `meta.source` when set.
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default = "default_id_prefix")]
    pub id_prefix: String,
}

fn default_id_prefix() -> String {
    "line-".to_string()
}

impl Default for SchemaMapping {
    fn default() -> Self {
        Self::canonical()
    }
}

impl SchemaMapping {
    /// `{"id", "question", "options": {"A": ..}, "answer": "A", "meta": {..}}`
    pub fn canonical() -> Self {
        SchemaMapping {
            id: Some("id".into()),
            question: "question".into(),
            options: "options".into(),
            answer: "answer".into(),
            meta_fields: Vec::new(),
            source: None,
            id_prefix: default_id_prefix(),
        }
    }

    /// MMLU-Pro export: `question_id`, option array, letter `answer`.
    pub fn mmlu_pro() -> Self {
        SchemaMapping {
            id: Some("question_id".into()),
            question: "question".into(),
            options: "options".into(),
            answer: "answer".into(),
            meta_fields: vec!["category".into(), "src".into()],
            source: Some("mmlu-pro".into()),
            id_prefix: "mmlu-pro-".into(),
        }
    }

    /// MedQA JSONL: no id, label-keyed options, letter in `answer_idx`.
    pub fn medqa() -> Self {
        SchemaMapping {
            id: None,
            question: "question".into(),
            options: "options".into(),
            answer: "answer_idx".into(),
            meta_fields: vec!["meta_info".into()],
            source: Some("medqa".into()),
            id_prefix: "medqa-".into(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "canonical" => Some(Self::canonical()),
            "mmlu-pro" | "mmlu_pro" => Some(Self::mmlu_pro()),
            "medqa" => Some(Self::medqa()),
            _ => None,
        }
    }

    fn map_line(&self, line_no: usize, value: Value) -> std::result::Result<McqItem, String> {
        let Value::Object(mut obj) = value else {
            return Err("line is not a JSON object".into());
        };
        let id = match &self.id {
            Some(field) => match obj.remove(field) {
                Some(Value::String(s)) => s,
                Some(Value::Number(n)) => n.to_string(),
                Some(_) => return Err(format!("field {field:?} is not a string or number")),
                None => return Err(format!("missing id field {field:?}")),
            },
            None => format!("{}{line_no}", self.id_prefix),
        };
        let stem = match obj.remove(&self.question) {
            Some(Value::String(s)) => s,
            Some(_) => return Err(format!("field {:?} is not a string", self.question)),
            None => return Err(format!("missing stem field {:?}", self.question)),
        };
        let options = match obj.remove(&self.options) {
            Some(Value::Array(arr)) => arr
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    other => Err(format!("option {other} is not a string")),
                })
                .collect::<std::result::Result<Vec<_>, _>>()?,
            Some(Value::Object(map)) => {
                let mut labeled = BTreeMap::new();
                for (key, v) in map {
                    let label = Label::parse(&key).ok_or_else(|| format!("invalid option label {key:?}"))?;
                    let Value::String(text) = v else {
                        return Err(format!("option {key} is not a string"));
                    };
                    labeled.insert(label, text);
                }
                options_from_map(labeled)?
            }
            Some(_) => return Err(format!("field {:?} is neither an array nor an object", self.options)),
            None => return Err(format!("missing options field {:?}", self.options)),
        };
        let correct = match obj.remove(&self.answer) {
            Some(Value::String(s)) => Label::parse(s.trim()).ok_or_else(|| format!("invalid answer label {s:?}"))?,
            Some(Value::Number(n)) => n
                .as_u64()
                .and_then(|i| Label::from_index(i as usize))
                .ok_or_else(|| format!("invalid answer index {n}"))?,
            Some(_) => return Err(format!("field {:?} is not a label or index", self.answer)),
            None => return Err(format!("missing answer field {:?}", self.answer)),
        };
        if correct.index() >= options.len() {
            return Err(format!(
                "correct label absent: {correct} not among {} options",
                options.len()
            ));
        }

        let mut meta = BTreeMap::new();
        if let Some(Value::Object(m)) = obj.remove("meta") {
            meta.extend(m);
        }
        for field in &self.meta_fields {
            if let Some(v) = obj.remove(field) {
                meta.insert(field.clone(), v);
            }
        }
        if let Some(source) = &self.source {
            meta.entry("source".to_string())
                .or_insert_with(|| Value::String(source.clone()));
        }

        let item = McqItem {
            id,
            stem,
            options,
            correct,
            meta,
        };
        item.validate().map_err(|e| match e {
            Error::InvalidItem { reason, .. } => reason,
            other => other.to_string(),
        })?;
        Ok(item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    /// One-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub items: Vec<McqItem>,
    pub errors: Vec<LineError>,
    pub lines_read: usize,
}

/// Reads a JSONL export. Malformed lines are reported, never dropped silently.
pub fn ingest_jsonl(path: impl AsRef<Path>, schema: &SchemaMapping) -> Result<IngestReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines_read += 1;
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| format!("malformed JSON: {e}"))
            .and_then(|v| schema.map_line(line_no, v));
        match parsed {
            Ok(item) => report.items.push(item),
            Err(message) => report.errors.push(LineError { line: line_no, message }),
        }
    }
    Ok(report)
}

/// Writes items in canonical JSONL, one object per line.
pub fn emit_jsonl(items: &[McqItem], path: impl AsRef<Path>) -> Result<()> {
    for item in items {
        item.validate()?;
    }
    write_jsonl(items, path)
}

pub fn write_jsonl<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}
