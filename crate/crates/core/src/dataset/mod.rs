//! Canonical multiple-choice data model plus ingestion, emission, dedupe,
//! splitting and option-count variants.

mod io;
mod ops;
mod variant;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use io::{emit_jsonl, ingest_jsonl, read_jsonl, write_jsonl, IngestReport, LineError, SchemaMapping};
pub use ops::{dedupe, filter_option_count, split, DatasetSplit};
pub use variant::{make_variant, make_variants, permute_correct_label, VariantMode, VariantSpec};

pub const MAX_OPTIONS: usize = 26;

/// Option label, stored as a zero-based position (`A` = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(u8);

impl Label {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < MAX_OPTIONS).then_some(Label(index as u8))
    }

    pub fn from_char(c: char) -> Option<Self> {
        c.is_ascii_uppercase().then(|| Label(c as u8 - b'A'))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_char(c),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        (b'A' + self.0) as char
    }

    /// Labels `A..` for an `n`-option item.
    pub fn range(n: usize) -> impl Iterator<Item = Label> {
        (0..n.min(MAX_OPTIONS)).map(|i| Label(i as u8))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.as_char().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Label::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid option label {s:?}")))
    }
}

/// Trim and collapse internal whitespace runs to single spaces.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One multiple-choice question.
///
/// Options are kept in label order, so the label of `options[i]` is the
/// `i`-th uppercase letter.
#[derive(Debug, Clone, PartialEq)]
pub struct McqItem {
    pub id: String,
    pub stem: String,
    pub options: Vec<String>,
    pub correct: Label,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl McqItem {
    /// Builds an item and checks every invariant.
    pub fn new(id: impl Into<String>, stem: impl Into<String>, options: Vec<String>, correct: Label) -> Result<Self> {
        let item = McqItem {
            id: id.into(),
            stem: stem.into(),
            options,
            correct,
            meta: BTreeMap::new(),
        };
        item.validate()?;
        Ok(item)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.options.len();
        if n < 2 {
            return Err(Error::invalid_item(
                &self.id,
                format!("needs at least 2 options, has {n}"),
            ));
        }
        if n > MAX_OPTIONS {
            return Err(Error::invalid_item(
                &self.id,
                format!("at most {MAX_OPTIONS} options supported, has {n}"),
            ));
        }
        if self.correct.index() >= n {
            return Err(Error::invalid_item(
                &self.id,
                format!("correct label {} absent from options", self.correct),
            ));
        }
        let mut seen = HashSet::with_capacity(n);
        for (label, text) in self.labeled() {
            if !seen.insert(normalize_ws(text)) {
                return Err(Error::invalid_item(
                    &self.id,
                    format!("option {label} duplicates an earlier option text"),
                ));
            }
        }
        Ok(())
    }

    pub fn n_options(&self) -> usize {
        self.options.len()
    }

    pub fn labels(&self) -> Vec<Label> {
        Label::range(self.options.len()).collect()
    }

    pub fn labeled(&self) -> impl Iterator<Item = (Label, &str)> {
        Label::range(self.options.len()).zip(self.options.iter().map(String::as_str))
    }

    pub fn option(&self, label: Label) -> Option<&str> {
        self.options.get(label.index()).map(String::as_str)
    }

    pub fn correct_text(&self) -> &str {
        &self.options[self.correct.index()]
    }

    pub fn distractor_labels(&self) -> Vec<Label> {
        self.labels().into_iter().filter(|l| *l != self.correct).collect()
    }

    /// Distractors in label order.
    pub fn distractors(&self) -> impl Iterator<Item = (Label, &str)> {
        let correct = self.correct;
        self.labeled().filter(move |(l, _)| *l != correct)
    }

    /// Rebuilds an item from the correct text and an ordered distractor list,
    /// placing the correct answer at `correct_position`.
    pub fn assemble(
        template: &McqItem,
        correct_text: &str,
        distractors: &[String],
        correct_position: usize,
    ) -> Result<McqItem> {
        if correct_position > distractors.len() {
            return Err(Error::InvalidArgument(format!(
                "correct position {correct_position} beyond {} distractors",
                distractors.len()
            )));
        }
        let mut options = Vec::with_capacity(distractors.len() + 1);
        options.extend_from_slice(&distractors[..correct_position]);
        options.push(correct_text.to_string());
        options.extend_from_slice(&distractors[correct_position..]);
        let item = McqItem {
            id: template.id.clone(),
            stem: template.stem.clone(),
            options,
            correct: Label::from_index(correct_position)
                .ok_or_else(|| Error::InvalidArgument("too many options".into()))?,
            meta: template.meta.clone(),
        };
        item.validate()?;
        Ok(item)
    }

    /// Renders options as `A. text` lines.
    pub fn render_options(&self) -> String {
        self.labeled()
            .map(|(l, t)| format!("{l}. {t}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn options_map(&self) -> BTreeMap<Label, String> {
        self.labeled().map(|(l, t)| (l, t.to_string())).collect()
    }
}

/// Canonical JSONL wire form.
#[derive(Serialize, Deserialize)]
struct WireItem {
    id: String,
    question: String,
    options: BTreeMap<Label, String>,
    answer: Label,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

impl Serialize for McqItem {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        WireItem {
            id: self.id.clone(),
            question: self.stem.clone(),
            options: self.options_map(),
            answer: self.correct,
            meta: self.meta.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for McqItem {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = WireItem::deserialize(deserializer)?;
        let options = options_from_map(wire.options).map_err(serde::de::Error::custom)?;
        let item = McqItem {
            id: wire.id,
            stem: wire.question,
            options,
            correct: wire.answer,
            meta: wire.meta,
        };
        item.validate().map_err(serde::de::Error::custom)?;
        Ok(item)
    }
}

pub(crate) fn options_from_map(map: BTreeMap<Label, String>) -> std::result::Result<Vec<String>, String> {
    let mut options = Vec::with_capacity(map.len());
    for (expected, (label, text)) in Label::range(map.len()).zip(map) {
        if label != expected {
            return Err(format!(
                "option labels must be consecutive from A; found {label} where {expected} expected"
            ));
        }
        options.push(text);
    }
    Ok(options)
}
