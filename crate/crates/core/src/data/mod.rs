//! Conversation datasets: JSON Lines ingestion, splitting and embedding lookup.

mod embeddings;
mod preprocess;
mod synthetic;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

pub use embeddings::{read_embeddings, write_embeddings, EmbeddingTable, EMBEDDING_MAGIC};
pub use preprocess::{preprocess, strip_punctuation, Lexicon, Profile};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticData, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtteranceLabel {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub label: Option<UtteranceLabel>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
            label: None,
        }
    }

    pub fn labeled(mut self, label: UtteranceLabel) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    #[serde(default)]
    pub rating: Option<f64>,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    /// Id of utterance `index`, following the `<conversation_id>:<index>` convention.
    pub fn utterance_id(&self, index: usize) -> String {
        utterance_id(&self.id, index)
    }

    /// Stacks the embeddings of every utterance into an `[N × dim]` matrix.
    pub fn embedding_matrix(&self, table: &EmbeddingTable) -> Result<Tensor> {
        if self.utterances.is_empty() {
            return Err(Error::integrity(format!("conversation {} has no utterances", self.id)));
        }
        let mut data = Vec::with_capacity(self.utterances.len() * table.dim());
        for index in 0..self.utterances.len() {
            let id = self.utterance_id(index);
            let v = table
                .get(&id)
                .ok_or_else(|| Error::integrity(format!("missing embedding for utterance {id}")))?;
            data.extend(v.iter().map(|&x| f64::from(x)));
        }
        Tensor::new(vec![self.utterances.len(), table.dim()], data)
    }

    fn validate(&self) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::integrity(format!("conversation {} has no utterances", self.id)));
        }
        if let Some(r) = self.rating {
            if !(1.0..=5.0).contains(&r) {
                return Err(Error::integrity(format!(
                    "conversation {} has rating {r} outside [1, 5]",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

pub fn utterance_id(conversation_id: &str, index: usize) -> String {
    format!("{conversation_id}:{index}")
}

/// Parses a JSON Lines dataset (blank lines ignored) and validates it.
pub fn parse_conversations(text: &str) -> Result<Vec<Conversation>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(line).map_err(|source| Error::Json {
            context: format!("conversation on line {}", lineno + 1),
            source,
        })?;
        conv.validate()?;
        if !seen.insert(conv.id.clone()) {
            return Err(Error::integrity(format!("duplicate conversation id {}", conv.id)));
        }
        out.push(conv);
    }
    Ok(out)
}

pub fn read_conversations(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conversations(&text).map_err(|e| match e {
        Error::Json { context, source } => Error::Json {
            context: format!("{}: {context}", path.display()),
            source,
        },
        other => other,
    })
}

/// Reads any JSON Lines document (blank lines ignored); errors name the line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(lineno, line)| {
            serde_json::from_str(line).map_err(|source| Error::Json {
                context: format!("{} line {}", path.display(), lineno + 1),
                source,
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn write_conversations(path: impl AsRef<Path>, conversations: &[Conversation]) -> Result<()> {
    write_jsonl(path, conversations)
}

/// Drops conversations with fewer than `min_utterances` utterances.
pub fn filter_min_utterances(dataset: Vec<Conversation>, min_utterances: usize) -> Vec<Conversation> {
    dataset
        .into_iter()
        .filter(|c| c.utterances.len() >= min_utterances)
        .collect()
}

/// Train / dev / test partition of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then the first `dev_count` items form dev, the next
/// `test_count` test, and the remainder train.
///
/// The shuffle is rand's Fisher-Yates driven by the `"split"` ChaCha8 stream
/// of `seed`.
pub fn split<T: Clone>(dataset: &[T], dev_count: usize, test_count: usize, seed: u64) -> Result<Split<T>> {
    if dev_count + test_count >= dataset.len() && (dev_count + test_count) > 0 {
        return Err(Error::contract(format!(
            "dev ({dev_count}) + test ({test_count}) must be smaller than the dataset ({})",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<T>>();
    Ok(Split {
        dev: pick(&order[..dev_count]),
        test: pick(&order[dev_count..dev_count + test_count]),
        train: pick(&order[dev_count + test_count..]),
    })
}
