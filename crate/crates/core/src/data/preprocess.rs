//! Text normalization profiles.
//!
//! * `ap19`: strip punctuation.
//! * `convai`: rewrite emoticons and chat shorthand through the symbol lexicon,
//!   strip remaining punctuation, then merge consecutive turns by the same
//!   speaker (a merged turn is `bad` if any part was `bad`).
//! * `none`: identity.
//!
//! Punctuation means the Unicode `P*` categories. Apostrophes between two
//! alphanumeric characters ("don't") are kept. Whitespace is collapsed to
//! single spaces. Every profile is idempotent.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Conversation, Utterance, UtteranceLabel};
use crate::error::{Error, Result};

const BUILTIN_LEXICON: &str = include_str!("../../resources/symbols.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Ap19,
    Convai,
    None,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ap19" => Ok(Profile::Ap19),
            "convai" => Ok(Profile::Convai),
            "none" => Ok(Profile::None),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected ap19, convai or none)"))),
        }
    }
}

/// Symbol → words table, matched case-insensitively per whitespace token.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    map: HashMap<String, String>,
}

impl Lexicon {
    /// The lexicon shipped in `resources/symbols.tsv`.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON).expect("builtin lexicon is valid")
    }

    pub fn empty() -> Self {
        Self { map: HashMap::new() }
    }

    /// Parses `symbol<TAB>replacement` lines; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (symbol, replacement) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!("lexicon line {} has no tab separator", lineno + 1))
            })?;
            let symbol = symbol.trim();
            if symbol.is_empty() || symbol.contains(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "lexicon line {}: symbol must be a single token",
                    lineno + 1
                )));
            }
            let replacement = normalize_whitespace(&strip_punctuation(replacement));
            map.insert(symbol.to_lowercase(), replacement);
        }
        let lexicon = Self { map };
        // replacements must be fixed points, otherwise convai is not idempotent
        for (symbol, replacement) in &lexicon.map {
            if let Some(word) = replacement.split(' ').find(|w| lexicon.lookup(w).is_some()) {
                return Err(Error::Config(format!(
                    "lexicon replacement for {symbol:?} contains another symbol {word:?}"
                )));
            }
        }
        Ok(lexicon)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn lookup(&self, token: &str) -> Option<&str> {
        self.map.get(&token.to_lowercase()).map(String::as_str)
    }

    fn rewrite_token(&self, token: &str) -> String {
        if let Some(r) = self.lookup(token) {
            return r.to_string();
        }
        let stripped = strip_punctuation(token);
        match self.lookup(&stripped) {
            Some(r) => r.to_string(),
            None => stripped,
        }
    }

    /// Rewrites symbols, strips punctuation and collapses whitespace.
    pub fn apply(&self, text: &str) -> String {
        let words: Vec<String> = text
            .split_whitespace()
            .map(|t| self.rewrite_token(t))
            .collect();
        normalize_whitespace(&words.join(" "))
    }
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").expect("valid regex"))
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

/// Removes Unicode punctuation, keeping apostrophes inside words.
pub fn strip_punctuation(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in punctuation().find_iter(text) {
        out.push_str(&text[last..m.start()]);
        last = m.end();
        let c = m.as_str().chars().next().unwrap_or(' ');
        if is_apostrophe(c) {
            let before = text[..m.start()].chars().next_back();
            let after = text[m.end()..].chars().next();
            if before.is_some_and(char::is_alphanumeric) && after.is_some_and(char::is_alphanumeric) {
                out.push(c);
            }
        }
    }
    out.push_str(&text[last..]);
    out
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn merge_labels(a: Option<UtteranceLabel>, b: Option<UtteranceLabel>) -> Option<UtteranceLabel> {
    match (a, b) {
        (Some(UtteranceLabel::Bad), _) | (_, Some(UtteranceLabel::Bad)) => Some(UtteranceLabel::Bad),
        (Some(UtteranceLabel::Good), _) | (_, Some(UtteranceLabel::Good)) => Some(UtteranceLabel::Good),
        _ => None,
    }
}

/// Applies a normalization profile. Total: never fails.
pub fn preprocess(conversation: &Conversation, profile: Profile, lexicon: &Lexicon) -> Conversation {
    match profile {
        Profile::None => conversation.clone(),
        Profile::Ap19 => {
            let mut out = conversation.clone();
            for u in &mut out.utterances {
                u.text = normalize_whitespace(&strip_punctuation(&u.text));
            }
            out
        }
        Profile::Convai => {
            let mut merged: Vec<Utterance> = Vec::with_capacity(conversation.utterances.len());
            for u in &conversation.utterances {
                let text = lexicon.apply(&u.text);
                match merged.last_mut() {
                    Some(prev) if prev.speaker == u.speaker => {
                        prev.text = normalize_whitespace(&format!("{} {text}", prev.text));
                        prev.label = merge_labels(prev.label, u.label);
                    }
                    _ => merged.push(Utterance {
                        speaker: u.speaker,
                        text,
                        label: u.label,
                    }),
                }
            }
            Conversation {
                id: conversation.id.clone(),
                rating: conversation.rating,
                utterances: merged,
            }
        }
    }
}
