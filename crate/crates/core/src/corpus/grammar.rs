//! Closed caption grammar.
//!
//! caption := clause (" and " clause)* " across a " <texture> " background"
//! clause  := "a " <color> " " <shape> " " <verb-phrase>
//!
//! Every rendered caption tokenizes with zero out-of-vocabulary tokens under
//! the tokenizer in [`crate::encoders`], and round-trips back to its slot
//! fillers.

use super::motion::{MotionKind, MOTIONS};
use super::sprites::{ColorName, Shape, Texture, COLORS, SHAPES, TEXTURES};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const GRAMMAR_VERSION: &str = "v1";

/// Special tokens, always at the front of the vocabulary.
pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const NULL: &str = "<null>";

/// The full closed vocabulary, one entry per id.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v = vec![PAD, BOS, EOS, NULL, "a", "and", "across", "background"];
    for m in MOTIONS {
        for w in m.verb_phrase().split_whitespace() {
            if !v.contains(&w) {
                v.push(w);
            }
        }
    }
    for c in COLORS {
        v.push(c.noun());
    }
    for s in SHAPES {
        v.push(s.noun());
    }
    for t in TEXTURES {
        v.push(t.noun());
    }
    v
}

/// One subject slot of a structured caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSlot {
    pub color: ColorName,
    pub shape: Shape,
    pub motion: MotionKind,
}

/// Structured caption: template id plus slot fillers. The rendered string is
/// reproducible from this record alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredCaption {
    pub template_id: String,
    pub subjects: Vec<SubjectSlot>,
    pub background: Texture,
}

impl StructuredCaption {
    pub fn new(subjects: Vec<SubjectSlot>, background: Texture) -> Self {
        Self { template_id: GRAMMAR_VERSION.to_string(), subjects, background }
    }

    /// Expand the template into the rendered caption string.
    pub fn render(&self) -> Result<String> {
        if self.subjects.is_empty() {
            return Err(Error::config("caption needs at least one subject"));
        }
        if self.template_id != GRAMMAR_VERSION {
            return Err(Error::config(format!("unknown caption template {:?}", self.template_id)));
        }
        let clauses: Vec<String> = self
            .subjects
            .iter()
            .map(|s| format!("a {} {} {}", s.color.noun(), s.shape.noun(), s.motion.verb_phrase()))
            .collect();
        Ok(format!("{} across a {} background", clauses.join(" and "), self.background.noun()))
    }

    /// Parse a rendered caption back into slot fillers (inverse of `render`).
    pub fn parse(text: &str) -> Result<Self> {
        let err = || Error::config(format!("caption outside grammar: {text:?}"));
        let (body, bg_part) = text.rsplit_once(" across a ").ok_or_else(err)?;
        let bg_name = bg_part.strip_suffix(" background").ok_or_else(err)?;
        let background = TEXTURES
            .into_iter()
            .find(|t| t.noun() == bg_name)
            .ok_or_else(|| Error::OutOfVocabulary(bg_name.to_string()))?;
        let mut subjects = Vec::new();
        for clause in body.split(" and ") {
            let words: Vec<&str> = clause.split_whitespace().collect();
            if words.len() < 4 || words[0] != "a" {
                return Err(err());
            }
            let color = COLORS
                .into_iter()
                .find(|c| c.noun() == words[1])
                .ok_or_else(|| Error::OutOfVocabulary(words[1].to_string()))?;
            let shape = SHAPES
                .into_iter()
                .find(|s| s.noun() == words[2])
                .ok_or_else(|| Error::OutOfVocabulary(words[2].to_string()))?;
            let phrase = words[3..].join(" ");
            let motion = MOTIONS
                .into_iter()
                .find(|m| m.verb_phrase() == phrase)
                .ok_or_else(|| Error::OutOfVocabulary(phrase.clone()))?;
            subjects.push(SubjectSlot { color, shape, motion });
        }
        Ok(Self::new(subjects, background))
    }
}
