//! Chain-of-intent decomposition: pairs each intent with its sub-utterance.
//!
//! Multi-intent utterances in MixATIS/MixSNIPS are conjunctions of
//! single-intent utterances, so the split points are connective words that
//! sit outside any slot span.

use std::ops::Range;

use thiserror::Error;

use crate::corpus::Example;
use crate::tags::{self, BioTag, Token};

pub const DEFAULT_CONNECTIVES: [&str; 3] = ["and", "and also", "and then"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("found {segments} segments for {intents} intents")]
    SegmentCountMismatch { segments: usize, intents: usize },
    #[error("connective list is empty")]
    NoConnectives,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainLink {
    pub intent: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentChain {
    pub links: Vec<ChainLink>,
    /// Every link spans the whole utterance because no segmentation matched.
    pub degenerate: bool,
}

impl IntentChain {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn segment_texts(&self, tokens: &[Token]) -> Vec<(String, String)> {
        self.links
            .iter()
            .map(|l| (l.intent.clone(), tags::join_tokens(&tokens[l.range.clone()])))
            .collect()
    }
}

/// Connectives split into words, longest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connectives(Vec<Vec<String>>);

impl Connectives {
    pub fn new<S: AsRef<str>>(list: &[S]) -> Result<Self, ChainError> {
        let mut words: Vec<Vec<String>> = list
            .iter()
            .map(|c| {
                c.as_ref()
                    .split_whitespace()
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>()
            })
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Err(ChainError::NoConnectives);
        }
        words.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        words.dedup();
        Ok(Connectives(words))
    }

    fn match_at(&self, tokens: &[Token], tags: &[BioTag], pos: usize) -> Option<usize> {
        self.0
            .iter()
            .find(|words| {
                let end = pos + words.len();
                end <= tokens.len()
                    && tags[pos..end].iter().all(|t| *t == BioTag::O)
                    && tokens[pos..end]
                        .iter()
                        .zip(words.iter())
                        .all(|(t, w)| t.text().to_lowercase() == *w)
            })
            .map(Vec::len)
    }
}

impl Default for Connectives {
    fn default() -> Self {
        Connectives::new(&DEFAULT_CONNECTIVES).expect("defaults are non-empty")
    }
}

/// Token ranges between top-level connectives. A connective only splits when
/// it is tagged O and leaves a non-empty segment on both sides.
pub fn split_segments(tokens: &[Token], tags: &[BioTag], connectives: &Connectives) -> Vec<Range<usize>> {
    let n = tokens.len();
    let mut segments = Vec::new();
    let mut seg_start = 0;
    let mut pos = 0;
    while pos < n {
        if pos > seg_start {
            if let Some(len) = connectives.match_at(tokens, tags, pos) {
                if pos + len < n {
                    segments.push(seg_start..pos);
                    pos += len;
                    seg_start = pos;
                    continue;
                }
            }
        }
        pos += 1;
    }
    segments.push(seg_start..n);
    segments
}

pub fn derive_chain(example: &Example, connectives: &Connectives) -> Result<IntentChain, ChainError> {
    let intents = example.intents();
    if intents.len() == 1 {
        return Ok(chain_fallback(example));
    }
    let segments = split_segments(example.tokens(), example.tags(), connectives);
    if segments.len() != intents.len() {
        return Err(ChainError::SegmentCountMismatch {
            segments: segments.len(),
            intents: intents.len(),
        });
    }
    Ok(IntentChain {
        links: intents
            .iter()
            .zip(segments)
            .map(|(intent, range)| ChainLink {
                intent: intent.clone(),
                range,
            })
            .collect(),
        degenerate: false,
    })
}

/// One link per intent, each over the full utterance.
pub fn chain_fallback(example: &Example) -> IntentChain {
    let full = 0..example.len();
    IntentChain {
        links: example
            .intents()
            .iter()
            .map(|intent| ChainLink {
                intent: intent.clone(),
                range: full.clone(),
            })
            .collect(),
        degenerate: example.intents().len() > 1,
    }
}

/// [`derive_chain`], falling back to the degenerate chain on mismatch.
pub fn chain_for(example: &Example, connectives: &Connectives) -> IntentChain {
    derive_chain(example, connectives).unwrap_or_else(|_| chain_fallback(example))
}
