//! BIO tags, tokens and span extraction shared by the corpus, codec and metrics.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TagError {
    #[error("invalid tag {0:?}")]
    Invalid(String),
    #[error("token {0:?} is empty or contains whitespace")]
    InvalidToken(String),
    #[error("dangling I-{label} at position {position}")]
    DanglingInside { position: usize, label: String },
}

/// A single whitespace-free token of an utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    text: String,
    index: usize,
}

impl Token {
    pub fn new(text: impl Into<String>, index: usize) -> Result<Self, TagError> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(TagError::InvalidToken(text));
        }
        Ok(Token { text, index })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

/// Builds a token sequence from whitespace-separated text.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, t)| Token {
            text: t.to_owned(),
            index: i,
        })
        .collect()
}

pub fn join_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::text)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TagKind {
    Outside,
    Begin,
    Inside,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioTag {
    O,
    B(String),
    I(String),
}

impl BioTag {
    pub fn begin(label: impl Into<String>) -> Self {
        BioTag::B(label.into())
    }

    pub fn inside(label: impl Into<String>) -> Self {
        BioTag::I(label.into())
    }

    pub fn kind(&self) -> TagKind {
        match self {
            BioTag::O => TagKind::Outside,
            BioTag::B(_) => TagKind::Begin,
            BioTag::I(_) => TagKind::Inside,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            BioTag::O => None,
            BioTag::B(l) | BioTag::I(l) => Some(l),
        }
    }
}

pub fn valid_label(label: &str) -> bool {
    !label.is_empty() && !label.starts_with('-') && !label.chars().any(char::is_whitespace)
}

impl FromStr for BioTag {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioTag::O);
        }
        let tag = match s.split_at_checked(2) {
            Some(("B-", label)) if valid_label(label) => BioTag::B(label.to_owned()),
            Some(("I-", label)) if valid_label(label) => BioTag::I(label.to_owned()),
            _ => return Err(TagError::Invalid(s.to_owned())),
        };
        Ok(tag)
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::O => f.write_str("O"),
            BioTag::B(l) => write!(f, "B-{l}"),
            BioTag::I(l) => write!(f, "I-{l}"),
        }
    }
}

/// A labelled span over token positions, `end` inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl SlotSpan {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        assert!(start <= end, "span start {start} after end {end}");
        SlotSpan {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Position of the first I- tag not preceded by a B- or I- tag of the same label.
pub fn first_dangling(tags: &[BioTag]) -> Option<(usize, &str)> {
    let mut open: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            BioTag::O => open = None,
            BioTag::B(l) => open = Some(l),
            BioTag::I(l) => {
                if open != Some(l.as_str()) {
                    return Some((i, l));
                }
            }
        }
    }
    None
}

pub fn check_well_formed(tags: &[BioTag]) -> Result<(), TagError> {
    match first_dangling(tags) {
        Some((position, label)) => Err(TagError::DanglingInside {
            position,
            label: label.to_owned(),
        }),
        None => Ok(()),
    }
}

/// Demotes every dangling I-X to B-X.
pub fn repair(tags: &[BioTag]) -> Vec<BioTag> {
    let mut out = Vec::with_capacity(tags.len());
    let mut open: Option<String> = None;
    for tag in tags {
        let fixed = match tag {
            BioTag::I(l) if open.as_deref() != Some(l.as_str()) => BioTag::B(l.clone()),
            other => other.clone(),
        };
        open = fixed.label().map(str::to_owned);
        out.push(fixed);
    }
    out
}

/// Maximal B-led spans. Fails on a dangling I- tag.
pub fn spans_of(tags: &[BioTag]) -> Result<Vec<SlotSpan>, TagError> {
    check_well_formed(tags)?;
    Ok(spans_of_lenient(tags))
}

/// Span extraction that treats a dangling I-X as the start of a new span,
/// following conlleval.
pub fn spans_of_lenient(tags: &[BioTag]) -> Vec<SlotSpan> {
    let mut spans = Vec::new();
    let mut current: Option<SlotSpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            BioTag::I(l) if current.as_ref().is_some_and(|s| &s.label == l) => {
                if let Some(span) = current.as_mut() {
                    span.end = i;
                }
            }
            BioTag::B(l) | BioTag::I(l) => {
                spans.extend(current.take());
                current = Some(SlotSpan::new(l.clone(), i, i));
            }
            BioTag::O => spans.extend(current.take()),
        }
    }
    spans.extend(current);
    spans
}

/// Renders non-overlapping spans back to a tag sequence of length `len`.
pub fn tags_from_spans(spans: &[SlotSpan], len: usize) -> Vec<BioTag> {
    let mut tags = vec![BioTag::O; len];
    for span in spans {
        for (pos, tag) in tags.iter_mut().enumerate().take(span.end + 1).skip(span.start) {
            *tag = if pos == span.start {
                BioTag::B(span.label.clone())
            } else {
                BioTag::I(span.label.clone())
            };
        }
    }
    tags
}

pub fn parse_tags(line: &str) -> Result<Vec<BioTag>, TagError> {
    line.split_whitespace().map(str::parse).collect()
}
