//! Multi-intent SLU corpora in the token-per-line block format.
//!
//! Each block holds one `token tag` pair per line, followed by a line with the
//! intent labels joined by `#`. Blocks are separated by a blank line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tags::{self, BioTag, Token};

pub const INTENT_SEPARATOR: char = '#';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedReason {
    LengthMismatch,
    DanglingInside,
    EmptyIntentLine,
    InvalidTag,
    DuplicateIntent,
    NoTokens,
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MalformedReason::LengthMismatch => "length mismatch",
            MalformedReason::DanglingInside => "dangling I-tag",
            MalformedReason::EmptyIntentLine => "empty intent line",
            MalformedReason::InvalidTag => "invalid tag",
            MalformedReason::DuplicateIntent => "duplicate intent",
            MalformedReason::NoTokens => "no tokens",
        })
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed block at line {line}: {reason}")]
    MalformedBlock { line: usize, reason: MalformedReason },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("ratio {0} outside (0, 1]")]
    InvalidRatio(f64),
    #[error("invalid example: {0}")]
    InvalidExample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient {
        /// Demote dangling I-X to B-X instead of skipping the block.
        repair: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub reason: MalformedReason,
}

impl fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub intent: String,
    pub range: Range<usize>,
}

/// One utterance with its gold slot tags and intent labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    tokens: Vec<Token>,
    tags: Vec<BioTag>,
    intents: Vec<String>,
    segments: Option<Vec<Segment>>,
}

impl Example {
    pub fn new(
        tokens: Vec<Token>,
        tags: Vec<BioTag>,
        intents: Vec<String>,
    ) -> Result<Self, CorpusError> {
        Self::with_segments(tokens, tags, intents, None)
    }

    pub fn with_segments(
        tokens: Vec<Token>,
        tags: Vec<BioTag>,
        intents: Vec<String>,
        segments: Option<Vec<Segment>>,
    ) -> Result<Self, CorpusError> {
        let invalid = |msg: String| Err(CorpusError::InvalidExample(msg));
        if tokens.is_empty() {
            return invalid("no tokens".into());
        }
        if tokens.len() != tags.len() {
            return invalid(format!("{} tokens but {} tags", tokens.len(), tags.len()));
        }
        if let Some((i, t)) = tokens.iter().enumerate().find(|(i, t)| t.index() != *i) {
            return invalid(format!("token {:?} has index {} at {i}", t.text(), t.index()));
        }
        if let Err(e) = tags::check_well_formed(&tags) {
            return invalid(e.to_string());
        }
        if intents.is_empty() {
            return invalid("no intents".into());
        }
        let unique: BTreeSet<&String> = intents.iter().collect();
        if unique.len() != intents.len() {
            return invalid("duplicate intent label".into());
        }
        if intents
            .iter()
            .any(|i| i.is_empty() || i.contains(INTENT_SEPARATOR) || i.contains(char::is_whitespace))
        {
            return invalid("intent labels must be non-empty without whitespace or '#'".into());
        }
        if let Some(segs) = &segments {
            if segs.len() != intents.len() {
                return invalid("segment count differs from intent count".into());
            }
            let mut prev_end = 0;
            for s in segs {
                if s.range.start < prev_end || s.range.end > tokens.len() || s.range.is_empty() {
                    return invalid(format!("bad segment range {:?}", s.range));
                }
                prev_end = s.range.end;
            }
        }
        Ok(Example {
            tokens,
            tags,
            intents,
            segments,
        })
    }

    /// Convenience constructor from whitespace-separated tokens and tags.
    pub fn parse(tokens: &str, tags: &str, intents: &[&str]) -> Result<Self, CorpusError> {
        let tags = tags::parse_tags(tags).map_err(|e| CorpusError::InvalidExample(e.to_string()))?;
        Example::new(
            tags::tokenize(tokens),
            tags,
            intents.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn tags(&self) -> &[BioTag] {
        &self.tags
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    pub fn segments(&self) -> Option<&[Segment]> {
        self.segments.as_deref()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn utterance(&self) -> String {
        tags::join_tokens(&self.tokens)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub examples: Vec<Example>,
    pub warnings: Vec<LoadWarning>,
}

pub fn load_corpus(path: &Path, strictness: Strictness) -> Result<LoadedCorpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::FileNotFound(path.to_owned())
        } else {
            CorpusError::Io {
                path: path.to_owned(),
                source,
            }
        }
    })?;
    parse_corpus(&text, strictness)
}

pub fn parse_corpus(text: &str, strictness: Strictness) -> Result<LoadedCorpus, CorpusError> {
    let mut loaded = LoadedCorpus::default();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    // A trailing sentinel flushes the last block.
    for (line_no, line) in lines.enumerate().map(|(i, l)| (i + 1, l)).chain([(0, "")]) {
        if !line.trim().is_empty() {
            block.push((line_no, line));
            continue;
        }
        if block.is_empty() {
            continue;
        }
        match parse_block(&block, strictness) {
            Ok(example) => loaded.examples.push(example),
            Err(warning) => match strictness {
                Strictness::Strict => {
                    return Err(CorpusError::MalformedBlock {
                        line: warning.line,
                        reason: warning.reason,
                    })
                }
                Strictness::Lenient { .. } => loaded.warnings.push(warning),
            },
        }
        block.clear();
    }
    Ok(loaded)
}

fn parse_block(block: &[(usize, &str)], strictness: Strictness) -> Result<Example, LoadWarning> {
    let fail = |line: usize, reason| Err(LoadWarning { line, reason });
    let (&(intent_line_no, intent_line), token_lines) =
        block.split_last().expect("blocks are non-empty");

    let intent_fields: Vec<&str> = intent_line.split_whitespace().collect();
    if intent_fields.len() != 1 {
        return fail(intent_line_no, MalformedReason::EmptyIntentLine);
    }
    if token_lines.is_empty() {
        return fail(intent_line_no, MalformedReason::NoTokens);
    }
    let intents: Vec<String> = intent_fields[0]
        .split(INTENT_SEPARATOR)
        .map(str::to_owned)
        .collect();
    if intents.iter().any(String::is_empty) {
        return fail(intent_line_no, MalformedReason::EmptyIntentLine);
    }
    if intents.iter().collect::<BTreeSet<_>>().len() != intents.len() {
        return fail(intent_line_no, MalformedReason::DuplicateIntent);
    }

    let mut tokens = Vec::with_capacity(token_lines.len());
    let mut tags = Vec::with_capacity(token_lines.len());
    for (i, &(line_no, line)) in token_lines.iter().enumerate() {
        let mut fields = line.split_whitespace();
        let (Some(text), Some(tag), None) = (fields.next(), fields.next(), fields.next()) else {
            return fail(line_no, MalformedReason::LengthMismatch);
        };
        let Ok(tag) = tag.parse::<BioTag>() else {
            return fail(line_no, MalformedReason::InvalidTag);
        };
        tokens.push(Token::new(text, i).expect("split_whitespace yields clean tokens"));
        tags.push(tag);
    }

    if let Some((pos, _)) = tags::first_dangling(&tags) {
        match strictness {
            Strictness::Lenient { repair: true } => tags = tags::repair(&tags),
            _ => return fail(token_lines[pos].0, MalformedReason::DanglingInside),
        }
    }

    Example::new(tokens, tags, intents).map_err(|_| LoadWarning {
        line: block[0].0,
        reason: MalformedReason::LengthMismatch,
    })
}

/// Writes examples back to the block format with LF line endings.
pub fn serialize_corpus(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        for (token, tag) in ex.tokens().iter().zip(ex.tags()) {
            out.push_str(token.text());
            out.push(' ');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push_str(&ex.intents().join("#"));
        out.push_str("\n\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub example_count: usize,
    pub vocabulary_size: usize,
    pub intent_label_count: usize,
    pub slot_label_count: usize,
    pub intent_count_histogram: BTreeMap<usize, usize>,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples={}", self.example_count)?;
        writeln!(f, "vocabulary_size={}", self.vocabulary_size)?;
        writeln!(f, "intent_labels={}", self.intent_label_count)?;
        writeln!(f, "slot_labels={}", self.slot_label_count)?;
        for (m, n) in &self.intent_count_histogram {
            writeln!(f, "intents_{m}={n}")?;
        }
        Ok(())
    }
}

pub fn compute_stats(corpus: &[Example]) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let inventory = LabelInventory::from_corpus(corpus);
    let vocabulary: BTreeSet<&str> = corpus
        .iter()
        .flat_map(|ex| ex.tokens().iter().map(Token::text))
        .collect();
    let mut histogram = BTreeMap::new();
    for ex in corpus {
        *histogram.entry(ex.intents().len()).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        example_count: corpus.len(),
        vocabulary_size: vocabulary.len(),
        intent_label_count: inventory.intents.len(),
        slot_label_count: inventory.slot_types.len(),
        intent_count_histogram: histogram,
    })
}

/// The closed sets of intent and slot labels observed in a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelInventory {
    pub intents: BTreeSet<String>,
    pub slot_types: BTreeSet<String>,
}

impl LabelInventory {
    pub fn from_corpus(corpus: &[Example]) -> Self {
        let mut inv = LabelInventory::default();
        for ex in corpus {
            inv.intents.extend(ex.intents().iter().cloned());
            inv.slot_types
                .extend(ex.tags().iter().filter_map(|t| t.label().map(str::to_owned)));
        }
        inv
    }
}

/// Number of items a subsample of `ratio` keeps out of `total`.
pub fn subsample_size(total: usize, ratio: f64) -> Result<usize, CorpusError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    // The epsilon absorbs binary rounding of products like 0.29 * 100.
    Ok(((ratio * total as f64) + 1e-9).floor() as usize)
}

/// Seeded uniform subsample of `floor(ratio * len)` items.
pub fn subsample<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<Vec<T>, CorpusError> {
    let keep = subsample_size(items.len(), ratio)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order[..keep].iter().map(|&i| items[i].clone()).collect())
}
