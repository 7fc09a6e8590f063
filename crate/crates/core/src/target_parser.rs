//! Parser for model generations in the target grammar of [`crate::prompting`].
//!
//! Parsing is total: any input yields a [`ParsedGeneration`], with anomalies
//! collected as [`ParseIssue`]s rather than errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::corpus::LabelInventory;
use crate::entity_codec::EntitySlotSet;
use crate::prompting::{LabelStructure, PromptVariant, NO_SLOTS};
use crate::tags::{BioTag, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    Intents,
    Chain,
    Slots,
    Tags,
}

impl Section {
    const ALL: [Section; 4] = [Section::Intents, Section::Chain, Section::Slots, Section::Tags];

    pub fn header(self) -> &'static str {
        match self {
            Section::Intents => "INTENTS:",
            Section::Chain => "CHAIN:",
            Section::Slots => "SLOTS:",
            Section::Tags => "TAGS:",
        }
    }

    fn expected_for(variant: PromptVariant) -> Vec<Section> {
        let mut s = vec![Section::Intents];
        if variant.has_chain() {
            s.push(Section::Chain);
        }
        s.push(if variant.uses_entity_slots() {
            Section::Slots
        } else {
            Section::Tags
        });
        s
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header().trim_end_matches(':'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelKind {
    Intent,
    Slot,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParseIssue {
    MissingSection(Section),
    UnknownLabel { kind: LabelKind, label: String },
    DuplicateEntity { slot_type: String, text: String },
    TrailingGarbage { line: usize, text: String },
    MalformedItem { line: usize, text: String },
    InvalidTag { tag: String },
    TagCountMismatch { expected: usize, found: usize },
}

impl ParseIssue {
    pub fn code(&self) -> &'static str {
        match self {
            ParseIssue::MissingSection(_) => "missing_section",
            ParseIssue::UnknownLabel { .. } => "unknown_label",
            ParseIssue::DuplicateEntity { .. } => "duplicate_entity",
            ParseIssue::TrailingGarbage { .. } => "trailing_garbage",
            ParseIssue::MalformedItem { .. } => "malformed_item",
            ParseIssue::InvalidTag { .. } => "invalid_tag",
            ParseIssue::TagCountMismatch { .. } => "tag_count_mismatch",
        }
    }
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseIssue::MissingSection(s) => write!(f, "missing_section({s})"),
            ParseIssue::UnknownLabel { kind, label } => {
                let kind = match kind {
                    LabelKind::Intent => "intent",
                    LabelKind::Slot => "slot",
                };
                write!(f, "unknown_label({kind}:{label})")
            }
            ParseIssue::DuplicateEntity { slot_type, text } => {
                write!(f, "duplicate_entity({slot_type}:{text})")
            }
            ParseIssue::TrailingGarbage { line, .. } => write!(f, "trailing_garbage(line {line})"),
            ParseIssue::MalformedItem { line, .. } => write!(f, "malformed_item(line {line})"),
            ParseIssue::InvalidTag { tag } => write!(f, "invalid_tag({tag})"),
            ParseIssue::TagCountMismatch { expected, found } => {
                write!(f, "tag_count_mismatch(expected {expected}, found {found})")
            }
        }
    }
}

/// Optional knowledge the parser can check a generation against.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseContext<'a> {
    pub inventory: Option<&'a LabelInventory>,
    /// Source utterance; enables tag-count and duplicate-entity checks.
    pub tokens: Option<&'a [Token]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedGeneration {
    pub intents: Vec<String>,
    pub chain: Option<Vec<(String, String)>>,
    pub slots: EntitySlotSet,
    pub tags: Option<Vec<BioTag>>,
    pub diagnostics: Vec<ParseIssue>,
}

impl ParsedGeneration {
    pub fn structure(&self) -> LabelStructure {
        LabelStructure {
            intents: self.intents.clone(),
            chain: self.chain.clone().unwrap_or_default(),
            slots: self.slots.clone(),
            tags: self.tags.clone().unwrap_or_default(),
        }
    }
}

fn split_header(line: &str) -> Option<(Section, &str)> {
    Section::ALL.into_iter().find_map(|s| {
        let h = s.header();
        let prefix = line.get(..h.len())?;
        prefix
            .eq_ignore_ascii_case(h)
            .then(|| (s, line[h.len()..].trim()))
    })
}

fn split_intents(text: &str) -> Vec<String> {
    // "[AND]" is ASCII, so lowercasing keeps byte offsets aligned.
    let lower = text.to_ascii_lowercase();
    let mut parts = Vec::new();
    let mut rest = 0;
    while let Some(pos) = lower[rest..].find("[and]") {
        parts.push(&text[rest..rest + pos]);
        rest += pos + "[and]".len();
    }
    parts.push(&text[rest..]);
    parts
        .into_iter()
        .flat_map(|p| p.split('#'))
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_owned)
        .collect()
}

enum Item {
    Pair(String, String),
    Malformed,
    Other,
}

fn parse_item(line: &str) -> Item {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    let body = if digits > 0 && matches!(line.as_bytes().get(digits), Some(b'.' | b')')) {
        &line[digits + 1..]
    } else if let Some(rest) = line.strip_prefix(['-', '*']) {
        rest
    } else if line.contains(" :: ") {
        line
    } else {
        return Item::Other;
    };
    let split = body.split_once(" :: ").or_else(|| body.split_once("::"));
    match split {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => {
            Item::Pair(k.trim().to_owned(), v.trim().to_owned())
        }
        _ => Item::Malformed,
    }
}

fn count_occurrences(tokens: &[Token], text: &str) -> usize {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if words.is_empty() || words.len() > tokens.len() {
        return 0;
    }
    tokens
        .windows(words.len())
        .filter(|w| w.iter().zip(&words).all(|(t, w)| t.text().to_lowercase() == *w))
        .count()
}

pub fn parse(generation: &str, variant: PromptVariant, ctx: ParseContext<'_>) -> ParsedGeneration {
    let mut out = ParsedGeneration::default();
    let mut seen = BTreeSet::new();
    let mut slot_pairs: Vec<(String, String)> = Vec::new();
    let mut open: Option<Section> = None;

    for (idx, raw) in generation.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((section, rest)) = split_header(line) {
            open = None;
            if !seen.insert(section) {
                out.diagnostics.push(ParseIssue::TrailingGarbage {
                    line: line_no,
                    text: line.to_owned(),
                });
                continue;
            }
            match section {
                Section::Intents => out.intents = split_intents(rest),
                Section::Chain => {
                    out.chain = Some(Vec::new());
                    open = Some(Section::Chain);
                }
                Section::Slots if rest.eq_ignore_ascii_case(NO_SLOTS) => {}
                Section::Slots => {
                    open = Some(Section::Slots);
                    if !rest.is_empty() {
                        match parse_item(rest) {
                            Item::Pair(k, v) => slot_pairs.push((k, v)),
                            _ => out.diagnostics.push(ParseIssue::MalformedItem {
                                line: line_no,
                                text: rest.to_owned(),
                            }),
                        }
                    }
                }
                Section::Tags => {
                    let mut tags = Vec::new();
                    for t in rest.split_whitespace() {
                        match t.parse::<BioTag>() {
                            Ok(tag) => tags.push(tag),
                            Err(_) => {
                                out.diagnostics.push(ParseIssue::InvalidTag { tag: t.to_owned() });
                                tags.push(BioTag::O);
                            }
                        }
                    }
                    out.tags = Some(tags);
                }
            }
            continue;
        }

        let item = match open {
            Some(_) => parse_item(line),
            None => Item::Other,
        };
        match (item, open) {
            (Item::Pair(k, v), Some(Section::Chain)) => {
                out.chain.get_or_insert_with(Vec::new).push((k, v));
            }
            (Item::Pair(k, v), Some(_)) => slot_pairs.push((k, v)),
            (Item::Malformed, _) => out.diagnostics.push(ParseIssue::MalformedItem {
                line: line_no,
                text: line.to_owned(),
            }),
            (Item::Pair(..) | Item::Other, _) => {
                open = None;
                out.diagnostics.push(ParseIssue::TrailingGarbage {
                    line: line_no,
                    text: line.to_owned(),
                });
            }
        }
    }

    for section in Section::expected_for(variant) {
        if !seen.contains(&section) {
            out.diagnostics.push(ParseIssue::MissingSection(section));
        }
    }

    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (k, v) in &slot_pairs {
        *counts.entry((k, v)).or_insert(0) += 1;
    }
    for ((k, v), n) in counts {
        let allowed = ctx.tokens.map_or(1, |t| count_occurrences(t, v));
        if n > 1 && n > allowed {
            out.diagnostics.push(ParseIssue::DuplicateEntity {
                slot_type: k.to_owned(),
                text: v.to_owned(),
            });
        }
    }

    if let (Some(tokens), Some(tags)) = (ctx.tokens, &out.tags) {
        if tokens.len() != tags.len() {
            out.diagnostics.push(ParseIssue::TagCountMismatch {
                expected: tokens.len(),
                found: tags.len(),
            });
        }
    }

    if let Some(inv) = ctx.inventory {
        let mut unknown = BTreeSet::new();
        let chain_intents = out.chain.iter().flatten().map(|(i, _)| i);
        for intent in out.intents.iter().chain(chain_intents) {
            if !inv.intents.contains(intent) {
                unknown.insert((LabelKind::Intent, intent.clone()));
            }
        }
        let tag_labels = out.tags.iter().flatten().filter_map(BioTag::label);
        for label in slot_pairs.iter().map(|(k, _)| k.as_str()).chain(tag_labels) {
            if !inv.slot_types.contains(label) {
                unknown.insert((LabelKind::Slot, label.to_owned()));
            }
        }
        out.diagnostics.extend(
            unknown
                .into_iter()
                .map(|(kind, label)| ParseIssue::UnknownLabel { kind, label }),
        );
    }

    out.slots = EntitySlotSet::from_pairs(slot_pairs);
    out
}
