//! Conversion between BIO tag sequences and entity slots.
//!
//! [`construct`] groups each B-led run of tokens into a `(slot type, text)`
//! pair. [`recover`] goes the other way: it locates each entity's text in the
//! utterance and writes B-/I- tags over the matched tokens, O elsewhere.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::Example;
use crate::tags::{self, BioTag, SlotSpan, TagError, Token};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("{tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("malformed BIO: {0}")]
    MalformedBio(#[from] TagError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySlot {
    pub slot_type: String,
    pub text: String,
    pub order: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntitySlotSet {
    slots: Vec<EntitySlot>,
}

impl EntitySlotSet {
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        EntitySlotSet {
            slots: pairs
                .into_iter()
                .enumerate()
                .map(|(order, (k, v))| EntitySlot {
                    slot_type: k.into(),
                    text: v.into(),
                    order,
                })
                .collect(),
        }
    }

    pub fn slots(&self) -> &[EntitySlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EntitySlot> {
        self.slots.iter()
    }

    /// `(type, text)` pairs with multiplicities.
    pub fn multiset(&self) -> BTreeMap<(&str, &str), usize> {
        let mut m = BTreeMap::new();
        for s in &self.slots {
            *m.entry((s.slot_type.as_str(), s.text.as_str())).or_insert(0) += 1;
        }
        m
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        self.slots
            .iter()
            .map(|s| (s.slot_type.clone(), s.text.clone()))
            .collect()
    }
}

impl<'a> IntoIterator for &'a EntitySlotSet {
    type Item = &'a EntitySlot;
    type IntoIter = std::slice::Iter<'a, EntitySlot>;

    fn into_iter(self) -> Self::IntoIter {
        self.slots.iter()
    }
}

fn slots_from_spans(tokens: &[Token], spans: &[SlotSpan]) -> EntitySlotSet {
    EntitySlotSet::from_pairs(spans.iter().map(|s| {
        (
            s.label.clone(),
            tags::join_tokens(&tokens[s.start..=s.end]),
        )
    }))
}

/// Entity slots of a well-formed tag sequence, in span start order.
pub fn construct(tokens: &[Token], tags: &[BioTag]) -> Result<EntitySlotSet, CodecError> {
    if tokens.len() != tags.len() {
        return Err(CodecError::LengthMismatch {
            tokens: tokens.len(),
            tags: tags.len(),
        });
    }
    let spans = tags::spans_of(tags)?;
    Ok(slots_from_spans(tokens, &spans))
}

/// Like [`construct`] but a dangling I- tag opens a new entity.
pub fn construct_lenient(tokens: &[Token], tags: &[BioTag]) -> Result<EntitySlotSet, CodecError> {
    if tokens.len() != tags.len() {
        return Err(CodecError::LengthMismatch {
            tokens: tokens.len(),
            tags: tags.len(),
        });
    }
    Ok(slots_from_spans(tokens, &tags::spans_of_lenient(tags)))
}

pub fn construct_example(example: &Example) -> EntitySlotSet {
    construct(example.tokens(), example.tags()).expect("examples hold well-formed BIO")
}

/// How generated entity text binds to token positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentPolicy {
    /// Entities in listed order, each bound to the first fully unconsumed
    /// occurrence of its tokens; exact case first, then case-insensitive.
    #[default]
    Greedy,
    /// Greedy without the case-insensitive fallback.
    GreedyExactCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnmatchedReason {
    NotFound,
    OverlapConflict,
}

impl fmt::Display for UnmatchedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnmatchedReason::NotFound => "not_found",
            UnmatchedReason::OverlapConflict => "overlap_conflict",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnmatchedEntity {
    pub slot: EntitySlot,
    pub reason: UnmatchedReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub tags: Vec<BioTag>,
    pub unmatched: Vec<UnmatchedEntity>,
}

fn occurrences<'a>(
    tokens: &'a [Token],
    needle: &'a [&str],
    same: impl Fn(&str, &str) -> bool + 'a,
) -> impl Iterator<Item = usize> + 'a {
    let n = needle.len();
    (0..(tokens.len() + 1).saturating_sub(n)).filter(move |&start| {
        tokens[start..start + n]
            .iter()
            .zip(needle)
            .all(|(t, w)| same(t.text(), w))
    })
}

/// Rebuilds a tag sequence from entity slots. Never fails: entities that
/// cannot be placed are reported and leave their tokens untouched.
pub fn recover(tokens: &[Token], slots: &EntitySlotSet, policy: AlignmentPolicy) -> Recovery {
    let mut tags = vec![BioTag::O; tokens.len()];
    let mut consumed = vec![false; tokens.len()];
    let mut unmatched = Vec::new();

    let exact = |a: &str, b: &str| a == b;
    let folded = |a: &str, b: &str| a.to_lowercase() == b.to_lowercase();

    for slot in slots {
        let words: Vec<&str> = slot.text.split_whitespace().collect();
        if words.is_empty() || !tags::valid_label(&slot.slot_type) {
            unmatched.push(UnmatchedEntity {
                slot: slot.clone(),
                reason: UnmatchedReason::NotFound,
            });
            continue;
        }
        let free = |start: &usize| consumed[*start..*start + words.len()].iter().all(|c| !c);

        let mut seen = occurrences(tokens, &words, exact).peekable();
        let mut found_any = seen.peek().is_some();
        let mut hit = seen.find(free);
        if hit.is_none() && policy == AlignmentPolicy::Greedy {
            let mut seen = occurrences(tokens, &words, folded).peekable();
            found_any |= seen.peek().is_some();
            hit = seen.find(free);
        }

        match hit {
            Some(start) => {
                for (offset, pos) in (start..start + words.len()).enumerate() {
                    consumed[pos] = true;
                    tags[pos] = if offset == 0 {
                        BioTag::B(slot.slot_type.clone())
                    } else {
                        BioTag::I(slot.slot_type.clone())
                    };
                }
            }
            None => unmatched.push(UnmatchedEntity {
                slot: slot.clone(),
                reason: if found_any {
                    UnmatchedReason::OverlapConflict
                } else {
                    UnmatchedReason::NotFound
                },
            }),
        }
    }
    Recovery { tags, unmatched }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundtripFailure {
    pub index: usize,
    pub utterance: String,
    pub gold: Vec<BioTag>,
    pub recovered: Vec<BioTag>,
    pub unmatched: Vec<UnmatchedEntity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripReport {
    pub total: usize,
    pub exact: usize,
    pub multiset_preserved: usize,
    pub exact_fraction: f64,
    pub entity_multiset_fraction: f64,
    pub failures: Vec<RoundtripFailure>,
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Measures how much of each example survives `recover(construct(x))`.
pub fn roundtrip_report(corpus: &[Example], policy: AlignmentPolicy) -> RoundtripReport {
    let mut exact = 0;
    let mut multiset_preserved = 0;
    let mut failures = Vec::new();
    for (index, ex) in corpus.iter().enumerate() {
        let slots = construct_example(ex);
        let recovery = recover(ex.tokens(), &slots, policy);
        let rebuilt = construct(ex.tokens(), &recovery.tags).expect("recovery emits well-formed BIO");
        if rebuilt.multiset() == slots.multiset() {
            multiset_preserved += 1;
        }
        if recovery.tags == ex.tags() {
            exact += 1;
        } else {
            failures.push(RoundtripFailure {
                index,
                utterance: ex.utterance(),
                gold: ex.tags().to_vec(),
                recovered: recovery.tags,
                unmatched: recovery.unmatched,
            });
        }
    }
    RoundtripReport {
        total: corpus.len(),
        exact,
        multiset_preserved,
        exact_fraction: fraction(exact, corpus.len()),
        entity_multiset_fraction: fraction(multiset_preserved, corpus.len()),
        failures,
    }
}

fn join_tags(tags: &[BioTag]) -> String {
    tags.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for RoundtripReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples={}", self.total)?;
        writeln!(f, "exact={}", self.exact)?;
        writeln!(f, "exact_fraction={:.6}", self.exact_fraction)?;
        writeln!(f, "entity_multiset_fraction={:.6}", self.entity_multiset_fraction)?;
        writeln!(f, "failures={}", self.failures.len())?;
        for fail in &self.failures {
            writeln!(f, "failure.{}.utterance={}", fail.index, fail.utterance)?;
            writeln!(f, "failure.{}.gold={}", fail.index, join_tags(&fail.gold))?;
            writeln!(f, "failure.{}.recovered={}", fail.index, join_tags(&fail.recovered))?;
        }
        Ok(())
    }
}
