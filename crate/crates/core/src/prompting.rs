//! Prompt and target rendering for the four training variants, plus JSONL
//! emission of `(instruction, input, target)` records.
//!
//! Target grammar (full variant):
//!
//! ```text
//! INTENTS: <intent_1> [AND] <intent_2>
//! CHAIN:
//! 1. <intent_1> :: <segment text>
//! SLOTS:
//! 1. <slot_type> :: <surface text>
//! ```
//!
//! An empty slot list renders as the single line `SLOTS: (none)`. Token-level
//! variants replace the SLOTS section with `TAGS: <tag_1> ... <tag_n>`.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Example, LabelInventory};
use crate::entity_codec::{self, EntitySlotSet};
use crate::intent_chain::{self, Connectives, IntentChain};
use crate::tags::BioTag;

pub const INTENT_JOINER: &str = " [AND] ";
pub const KEY_VALUE_SEPARATOR: &str = " :: ";
pub const NO_SLOTS: &str = "(none)";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown variant {0:?} (expected eclm, no-entity, no-chain or vanilla)")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptVariant {
    /// Chain of intent plus entity slots.
    #[default]
    Eclm,
    /// Chain of intent plus token-level tags.
    NoEntitySlot,
    /// Flat intents plus entity slots.
    NoChain,
    /// Flat intents plus token-level tags.
    VanillaSft,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] = [
        PromptVariant::Eclm,
        PromptVariant::NoEntitySlot,
        PromptVariant::NoChain,
        PromptVariant::VanillaSft,
    ];

    pub fn has_chain(self) -> bool {
        matches!(self, PromptVariant::Eclm | PromptVariant::NoEntitySlot)
    }

    pub fn uses_entity_slots(self) -> bool {
        matches!(self, PromptVariant::Eclm | PromptVariant::NoChain)
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::Eclm => "eclm",
            PromptVariant::NoEntitySlot => "no-entity",
            PromptVariant::NoChain => "no-chain",
            PromptVariant::VanillaSft => "vanilla",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PromptError::UnknownVariant(s.to_owned()))
    }
}

/// Everything a target string can carry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelStructure {
    pub intents: Vec<String>,
    /// `(intent, segment text)` pairs.
    pub chain: Vec<(String, String)>,
    pub slots: EntitySlotSet,
    pub tags: Vec<BioTag>,
}

impl LabelStructure {
    pub fn from_parts(
        example: &Example,
        chain: &IntentChain,
        slots: &EntitySlotSet,
    ) -> Result<Self, PromptError> {
        let inconsistent = |m: String| Err(PromptError::InconsistentInputs(m));
        if chain.len() != example.intents().len() {
            return inconsistent(format!(
                "chain has {} links for {} intents",
                chain.len(),
                example.intents().len()
            ));
        }
        for (link, intent) in chain.links.iter().zip(example.intents()) {
            if &link.intent != intent {
                return inconsistent(format!("chain intent {} != {}", link.intent, intent));
            }
            if link.range.is_empty() || link.range.end > example.len() {
                return inconsistent(format!("chain range {:?} out of bounds", link.range));
            }
        }
        let gold = entity_codec::construct_example(example);
        if gold.len() != slots.len() {
            return inconsistent(format!(
                "{} entity slots but the tags hold {}",
                slots.len(),
                gold.len()
            ));
        }
        Ok(LabelStructure {
            intents: example.intents().to_vec(),
            chain: chain.segment_texts(example.tokens()),
            slots: slots.clone(),
            tags: example.tags().to_vec(),
        })
    }

    /// Gold structure with the chain derived from `connectives`.
    pub fn gold(example: &Example, connectives: &Connectives) -> (Self, IntentChain) {
        let chain = intent_chain::chain_for(example, connectives);
        let slots = entity_codec::construct_example(example);
        let structure = LabelStructure::from_parts(example, &chain, &slots)
            .expect("gold chain and slots agree with their example");
        (structure, chain)
    }

    /// The subset of fields a variant's target carries.
    pub fn project(&self, variant: PromptVariant) -> LabelStructure {
        LabelStructure {
            intents: self.intents.clone(),
            chain: if variant.has_chain() {
                self.chain.clone()
            } else {
                Vec::new()
            },
            slots: if variant.uses_entity_slots() {
                self.slots.clone()
            } else {
                EntitySlotSet::default()
            },
            tags: if variant.uses_entity_slots() {
                Vec::new()
            } else {
                self.tags.clone()
            },
        }
    }
}

fn push_numbered<'a>(out: &mut String, items: impl Iterator<Item = (&'a str, &'a str)>) {
    for (i, (key, value)) in items.enumerate() {
        out.push_str(&format!("{}. {key}{KEY_VALUE_SEPARATOR}{value}\n", i + 1));
    }
}

/// Serializes a label structure in the variant's grammar.
pub fn render_structure(structure: &LabelStructure, variant: PromptVariant) -> String {
    let mut out = format!("INTENTS: {}\n", structure.intents.join(INTENT_JOINER));
    if variant.has_chain() {
        out.push_str("CHAIN:\n");
        push_numbered(
            &mut out,
            structure.chain.iter().map(|(i, t)| (i.as_str(), t.as_str())),
        );
    }
    if variant.uses_entity_slots() {
        if structure.slots.is_empty() {
            out.push_str(&format!("SLOTS: {NO_SLOTS}\n"));
        } else {
            out.push_str("SLOTS:\n");
            push_numbered(
                &mut out,
                structure
                    .slots
                    .iter()
                    .map(|s| (s.slot_type.as_str(), s.text.as_str())),
            );
        }
    } else {
        let tags: Vec<String> = structure.tags.iter().map(ToString::to_string).collect();
        out.push_str(&format!("TAGS: {}\n", tags.join(" ")));
    }
    out
}

pub fn render_target(
    example: &Example,
    chain: &IntentChain,
    slots: &EntitySlotSet,
    variant: PromptVariant,
) -> Result<String, PromptError> {
    let structure = LabelStructure::from_parts(example, chain, slots)?;
    Ok(render_structure(&structure, variant))
}

/// A chat-style prompt: fixed instruction plus the utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Prompt {
    pub instruction: String,
    pub input: String,
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\n\nInput: {}\n", self.instruction, self.input)
    }
}

fn label_list(labels: &std::collections::BTreeSet<String>) -> String {
    if labels.is_empty() {
        "(none)".to_owned()
    } else {
        labels.iter().cloned().collect::<Vec<_>>().join(", ")
    }
}

pub fn render_instruction(variant: PromptVariant, inventory: &LabelInventory) -> String {
    let mut task = String::from(
        "You are a spoken language understanding system. Identify every intent expressed in the input utterance",
    );
    if variant.has_chain() {
        task.push_str(", pair each intent with the part of the utterance that expresses it");
    }
    if variant.uses_entity_slots() {
        task.push_str(", and list the entity slots it mentions.");
    } else {
        task.push_str(", and tag every token with a BIO slot tag.");
    }

    let mut format = String::from("INTENTS: <intent>[ [AND] <intent>]...\n");
    if variant.has_chain() {
        format.push_str("CHAIN:\n1. <intent> :: <sub-utterance copied from the input>\n");
    }
    let rules = if variant.uses_entity_slots() {
        format.push_str("SLOTS:\n1. <slot type> :: <entity text copied from the input>\n");
        "Number the lines from 1. Write \"SLOTS: (none)\" when the utterance has no entities."
    } else {
        format.push_str("TAGS: <tag> <tag> ...\n");
        "Output exactly one tag per input token, separated by spaces. Use O for tokens outside any slot, B-<slot type> to open a slot and I-<slot type> to continue it."
    };

    format!(
        "{task}\n\nRespond in exactly this format:\n{format}{rules}\n\nAllowed intents: {}\nAllowed slot types: {}",
        label_list(&inventory.intents),
        label_list(&inventory.slot_types),
    )
}

pub fn render_prompt(example: &Example, variant: PromptVariant, inventory: &LabelInventory) -> Prompt {
    Prompt {
        instruction: render_instruction(variant, inventory),
        input: example.utterance(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub instruction: String,
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildSummary {
    pub records: usize,
    pub fallback_chains: usize,
}

impl BuildSummary {
    pub fn fallback_fraction(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.fallback_chains as f64 / self.records as f64
        }
    }
}

pub fn build_records(
    corpus: &[Example],
    variant: PromptVariant,
    connectives: &Connectives,
    inventory: &LabelInventory,
) -> (Vec<TrainingRecord>, BuildSummary) {
    let instruction = render_instruction(variant, inventory);
    let mut summary = BuildSummary::default();
    let records = corpus
        .iter()
        .map(|ex| {
            let (structure, chain) = LabelStructure::gold(ex, connectives);
            summary.records += 1;
            summary.fallback_chains += usize::from(chain.degenerate);
            TrainingRecord {
                instruction: instruction.clone(),
                input: ex.utterance(),
                target: render_structure(&structure, variant),
            }
        })
        .collect();
    (records, summary)
}

/// Writes one JSON object per line.
pub fn write_records(records: &[TrainingRecord], path: &Path) -> Result<usize, PromptError> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}

pub fn emit_training_file(
    corpus: &[Example],
    variant: PromptVariant,
    connectives: &Connectives,
    inventory: &LabelInventory,
    path: &Path,
) -> Result<BuildSummary, PromptError> {
    let (records, summary) = build_records(corpus, variant, connectives, inventory);
    write_records(&records, path)?;
    Ok(summary)
}
