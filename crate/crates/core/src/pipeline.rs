//! Generation -> parse -> recovery -> scoring.

use serde::Serialize;

use crate::corpus::{Example, LabelInventory};
use crate::entity_codec::{self, AlignmentPolicy};
use crate::inference::GenerationRecord;
use crate::metrics::{self, EvalReport, MetricsError};
use crate::prompting::PromptVariant;
use crate::tags::BioTag;
use crate::target_parser::{self, ParseContext};

/// Per-example outcome, written to the diagnostics file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleOutcome {
    pub index: usize,
    pub utterance: String,
    pub gold_intents: Vec<String>,
    pub pred_intents: Vec<String>,
    pub gold_tags: String,
    pub pred_tags: String,
    pub intents_correct: bool,
    pub tags_correct: bool,
    pub parse_issues: Vec<String>,
    pub unmatched_entities: Vec<String>,
    pub generation_issue: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub intents: Vec<String>,
    pub tags: Vec<BioTag>,
    pub parse_issues: Vec<String>,
    pub unmatched: Vec<String>,
}

/// Turns one raw generation into predicted intents and a tag sequence aligned
/// with the example's tokens.
pub fn predict(
    example: &Example,
    generation: &str,
    variant: PromptVariant,
    inventory: Option<&LabelInventory>,
    policy: AlignmentPolicy,
) -> Prediction {
    let parsed = target_parser::parse(
        generation,
        variant,
        ParseContext {
            inventory,
            tokens: Some(example.tokens()),
        },
    );
    let mut unmatched = Vec::new();
    let tags = if variant.uses_entity_slots() {
        let recovery = entity_codec::recover(example.tokens(), &parsed.slots, policy);
        unmatched = recovery
            .unmatched
            .iter()
            .map(|u| format!("{}({}:{})", u.reason, u.slot.slot_type, u.slot.text))
            .collect();
        recovery.tags
    } else {
        let mut tags = parsed.tags.clone().unwrap_or_default();
        tags.resize(example.len(), BioTag::O);
        tags
    };
    Prediction {
        intents: parsed.intents,
        tags,
        parse_issues: parsed.diagnostics.iter().map(ToString::to_string).collect(),
        unmatched,
    }
}

fn join_tags(tags: &[BioTag]) -> String {
    tags.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

/// Scores `generations[i]` against `corpus[i]`.
pub fn score_generations(
    corpus: &[Example],
    generations: &[GenerationRecord],
    variant: PromptVariant,
    inventory: Option<&LabelInventory>,
    policy: AlignmentPolicy,
) -> Result<(EvalReport, Vec<ExampleOutcome>), MetricsError> {
    if corpus.len() != generations.len() {
        return Err(MetricsError::LengthMismatch {
            pred: generations.len(),
            gold: corpus.len(),
        });
    }
    let mut pred_tags = Vec::with_capacity(corpus.len());
    let mut pred_intents = Vec::with_capacity(corpus.len());
    let mut outcomes = Vec::with_capacity(corpus.len());
    for (index, (ex, record)) in corpus.iter().zip(generations).enumerate() {
        let p = predict(ex, &record.generation, variant, inventory, policy);
        outcomes.push(ExampleOutcome {
            index,
            utterance: ex.utterance(),
            gold_intents: ex.intents().to_vec(),
            pred_intents: p.intents.clone(),
            gold_tags: join_tags(ex.tags()),
            pred_tags: join_tags(&p.tags),
            intents_correct: metrics::intents_match(&p.intents, ex.intents()),
            tags_correct: p.tags == ex.tags(),
            parse_issues: p.parse_issues,
            unmatched_entities: p.unmatched,
            generation_issue: record.issue.as_ref().map(ToString::to_string),
        });
        pred_tags.push(p.tags);
        pred_intents.push(p.intents);
    }
    let gold_tags: Vec<Vec<BioTag>> = corpus.iter().map(|e| e.tags().to_vec()).collect();
    let gold_intents: Vec<Vec<String>> = corpus.iter().map(|e| e.intents().to_vec()).collect();
    let report = metrics::evaluate(&pred_tags, &pred_intents, &gold_tags, &gold_intents)?;
    Ok((report, outcomes))
}
