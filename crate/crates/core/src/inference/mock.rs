//! Deterministic stand-ins for a model: echo the gold target, or corrupt it
//! the way autoregressive taggers go wrong (missed, relabelled, shifted or
//! invented entities; dropped intents).

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{example_id, GenerationRecord, Source};
use crate::corpus::{Example, LabelInventory};
use crate::entity_codec::EntitySlotSet;
use crate::intent_chain::Connectives;
use crate::prompting::{self, LabelStructure, PromptVariant};
use crate::tags::{self, SlotSpan};

pub const MOCK_ECHO_MODEL: &str = "mock-echo";
pub const MOCK_CORRUPT_MODEL: &str = "mock-corrupt";
const HALLUCINATED_TEXT: &str = "zzxq";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    DropEntity,
    RelabelEntity,
    ShiftSpan,
    DropIntent,
    HallucinateEntity,
}

impl CorruptionKind {
    const ALL: [CorruptionKind; 5] = [
        CorruptionKind::DropEntity,
        CorruptionKind::RelabelEntity,
        CorruptionKind::ShiftSpan,
        CorruptionKind::DropIntent,
        CorruptionKind::HallucinateEntity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::DropEntity => "drop_entity",
            CorruptionKind::RelabelEntity => "relabel_entity",
            CorruptionKind::ShiftSpan => "shift_span",
            CorruptionKind::DropIntent => "drop_intent",
            CorruptionKind::HallucinateEntity => "hallucinate_entity",
        }
    }
}

/// A corruption applied independently with probability `p` per
/// entity (or per intent, or per example for hallucination).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    kind: CorruptionKind,
    p: f64,
}

impl Corruption {
    pub fn new(kind: CorruptionKind, p: f64) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
        Ok(Corruption { kind, p })
    }

    pub fn kind(&self) -> CorruptionKind {
        self.kind
    }

    pub fn probability(&self) -> f64 {
        self.p
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind.name(), self.p)
    }
}

impl FromStr for Corruption {
    type Err = String;

    /// Accepts `drop_entity(0.5)`, `drop_entity=0.5` or `drop_entity:0.5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, p) = s
            .strip_suffix(')')
            .and_then(|r| r.split_once('('))
            .or_else(|| s.split_once('='))
            .or_else(|| s.split_once(':'))
            .ok_or_else(|| format!("expected <kind>(<p>), got {s:?}"))?;
        let kind = CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == name.trim())
            .ok_or_else(|| format!("unknown corruption {name:?}"))?;
        let p: f64 = p.trim().parse().map_err(|_| format!("bad probability {p:?}"))?;
        Corruption::new(kind, p)
    }
}

fn mock_record(prompt: &prompting::Prompt, model: &str, generation: String) -> GenerationRecord {
    GenerationRecord {
        example_id: example_id(prompt, model, 0.0),
        prompt: prompt.to_string(),
        generation,
        latency: Duration::ZERO,
        source: Source::Mock,
        issue: None,
    }
}

/// Generations equal to the rendered gold target.
pub fn mock_echo(
    corpus: &[Example],
    variant: PromptVariant,
    connectives: &Connectives,
    inventory: &LabelInventory,
) -> Vec<GenerationRecord> {
    corpus
        .iter()
        .map(|ex| {
            let (gold, _) = LabelStructure::gold(ex, connectives);
            let prompt = prompting::render_prompt(ex, variant, inventory);
            mock_record(&prompt, MOCK_ECHO_MODEL, prompting::render_structure(&gold, variant))
        })
        .collect()
}

fn hit(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn overlaps(span: &SlotSpan, others: &[SlotSpan], skip: usize) -> bool {
    others
        .iter()
        .enumerate()
        .any(|(j, o)| j != skip && span.start <= o.end && o.start <= span.end)
}

fn corrupt_structure(
    ex: &Example,
    variant: PromptVariant,
    connectives: &Connectives,
    inventory: &LabelInventory,
    corruption: Corruption,
    rng: &mut ChaCha8Rng,
) -> LabelStructure {
    let (gold, _) = LabelStructure::gold(ex, connectives);
    let mut spans = tags::spans_of(ex.tags()).expect("examples hold well-formed BIO");
    let mut intents = gold.intents.clone();
    let mut chain = gold.chain.clone();
    let mut extra: Option<(String, String)> = None;
    let p = corruption.p;

    match corruption.kind {
        CorruptionKind::DropEntity => spans.retain(|_| !hit(rng, p)),
        CorruptionKind::RelabelEntity => {
            for span in &mut spans {
                if hit(rng, p) {
                    let choices: Vec<&String> = inventory
                        .slot_types
                        .iter()
                        .filter(|l| **l != span.label)
                        .collect();
                    span.label = match choices.choose(rng) {
                        Some(l) => (*l).clone(),
                        None => format!("{}_relabelled", span.label),
                    };
                }
            }
        }
        CorruptionKind::ShiftSpan => {
            for i in 0..spans.len() {
                if !hit(rng, p) {
                    continue;
                }
                let right_first = rng.random::<bool>();
                let span = spans[i].clone();
                let right = (span.end + 1 < ex.len())
                    .then(|| SlotSpan::new(span.label.clone(), span.start + 1, span.end + 1));
                let left = (span.start > 0)
                    .then(|| SlotSpan::new(span.label.clone(), span.start - 1, span.end - 1));
                let order = if right_first { [right, left] } else { [left, right] };
                if let Some(moved) = order.into_iter().flatten().find(|c| !overlaps(c, &spans, i)) {
                    spans[i] = moved;
                }
            }
        }
        CorruptionKind::DropIntent => {
            let keep: Vec<bool> = intents.iter().map(|_| !hit(rng, p)).collect();
            let dropped: Vec<&String> = intents.iter().zip(&keep).filter(|(_, k)| !**k).map(|(i, _)| i).collect();
            chain.retain(|(intent, _)| !dropped.contains(&intent));
            let mut k = keep.iter();
            intents.retain(|_| *k.next().unwrap_or(&true));
        }
        CorruptionKind::HallucinateEntity => {
            if hit(rng, p) {
                let label = inventory
                    .slot_types
                    .iter()
                    .collect::<Vec<_>>()
                    .choose(rng)
                    .map(|l| (*l).clone())
                    .unwrap_or_else(|| "hallucinated".to_owned());
                if variant.uses_entity_slots() {
                    extra = Some((label, HALLUCINATED_TEXT.to_owned()));
                } else {
                    let free: Vec<usize> = (0..ex.len()).filter(|&i| !spans.iter().any(|s| s.start <= i && i <= s.end)).collect();
                    if let Some(&pos) = free.choose(rng) {
                        spans.push(SlotSpan::new(label, pos, pos));
                        spans.sort();
                    }
                }
            }
        }
    }

    spans.sort_by_key(|s| s.start);
    let mut pairs: Vec<(String, String)> = spans
        .iter()
        .map(|s| (s.label.clone(), tags::join_tokens(&ex.tokens()[s.start..=s.end])))
        .collect();
    pairs.extend(extra);
    LabelStructure {
        intents,
        chain,
        slots: EntitySlotSet::from_pairs(pairs),
        tags: tags::tags_from_spans(&spans, ex.len()),
    }
}

/// Gold targets with a seeded corruption applied. Deterministic for a fixed
/// corpus order and seed; every output still follows the target grammar.
pub fn mock_corrupt(
    corpus: &[Example],
    variant: PromptVariant,
    connectives: &Connectives,
    inventory: &LabelInventory,
    corruption: Corruption,
    seed: u64,
) -> Vec<GenerationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .iter()
        .map(|ex| {
            let structure = corrupt_structure(ex, variant, connectives, inventory, corruption, &mut rng);
            let prompt = prompting::render_prompt(ex, variant, inventory);
            mock_record(
                &prompt,
                MOCK_CORRUPT_MODEL,
                prompting::render_structure(&structure, variant),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Example> {
        vec![
            Example::parse(
                "fly from boston to new york and show fares",
                "O O B-from B-to_x O O O O O",
                &["atis_flight", "atis_airfare"],
            )
            .unwrap(),
            Example::parse("what is qx", "O O B-code", &["atis_abbreviation"]).unwrap(),
        ]
    }

    fn gens(records: &[GenerationRecord]) -> Vec<&str> {
        records.iter().map(|r| r.generation.as_str()).collect()
    }

    #[test]
    fn parse_corruption() {
        let c: Corruption = "drop_entity(1.0)".parse().unwrap();
        assert_eq!(c.kind(), CorruptionKind::DropEntity);
        assert_eq!("relabel_entity=0.5".parse::<Corruption>().unwrap().probability(), 0.5);
        assert!("shift_span:0.25".parse::<Corruption>().is_ok());
        assert!("drop_entity(1.5)".parse::<Corruption>().is_err());
        assert!("explode(0.5)".parse::<Corruption>().is_err());
        assert_eq!(c.to_string(), "drop_entity(1)");
    }

    #[test]
    fn zero_probability_is_echo() {
        let c = corpus();
        let inv = LabelInventory::from_corpus(&c);
        let conn = Connectives::default();
        for variant in PromptVariant::ALL {
            let echo = mock_echo(&c, variant, &conn, &inv);
            for kind in CorruptionKind::ALL {
                let corrupt = mock_corrupt(&c, variant, &conn, &inv, Corruption::new(kind, 0.0).unwrap(), 9);
                assert_eq!(gens(&echo), gens(&corrupt), "{variant} {kind:?}");
            }
        }
    }

    #[test]
    fn drop_all_entities() {
        let c = corpus();
        let inv = LabelInventory::from_corpus(&c);
        let out = mock_corrupt(
            &c,
            PromptVariant::Eclm,
            &Connectives::default(),
            &inv,
            "drop_entity(1.0)".parse().unwrap(),
            1,
        );
        assert!(out.iter().all(|r| r.generation.contains("SLOTS: (none)")));
        assert!(out[0].generation.starts_with("INTENTS: atis_flight [AND] atis_airfare\n"));
    }

    #[test]
    fn deterministic_for_seed() {
        let c = corpus();
        let inv = LabelInventory::from_corpus(&c);
        let conn = Connectives::default();
        let corr: Corruption = "shift_span(0.7)".parse().unwrap();
        let a = mock_corrupt(&c, PromptVariant::VanillaSft, &conn, &inv, corr, 3);
        let b = mock_corrupt(&c, PromptVariant::VanillaSft, &conn, &inv, corr, 3);
        assert_eq!(gens(&a), gens(&b));
    }

    #[test]
    fn drop_intents_removes_chain_links() {
        let c = corpus();
        let inv = LabelInventory::from_corpus(&c);
        let out = mock_corrupt(
            &c,
            PromptVariant::Eclm,
            &Connectives::default(),
            &inv,
            "drop_intent(1.0)".parse().unwrap(),
            1,
        );
        assert!(out[0].generation.starts_with("INTENTS: \nCHAIN:\nSLOTS:\n"));
    }

    #[test]
    fn hallucination_in_both_grammars() {
        let c = corpus();
        let inv = LabelInventory::from_corpus(&c);
        let conn = Connectives::default();
        let corr: Corruption = "hallucinate_entity(1.0)".parse().unwrap();
        let slots = mock_corrupt(&c, PromptVariant::NoChain, &conn, &inv, corr, 1);
        assert!(slots[1].generation.contains(&format!(":: {HALLUCINATED_TEXT}\n")));
        let tags = mock_corrupt(&c, PromptVariant::VanillaSft, &conn, &inv, corr, 1);
        let echo = mock_echo(&c, PromptVariant::VanillaSft, &conn, &inv);
        assert_ne!(tags[1].generation, echo[1].generation);
    }
}
