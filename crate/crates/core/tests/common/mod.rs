#![allow(dead_code)]

pub mod server;

use std::path::PathBuf;

use eclm::corpus::{self, Example, Strictness};
use eclm::tags::BioTag;
use proptest::prelude::*;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn load_fixture(rel: &str) -> Vec<Example> {
    corpus::load_corpus(&fixture(rel), Strictness::Strict)
        .expect("fixture loads")
        .examples
}

pub const LABELS: [&str; 5] = ["city", "date", "time", "airline", "genre"];

/// Any B/I/O sequence, dangling I- included.
pub fn arb_tags(max_len: usize) -> impl Strategy<Value = Vec<BioTag>> {
    let tag = (0u8..3, 0usize..LABELS.len()).prop_map(|(k, l)| match k {
        0 => BioTag::O,
        1 => BioTag::B(LABELS[l].to_owned()),
        _ => BioTag::I(LABELS[l].to_owned()),
    });
    prop::collection::vec(tag, 0..=max_len)
}

/// Independent span scorer. A chunk (i, j, L) exists when position i opens a
/// chunk of L, positions i+1..=j continue it and j+1 does not.
pub fn brute_force_chunks(tags: &[BioTag]) -> Vec<(usize, usize, String)> {
    let label = |t: &BioTag| match t {
        BioTag::O => None,
        BioTag::B(l) | BioTag::I(l) => Some(l.clone()),
    };
    let continues = |k: usize, l: &str| matches!(&tags[k], BioTag::I(x) if x == l);
    let opens = |i: usize, l: &str| match &tags[i] {
        BioTag::B(x) => x == l,
        BioTag::I(x) => x == l && (i == 0 || label(&tags[i - 1]).as_deref() != Some(l)),
        BioTag::O => false,
    };
    let mut out = Vec::new();
    for i in 0..tags.len() {
        for j in i..tags.len() {
            for l in LABELS.iter().copied().chain(label(&tags[i]).as_deref()) {
                if opens(i, l)
                    && (i + 1..=j).all(|k| continues(k, l))
                    && (j + 1 == tags.len() || !continues(j + 1, l))
                {
                    out.push((i, j, l.to_owned()));
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Micro precision, recall and F1 from the brute-force chunks.
pub fn brute_force_f1(pred: &[Vec<BioTag>], gold: &[Vec<BioTag>]) -> (f64, f64, f64) {
    let (mut correct, mut predicted, mut expected) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        let pc = brute_force_chunks(p);
        let gc = brute_force_chunks(g);
        correct += pc.iter().filter(|c| gc.contains(c)).count();
        predicted += pc.len();
        expected += gc.len();
    }
    let p = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    let r = if expected == 0 { 0.0 } else { correct as f64 / expected as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Demotes every dangling I- to B-, by hand.
pub fn well_formed(tags: &[BioTag]) -> Vec<BioTag> {
    let mut out: Vec<BioTag> = Vec::with_capacity(tags.len());
    for t in tags {
        let fixed = match t {
            BioTag::I(l) => match out.last() {
                Some(BioTag::B(p)) | Some(BioTag::I(p)) if p == l => t.clone(),
                _ => BioTag::B(l.clone()),
            },
            _ => t.clone(),
        };
        out.push(fixed);
    }
    out
}

/// Token words for a random utterance of length n.
pub fn words(indices: &[usize], vocab: &[&str]) -> String {
    indices.iter().map(|&i| vocab[i % vocab.len()]).collect::<Vec<_>>().join(" ")
}

pub const VOCAB: [&str; 24] = [
    "show", "me", "flights", "from", "boston", "to", "denver", "on", "monday", "morning", "play", "some",
    "jazz", "by", "miles", "davis", "book", "a", "table", "for", "two", "in", "paris", "tonight",
];

/// True when every entity text occurs exactly once in the token sequence.
pub fn unambiguous(tokens: &[eclm::tags::Token], slots: &eclm::entity_codec::EntitySlotSet) -> bool {
    slots.iter().all(|s| {
        let needle: Vec<&str> = s.text.split(' ').collect();
        tokens
            .windows(needle.len())
            .filter(|w| w.iter().zip(&needle).all(|(t, n)| t.text() == *n))
            .count()
            == 1
    })
}

pub const INTENTS: [&str; 5] = ["atis_flight", "atis_airfare", "PlayMusic", "BookRestaurant", "GetWeather"];

/// Random valid example over a small vocabulary.
pub fn arb_example(max_len: usize) -> impl Strategy<Value = Example> {
    (arb_tags(max_len), prop::sample::subsequence(INTENTS.to_vec(), 1..=3))
        .prop_filter("needs a token", |(t, _)| !t.is_empty())
        .prop_flat_map(|(tags, intents)| {
            let n = tags.len();
            (prop::collection::vec(0usize..VOCAB.len(), n), Just(tags), Just(intents))
        })
        .prop_map(|(idx, tags, intents)| {
            Example::new(
                eclm::tags::tokenize(&words(&idx, &VOCAB)),
                well_formed(&tags),
                intents.into_iter().map(String::from).collect(),
            )
            .unwrap()
        })
}
