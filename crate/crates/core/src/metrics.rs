//! Slot F1, intent accuracy and overall (semantic frame) accuracy.
//!
//! Slot F1 is micro-averaged over conlleval-style spans: a predicted span
//! counts only if label, start and end all match a gold span.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::tags::BioTag;
pub use crate::tags::{spans_of, spans_of_lenient, SlotSpan};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predictions vs {gold} gold")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("example {index}: {pred} predicted tags vs {gold} gold tags")]
    TagLengthMismatch {
        index: usize,
        pred: usize,
        gold: usize,
    },
}

fn check_len<A, B>(pred: &[A], gold: &[B]) -> Result<(), MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    Ok(())
}

/// Span counts; add them up across examples before dividing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpanCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn of(pred: &[BioTag], gold: &[BioTag]) -> Self {
        let pred_spans = spans_of_lenient(pred);
        let gold_spans: BTreeSet<SlotSpan> = spans_of_lenient(gold).into_iter().collect();
        SpanCounts {
            correct: pred_spans.iter().filter(|s| gold_spans.contains(s)).count(),
            predicted: pred_spans.len(),
            gold: gold_spans.len(),
        }
    }

    pub fn scores(&self) -> SlotScores {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.correct, self.predicted);
        let recall = ratio(self.correct, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SlotScores {
            precision,
            recall,
            f1,
        }
    }
}

impl std::ops::Add for SpanCounts {
    type Output = SpanCounts;

    fn add(self, o: SpanCounts) -> SpanCounts {
        SpanCounts {
            correct: self.correct + o.correct,
            predicted: self.predicted + o.predicted,
            gold: self.gold + o.gold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn slot_counts(pred: &[Vec<BioTag>], gold: &[Vec<BioTag>]) -> Result<SpanCounts, MetricsError> {
    check_len(pred, gold)?;
    let mut total = SpanCounts::default();
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(MetricsError::TagLengthMismatch {
                index,
                pred: p.len(),
                gold: g.len(),
            });
        }
        total = total + SpanCounts::of(p, g);
    }
    Ok(total)
}

pub fn slot_f1(pred: &[Vec<BioTag>], gold: &[Vec<BioTag>]) -> Result<SlotScores, MetricsError> {
    Ok(slot_counts(pred, gold)?.scores())
}

pub fn intents_match(pred: &[String], gold: &[String]) -> bool {
    pred.iter().collect::<BTreeSet<_>>() == gold.iter().collect::<BTreeSet<_>>()
}

fn fraction(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Share of examples whose predicted intent set equals the gold set.
pub fn intent_accuracy(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64, MetricsError> {
    check_len(pred, gold)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| intents_match(p, g)).count();
    Ok(fraction(hits, gold.len()))
}

/// Share of examples with an exactly matching tag sequence and intent set.
pub fn overall_accuracy(
    pred_tags: &[Vec<BioTag>],
    pred_intents: &[Vec<String>],
    gold_tags: &[Vec<BioTag>],
    gold_intents: &[Vec<String>],
) -> Result<f64, MetricsError> {
    check_len(pred_tags, gold_tags)?;
    check_len(pred_intents, gold_intents)?;
    check_len(pred_tags, pred_intents)?;
    let hits = (0..gold_tags.len())
        .filter(|&i| pred_tags[i] == gold_tags[i] && intents_match(&pred_intents[i], &gold_intents[i]))
        .count();
    Ok(fraction(hits, gold_tags.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BucketMetrics {
    pub slot_f1: f64,
    pub intent_accuracy: f64,
    pub overall_accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub intent_accuracy: f64,
    pub overall_accuracy: f64,
    pub n_examples: usize,
    pub per_intent_count: BTreeMap<usize, BucketMetrics>,
}

#[derive(Default)]
struct Tally {
    spans: SpanCounts,
    intent_hits: usize,
    overall_hits: usize,
    n: usize,
}

impl Tally {
    fn add(&mut self, pred_tags: &[BioTag], pred_intents: &[String], gold_tags: &[BioTag], gold_intents: &[String]) {
        let intents_ok = intents_match(pred_intents, gold_intents);
        self.spans = self.spans + SpanCounts::of(pred_tags, gold_tags);
        self.intent_hits += usize::from(intents_ok);
        self.overall_hits += usize::from(intents_ok && pred_tags == gold_tags);
        self.n += 1;
    }

    fn bucket(&self) -> BucketMetrics {
        BucketMetrics {
            slot_f1: self.spans.scores().f1,
            intent_accuracy: fraction(self.intent_hits, self.n),
            overall_accuracy: fraction(self.overall_hits, self.n),
            n: self.n,
        }
    }
}

fn validate(
    pred_tags: &[Vec<BioTag>],
    pred_intents: &[Vec<String>],
    gold_tags: &[Vec<BioTag>],
    gold_intents: &[Vec<String>],
) -> Result<(), MetricsError> {
    check_len(pred_tags, gold_tags)?;
    check_len(pred_intents, gold_intents)?;
    check_len(pred_tags, gold_intents)?;
    for (index, (p, g)) in pred_tags.iter().zip(gold_tags).enumerate() {
        if p.len() != g.len() {
            return Err(MetricsError::TagLengthMismatch {
                index,
                pred: p.len(),
                gold: g.len(),
            });
        }
    }
    Ok(())
}

/// Metrics recomputed within each bucket of gold intent count.
pub fn breakdown_by_intent_count(
    pred_tags: &[Vec<BioTag>],
    pred_intents: &[Vec<String>],
    gold_tags: &[Vec<BioTag>],
    gold_intents: &[Vec<String>],
) -> Result<BTreeMap<usize, BucketMetrics>, MetricsError> {
    validate(pred_tags, pred_intents, gold_tags, gold_intents)?;
    let mut tallies: BTreeMap<usize, Tally> = BTreeMap::new();
    for i in 0..gold_tags.len() {
        tallies.entry(gold_intents[i].len()).or_default().add(
            &pred_tags[i],
            &pred_intents[i],
            &gold_tags[i],
            &gold_intents[i],
        );
    }
    Ok(tallies.into_iter().map(|(m, t)| (m, t.bucket())).collect())
}

pub fn evaluate(
    pred_tags: &[Vec<BioTag>],
    pred_intents: &[Vec<String>],
    gold_tags: &[Vec<BioTag>],
    gold_intents: &[Vec<String>],
) -> Result<EvalReport, MetricsError> {
    validate(pred_tags, pred_intents, gold_tags, gold_intents)?;
    let mut total = Tally::default();
    for i in 0..gold_tags.len() {
        total.add(&pred_tags[i], &pred_intents[i], &gold_tags[i], &gold_intents[i]);
    }
    let scores = total.spans.scores();
    Ok(EvalReport {
        slot_precision: scores.precision,
        slot_recall: scores.recall,
        slot_f1: scores.f1,
        intent_accuracy: fraction(total.intent_hits, total.n),
        overall_accuracy: fraction(total.overall_hits, total.n),
        n_examples: total.n,
        per_intent_count: breakdown_by_intent_count(pred_tags, pred_intents, gold_tags, gold_intents)?,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

impl EvalReport {
    /// Aligned text table: one row for the whole set, one per intent count.
    pub fn to_table(&self) -> String {
        let mut rows = vec![(
            "all".to_owned(),
            self.n_examples,
            self.slot_f1,
            self.intent_accuracy,
            self.overall_accuracy,
        )];
        for (m, b) in &self.per_intent_count {
            rows.push((
                format!("intent num = {m}"),
                b.n,
                b.slot_f1,
                b.intent_accuracy,
                b.overall_accuracy,
            ));
        }
        let mut out = format!(
            "{:<16} | {:>6} | {:>8} | {:>11} | {:>12}\n",
            "Split", "n", "Slot(F1)", "Intent(Acc)", "Overall(Acc)"
        );
        out.push_str(&format!("{}\n", "-".repeat(out.trim_end().len())));
        for (name, n, f1, ia, oa) in rows {
            let _ = writeln!(
                out,
                "{name:<16} | {n:>6} | {:>8} | {:>11} | {:>12}",
                pct(f1),
                pct(ia),
                pct(oa)
            );
        }
        out
    }

    /// `key=value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_examples={}", self.n_examples);
        let _ = writeln!(out, "slot_precision={}", self.slot_precision);
        let _ = writeln!(out, "slot_recall={}", self.slot_recall);
        let _ = writeln!(out, "slot_f1={}", self.slot_f1);
        let _ = writeln!(out, "intent_accuracy={}", self.intent_accuracy);
        let _ = writeln!(out, "overall_accuracy={}", self.overall_accuracy);
        for (m, b) in &self.per_intent_count {
            let _ = writeln!(out, "intents_{m}.n={}", b.n);
            let _ = writeln!(out, "intents_{m}.slot_f1={}", b.slot_f1);
            let _ = writeln!(out, "intents_{m}.intent_accuracy={}", b.intent_accuracy);
            let _ = writeln!(out, "intents_{m}.overall_accuracy={}", b.overall_accuracy);
        }
        out
    }
}
