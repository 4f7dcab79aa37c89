//! Intent accuracy, BIO span decoding and span F1, and whole-split evaluation.

use serde::{Deserialize, Serialize};
use xnlu_tensor::Real;

use crate::corpus::{strip_bio, Example, LabelMaps, Vocab, IGNORE};
use crate::error::{Error, Result};
use crate::model::{Model, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub class: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

/// Spans under the conlleval convention: a span opens at `B-X`, or at `I-X`
/// when the previous tag is not of class `X`, and runs while `I-X` continues it.
pub fn decode_bio_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Span>> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    for (t, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let class = strip_bio(tag)?;
        let continues = match (&open, class) {
            (Some(span), Some(c)) => tag.starts_with("I-") && span.class == c,
            _ => false,
        };
        if continues {
            if let Some(span) = open.as_mut() {
                span.end = t + 1;
            }
            continue;
        }
        spans.extend(open.take());
        open = class.map(|c| Span {
            class: c.to_string(),
            start: t,
            end: t + 1,
        });
    }
    spans.extend(open);
    Ok(spans)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    /// Percent.
    pub precision: f64,
    /// Percent.
    pub recall: f64,
    /// Percent.
    pub f1: f64,
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

/// Exact-match span precision, recall and F1 over aligned tag sequences, in
/// percent. With no spans on either side the agreement is perfect (all 100).
pub fn slot_span_f1<S: AsRef<str>, G: AsRef<str>>(predicted: &[Vec<S>], gold: &[Vec<G>]) -> Result<SpanScores> {
    if predicted.len() != gold.len() {
        return Err(Error::Usage(format!(
            "{} predicted sequences for {} gold sequences",
            predicted.len(),
            gold.len()
        )));
    }
    let (mut n_pred, mut n_gold, mut correct) = (0, 0, 0);
    for (i, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Usage(format!(
                "sequence {i}: {} predicted tags for {} gold tags",
                p.len(),
                g.len()
            )));
        }
        let ps = decode_bio_spans(p)?;
        let gs = decode_bio_spans(g)?;
        correct += ps.iter().filter(|s| gs.contains(s)).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    if n_pred == 0 && n_gold == 0 {
        return Ok(SpanScores {
            precision: 100.0,
            recall: 100.0,
            f1: 100.0,
            predicted: 0,
            gold: 0,
            correct: 0,
        });
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    let precision = ratio(correct, n_pred);
    let recall = ratio(correct, n_gold);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SpanScores {
        precision,
        recall,
        f1,
        predicted: n_pred,
        gold: n_gold,
        correct,
    })
}

/// Percent of exact matches, skipping gold entries equal to [`IGNORE`].
pub fn intent_accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    let scored: Vec<(usize, usize)> = predicted
        .iter()
        .zip(gold)
        .filter(|(_, &g)| g != IGNORE)
        .map(|(&p, &g)| (p, g))
        .collect();
    if scored.is_empty() {
        return Err(Error::Usage("no scorable gold labels".into()));
    }
    let hits = scored.iter().filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / scored.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub examples: usize,
    /// Percent; intent accuracy, or sentence accuracy for sentence classification.
    pub accuracy: Option<f64>,
    pub slots: Option<SpanScores>,
    /// Gold intents absent from the training label set, excluded from accuracy.
    pub unknown_intents: usize,
    /// Gold tags absent from the training label set, scored as `O`.
    pub unknown_tags: usize,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("task: {}\nexamples: {}\n", self.task, self.examples);
        if let Some(acc) = self.accuracy {
            let name = if self.task == TaskKind::SentenceClassification { "accuracy" } else { "intent_accuracy" };
            out += &format!("{name}: {acc:.2}\n");
        }
        if let Some(s) = &self.slots {
            out += &format!(
                "slot_precision: {:.2}\nslot_recall: {:.2}\nslot_f1: {:.2}\n",
                s.precision, s.recall, s.f1
            );
        }
        if self.unknown_intents > 0 || self.unknown_tags > 0 {
            out += &format!(
                "unscored: {} unknown intents, {} unknown tags\n",
                self.unknown_intents, self.unknown_tags
            );
        }
        out
    }
}

/// Runs the model over `examples` and scores every head it has.
pub fn evaluate<T: Real>(model: &Model<T>, examples: &[Example], vocab: &Vocab, maps: &LabelMaps) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Usage("nothing to evaluate".into()));
    }
    let task = model.spec().task;
    let mut report = EvalReport {
        task,
        examples: examples.len(),
        accuracy: None,
        slots: None,
        unknown_intents: 0,
        unknown_tags: 0,
    };
    let mut pred_intents = Vec::new();
    let mut gold_intents = Vec::new();
    let mut pred_tags: Vec<Vec<&str>> = Vec::new();
    let mut gold_tags: Vec<Vec<&str>> = Vec::new();
    for ex in examples {
        let prediction = model.predict(&vocab.encode(&ex.tokens))?;
        if let Some(p) = prediction.intent {
            let gold = ex.intent.as_deref().and_then(|s| maps.intents.get(s)).unwrap_or(IGNORE);
            if gold == IGNORE {
                report.unknown_intents += 1;
            }
            pred_intents.push(p);
            gold_intents.push(gold);
        }
        if let Some(tags) = prediction.tags {
            let gold = ex
                .bio_tags
                .as_ref()
                .ok_or_else(|| Error::Usage("example lacks gold tags".into()))?;
            gold_tags.push(
                gold.iter()
                    .map(|t| {
                        if maps.bio.get(t).is_some() {
                            t.as_str()
                        } else {
                            report.unknown_tags += 1;
                            "O"
                        }
                    })
                    .collect(),
            );
            pred_tags.push(tags.iter().map(|&i| maps.bio.name(i)).collect());
        }
    }
    if task.has_intent() {
        report.accuracy = Some(intent_accuracy(&pred_intents, &gold_intents)?);
    }
    if task.has_slot() {
        report.slots = Some(slot_span_f1(&pred_tags, &gold_tags)?);
    }
    Ok(report)
}
