//! Base-2 attention entropy, top-k% truncation, and positive/negative class
//! aggregation over a labelled split.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use xnlu_tensor::{Graph, Real};

use crate::corpus::{strip_bio, Example, LabelMaps, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, TaskKind};

/// `−Σ p log₂ p` of the weights normalized to sum to one, with `0 log 0 = 0`.
pub fn entropy(weights: &[f64]) -> Result<f64> {
    if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Value(format!("attention weight {bad} is not a finite non-negative number")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Value("entropy of an all-zero weight list".into()));
    }
    Ok(weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Number of values kept at `k_percent`: `⌈k·count/100⌉`, at least one.
pub fn topk_count(count: usize, k_percent: f64) -> Result<usize> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::Usage(format!("top-k percent must be in (0, 100], got {k_percent}")));
    }
    Ok(((k_percent * count as f64 / 100.0).ceil() as usize).clamp(1, count.max(1)))
}

/// Entropy of the `⌈k·count/100⌉` largest weights.
pub fn topk_entropy(weights: &[f64], k_percent: f64) -> Result<f64> {
    let keep = topk_count(weights.len(), k_percent)?;
    if keep >= weights.len() {
        return entropy(weights);
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.truncate(keep);
    entropy(&sorted)
}

/// Which attention family a report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyTask {
    Slot,
    Intent,
    Ner,
    Sentiment,
}

impl EntropyTask {
    /// Default attention family for a task kind.
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::JointNlu => EntropyTask::Slot,
            TaskKind::SentenceClassification => EntropyTask::Sentiment,
            TaskKind::TokenClassification => EntropyTask::Ner,
        }
    }

    fn is_token_level(self) -> bool {
        matches!(self, EntropyTask::Slot | EntropyTask::Ner)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntropyTask::Slot => "slot",
            EntropyTask::Intent => "intent",
            EntropyTask::Ner => "ner",
            EntropyTask::Sentiment => "sentiment",
        }
    }
}

impl std::str::FromStr for EntropyTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slot" => Ok(EntropyTask::Slot),
            "intent" => Ok(EntropyTask::Intent),
            "ner" => Ok(EntropyTask::Ner),
            "sentiment" => Ok(EntropyTask::Sentiment),
            other => Err(Error::Usage(format!(
                "unknown entropy task '{other}' (expected slot, intent, ner or sentiment)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub top_k_percent: f64,
    /// `None` when the bucket is empty.
    pub mean_pos: Option<f64>,
    pub mean_neg: Option<f64>,
    /// `mean_neg − mean_pos`
    pub diff: Option<f64>,
    pub pos_pairs: usize,
    pub neg_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub task: EntropyTask,
    pub examples: usize,
    pub classes: usize,
    pub rows: Vec<EntropyRow>,
}

impl EntropyReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "entropy ({}, {} examples, {} classes)",
            self.task.as_str(),
            self.examples,
            self.classes
        );
        let _ = writeln!(
            out,
            "{:>7}  {:>9}  {:>9}  {:>8}  {:>6}  {:>6}",
            "top-k%", "pos", "neg", "diff", "#pos", "#neg"
        );
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>7}  {:>9}  {:>9}  {:>8}  {:>6}  {:>6}",
                r.top_k_percent,
                cell(r.mean_pos),
                cell(r.mean_neg),
                cell(r.diff),
                r.pos_pairs,
                r.neg_pairs
            );
        }
        out
    }
}

/// Gold membership of one class, and that class's attention weights.
pub type ClassAttention = (bool, Vec<f64>);

/// Per (example, class) pair: gold membership and the attention weights of
/// that class over the utterance (flattened `l × l` for token-level tasks).
pub fn class_attention<T: Real>(
    model: &Model<T>,
    example: &Example,
    vocab: &Vocab,
    maps: &LabelMaps,
    task: EntropyTask,
) -> Result<Option<Vec<ClassAttention>>> {
    let ids = vocab.encode(&example.tokens);
    let mut g = Graph::inference();
    let fwd = model.forward(&mut g, &ids, &vec![true; ids.len()], 0.0)?;
    if task.is_token_level() {
        let trace = fwd
            .slot
            .as_ref()
            .ok_or_else(|| Error::Usage("model has no slot attention to analyse".into()))?;
        let tags = example
            .bio_tags
            .as_ref()
            .ok_or_else(|| Error::Usage("entropy analysis needs gold tags".into()))?;
        let mut present = vec![false; maps.slot_classes.len()];
        for tag in tags {
            if let Some(s) = strip_bio(tag)?.and_then(|c| maps.slot_classes.get(c)) {
                present[s] = true;
            }
        }
        Ok(Some(
            trace
                .attention
                .iter()
                .zip(present)
                .map(|(&a, pos)| (pos, g.value(a).to_f64_vec()))
                .collect(),
        ))
    } else {
        let trace = fwd
            .intent
            .as_ref()
            .ok_or_else(|| Error::Usage("model has no intent attention to analyse".into()))?;
        let Some(gold) = example.intent.as_deref().and_then(|s| maps.intents.get(s)) else {
            return Ok(None);
        };
        Ok(Some(
            trace
                .attention
                .iter()
                .enumerate()
                .map(|(i, &a)| (i == gold, g.value(a).to_f64_vec()))
                .collect(),
        ))
    }
}

/// Mean top-k% entropy of positive and negative classes, pooled over all
/// (example, class) pairs. Examples whose gold intent is unknown are skipped
/// for intent-level tasks.
pub fn entropy_report<T: Real>(
    model: &Model<T>,
    examples: &[Example],
    vocab: &Vocab,
    maps: &LabelMaps,
    k_levels: &[f64],
    task: EntropyTask,
) -> Result<EntropyReport> {
    if examples.is_empty() {
        return Err(Error::Usage("entropy report over an empty split".into()));
    }
    if k_levels.is_empty() {
        return Err(Error::Usage("no top-k levels requested".into()));
    }
    for &k in k_levels {
        topk_count(1, k)?;
    }
    let mut sums = vec![[0.0f64; 2]; k_levels.len()];
    let mut counts = [0usize; 2];
    let mut used = 0;
    let mut classes = 0;
    for ex in examples {
        let Some(pairs) = class_attention(model, ex, vocab, maps, task)? else {
            continue;
        };
        used += 1;
        classes = pairs.len();
        for (positive, weights) in pairs {
            let bucket = usize::from(!positive);
            counts[bucket] += 1;
            for (row, &k) in k_levels.iter().enumerate() {
                sums[row][bucket] += topk_entropy(&weights, k)?;
            }
        }
    }
    if used == 0 {
        return Err(Error::Usage("no example has a known gold label".into()));
    }
    let mean = |total: f64, n: usize| (n > 0).then(|| total / n as f64);
    let rows = k_levels
        .iter()
        .zip(&sums)
        .map(|(&k, s)| {
            let mean_pos = mean(s[0], counts[0]);
            let mean_neg = mean(s[1], counts[1]);
            EntropyRow {
                top_k_percent: k,
                mean_pos,
                mean_neg,
                diff: mean_pos.zip(mean_neg).map(|(p, n)| n - p),
                pos_pairs: counts[0],
                neg_pairs: counts[1],
            }
        })
        .collect();
    Ok(EntropyReport {
        task,
        examples: used,
        classes,
        rows,
    })
}
