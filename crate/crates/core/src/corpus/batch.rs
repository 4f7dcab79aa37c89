use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::labels::{strip_bio, LabelMaps};
use super::vocab::{Vocab, PAD};
use super::Example;

/// Target value excluded from every loss and metric.
pub const IGNORE: usize = usize::MAX;

/// Per-class 0/1 targets for the auxiliary binary classifiers of one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTargets {
    /// One-hot over intent classes; `None` when the example has no known intent.
    pub intent: Option<Vec<u8>>,
    /// `slot[t][s] == 1` iff token `t`'s tag belongs to slot class `s`.
    pub slot: Vec<Vec<u8>>,
}

pub fn build_binary_targets(example: &Example, maps: &LabelMaps) -> Result<BinaryTargets> {
    let intent = example
        .intent
        .as_deref()
        .and_then(|name| maps.intents.get(name))
        .map(|gold| {
            let mut row = vec![0u8; maps.intents.len()];
            row[gold] = 1;
            row
        });
    let n = maps.slot_classes.len();
    let mut slot = Vec::new();
    if let Some(tags) = &example.bio_tags {
        for tag in tags {
            let mut row = vec![0u8; n];
            if let Some(s) = strip_bio(tag)?.and_then(|class| maps.slot_classes.get(class)) {
                row[s] = 1;
            }
            slot.push(row);
        }
    }
    Ok(BinaryTargets { intent, slot })
}

/// Padded mini-batch. Row `b` describes example `indices[b]` of the source slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub max_len: usize,
    pub token_ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    /// Gold intent index or [`IGNORE`].
    pub intent_targets: Vec<usize>,
    /// Gold BIO index per position or [`IGNORE`] (padding and unseen tags).
    pub slot_targets: Vec<Vec<usize>>,
    /// `B × |I|`; all zero when the intent is unknown.
    pub intent_binary: Vec<Vec<u8>>,
    /// `B × L_max × |T|`; all zero at padding.
    pub slot_binary: Vec<Vec<Vec<u8>>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn length(&self, row: usize) -> usize {
        self.mask[row].iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchOrder {
    /// Source order.
    Sequential,
    /// Examples shuffled with the seed, then chunked.
    Shuffled { seed: u64 },
    /// Examples sorted by length and chunked; batch order shuffled with the seed.
    Bucketed { seed: u64 },
}

pub fn make_batches(
    examples: &[Example],
    vocab: &Vocab,
    maps: &LabelMaps,
    batch_size: usize,
    order: BatchOrder,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be positive".into()));
    }
    let mut indices: Vec<usize> = (0..examples.len()).collect();
    let chunks: Vec<Vec<usize>> = match order {
        BatchOrder::Sequential => indices.chunks(batch_size).map(<[usize]>::to_vec).collect(),
        BatchOrder::Shuffled { seed } => {
            indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            indices.chunks(batch_size).map(<[usize]>::to_vec).collect()
        }
        BatchOrder::Bucketed { seed } => {
            indices.sort_by_key(|&i| examples[i].tokens.len());
            let mut chunks: Vec<Vec<usize>> = indices.chunks(batch_size).map(<[usize]>::to_vec).collect();
            chunks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            chunks
        }
    };
    chunks
        .into_iter()
        .map(|chunk| collate(examples, &chunk, vocab, maps))
        .collect()
}

fn collate(examples: &[Example], rows: &[usize], vocab: &Vocab, maps: &LabelMaps) -> Result<Batch> {
    let max_len = rows.iter().map(|&i| examples[i].tokens.len()).max().unwrap_or(0);
    let n = maps.slot_classes.len();
    let m = maps.intents.len();
    let mut batch = Batch {
        indices: rows.to_vec(),
        max_len,
        token_ids: Vec::with_capacity(rows.len()),
        mask: Vec::with_capacity(rows.len()),
        intent_targets: Vec::with_capacity(rows.len()),
        slot_targets: Vec::with_capacity(rows.len()),
        intent_binary: Vec::with_capacity(rows.len()),
        slot_binary: Vec::with_capacity(rows.len()),
    };
    for &i in rows {
        let ex = &examples[i];
        let l = ex.tokens.len();
        let mut ids = vocab.encode(&ex.tokens);
        ids.resize(max_len, PAD);
        let mut mask = vec![true; l];
        mask.resize(max_len, false);

        let targets = build_binary_targets(ex, maps)?;
        let mut slot_targets = vec![IGNORE; max_len];
        if let Some(tags) = &ex.bio_tags {
            for (t, tag) in tags.iter().enumerate() {
                slot_targets[t] = maps.bio.get(tag).unwrap_or(IGNORE);
            }
        }
        let mut slot_bin = targets.slot;
        slot_bin.resize(max_len, vec![0; n]);

        batch.token_ids.push(ids);
        batch.mask.push(mask);
        batch
            .intent_targets
            .push(ex.intent.as_deref().and_then(|s| maps.intents.get(s)).unwrap_or(IGNORE));
        batch.slot_targets.push(slot_targets);
        batch.intent_binary.push(targets.intent.unwrap_or_else(|| vec![0; m]));
        batch.slot_binary.push(slot_bin);
    }
    Ok(batch)
}
