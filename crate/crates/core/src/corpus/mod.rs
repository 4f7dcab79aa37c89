//! Dataset loading, label maps, vocabulary, batching and auxiliary targets.

mod batch;
mod labels;
mod loaders;
mod vocab;

use serde::{Deserialize, Serialize};

pub use batch::{build_binary_targets, make_batches, Batch, BatchOrder, BinaryTargets, IGNORE};
pub use labels::{strip_bio, LabelMaps, LabelSet};
pub use loaders::{load_conll, load_nlu_dataset, load_sst2_tsv, load_task_dataset, read_nlu_split, Split, Splits};
pub use vocab::{Vocab, CLS, PAD, UNK};

/// One pre-tokenized utterance with whatever gold labels its corpus provides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub bio_tags: Option<Vec<String>>,
    /// Intent class, or the sentence label for sentence classification.
    pub intent: Option<String>,
}

impl Example {
    pub fn from_text(text: &str) -> Self {
        Example {
            tokens: text.split_whitespace().map(String::from).collect(),
            bio_tags: None,
            intent: None,
        }
    }
}
