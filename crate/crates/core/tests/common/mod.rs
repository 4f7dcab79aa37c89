#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

use xnlu_core::corpus::{make_batches, Batch, BatchOrder, Example, LabelMaps, LabelSet, Vocab};
use xnlu_core::model::ModelConfig;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn example(words: &str, tags: &str, intent: &str) -> Example {
    Example {
        tokens: words.split_whitespace().map(String::from).collect(),
        bio_tags: Some(tags.split_whitespace().map(String::from).collect()),
        intent: Some(intent.into()),
    }
}

/// Three intents, four slot classes, nine BIO tags.
pub fn toy_maps() -> LabelMaps {
    let classes = ["a", "b", "c", "d"];
    let mut tags = vec!["O".to_string()];
    for c in classes {
        tags.push(format!("B-{c}"));
        tags.push(format!("I-{c}"));
    }
    LabelMaps::new(
        LabelSet::new(["x", "y", "z"]).unwrap(),
        LabelSet::new(classes).unwrap(),
        LabelSet::new(tags).unwrap(),
    )
    .unwrap()
}

pub fn toy_examples() -> Vec<Example> {
    vec![
        example("p q r s t u", "B-a I-a O B-c B-d I-d", "y"),
        example("q s u p", "O B-b I-b O", "z"),
    ]
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 32,
        max_len: 8,
        head_dim: 8,
        init_std: 0.3,
    }
}

/// The two toy examples as one padded batch of length 6.
pub fn toy_batch() -> (Batch, Vocab, LabelMaps) {
    let examples = toy_examples();
    let maps = toy_maps();
    let vocab = Vocab::build(&examples, false);
    let batch = make_batches(&examples, &vocab, &maps, 2, BatchOrder::Sequential)
        .unwrap()
        .remove(0);
    (batch, vocab, maps)
}
