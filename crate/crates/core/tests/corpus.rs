//! Bundled fixture loading checked against independent line scans, and
//! batching properties over random corpora.

mod common;

use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;
use xnlu_core::corpus::{
    build_binary_targets, load_task_dataset, make_batches, strip_bio, BatchOrder, Example, LabelMaps, Vocab, IGNORE, UNK,
};
use xnlu_core::model::TaskKind;

use common::*;

fn non_empty_lines(path: &std::path::Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}

/// Sentences in a CoNLL file: maximal runs of non-blank rows, minus document markers.
fn conll_sentences(path: &std::path::Path) -> usize {
    let text = fs::read_to_string(path).unwrap();
    let mut count = 0;
    let mut in_block = false;
    for line in text.lines() {
        let blank = line.trim().is_empty() || line.starts_with("-DOCSTART-");
        if !blank && !in_block {
            count += 1;
        }
        in_block = !blank;
    }
    count
}

#[test]
fn nlu_fixture_counts_match_line_scan() {
    for name in ["snips_tiny", "snips_synth"] {
        let dir = fixtures().join(name);
        let (splits, maps) = load_task_dataset(TaskKind::JointNlu, &dir).unwrap();
        for (split, examples) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
            assert_eq!(examples.len(), non_empty_lines(&dir.join(split).join("label")), "{name}/{split}");
        }
        let labels: std::collections::BTreeSet<String> = fs::read_to_string(dir.join("train/label"))
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        assert_eq!(maps.intents.len(), labels.len());
    }
}

#[test]
fn conll_and_sst2_fixture_counts_match_line_scan() {
    let dir = fixtures().join("conll_tiny");
    let (splits, maps) = load_task_dataset(TaskKind::TokenClassification, &dir).unwrap();
    assert_eq!(splits.train.len(), conll_sentences(&dir.join("train.txt")));
    assert_eq!(splits.valid.len(), conll_sentences(&dir.join("valid.txt")));
    assert_eq!(splits.test.len(), conll_sentences(&dir.join("test.txt")));
    assert_eq!(maps.slot_classes.names(), ["LOC", "MISC", "ORG", "PER"]);
    assert!(maps.intents.is_empty());
    let rows: usize = splits.train.iter().map(|e| e.tokens.len()).sum();
    let text = fs::read_to_string(dir.join("train.txt")).unwrap();
    let scanned = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with("-DOCSTART-"))
        .count();
    assert_eq!(rows, scanned);

    let dir = fixtures().join("sst2_tiny");
    let (splits, maps) = load_task_dataset(TaskKind::SentenceClassification, &dir).unwrap();
    assert_eq!(splits.train.len(), non_empty_lines(&dir.join("train.tsv")) - 1);
    assert_eq!(splits.valid.len(), non_empty_lines(&dir.join("dev.tsv")) - 1);
    assert_eq!(splits.test.len(), non_empty_lines(&dir.join("test.tsv")) - 1);
    assert_eq!(maps.intents.names(), ["0", "1"]);
    assert!(splits.train.iter().all(|e| e.bio_tags.is_none()));
}

#[test]
fn binary_targets_match_tag_scan_on_fixture() {
    let (splits, maps) = load_task_dataset(TaskKind::JointNlu, &fixtures().join("snips_synth")).unwrap();
    for ex in &splits.train {
        let t = build_binary_targets(ex, &maps).unwrap();
        let tags = ex.bio_tags.as_ref().unwrap();
        let positives: usize = t.slot.iter().flatten().map(|&b| b as usize).sum();
        assert_eq!(positives, tags.iter().filter(|t| *t != "O").count());
        for (row, tag) in t.slot.iter().zip(tags) {
            match strip_bio(tag).unwrap() {
                None => assert!(row.iter().all(|&b| b == 0)),
                Some(c) => assert_eq!(row[maps.slot_classes.get(c).unwrap()], 1),
            }
        }
        let intent = t.intent.unwrap();
        assert_eq!(intent.iter().map(|&b| b as usize).sum::<usize>(), 1);
        assert_eq!(intent[maps.intents.get(ex.intent.as_deref().unwrap()).unwrap()], 1);
    }
}

const CLASSES: [&str; 3] = ["a", "b", "c"];

fn random_example() -> impl Strategy<Value = Example> {
    let token = prop::sample::select(vec!["p", "q", "r", "s", "t"]);
    let tag = (0usize..7).prop_map(|i| match i {
        0 => "O".to_string(),
        i => format!("{}-{}", if i % 2 == 1 { "B" } else { "I" }, CLASSES[(i - 1) / 2]),
    });
    (prop::collection::vec((token, tag), 1..9), prop::sample::select(vec!["x", "y"])).prop_map(|(rows, intent)| Example {
        tokens: rows.iter().map(|(t, _)| t.to_string()).collect(),
        bio_tags: Some(rows.into_iter().map(|(_, g)| g).collect()),
        intent: Some(intent.into()),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batching_covers_every_example_once(
        examples in prop::collection::vec(random_example(), 1..20),
        batch_size in 1usize..7,
        seed in 0u64..1000,
        order in 0usize..3,
    ) {
        let maps = LabelMaps::from_examples(&examples).unwrap();
        let vocab = Vocab::build(&examples, false);
        let order = [BatchOrder::Sequential, BatchOrder::Shuffled { seed }, BatchOrder::Bucketed { seed }][order];
        let batches = make_batches(&examples, &vocab, &maps, batch_size, order).unwrap();
        let mut seen = BTreeMap::new();
        for b in &batches {
            prop_assert!(b.len() <= batch_size);
            for row in 0..b.len() {
                let ex = &examples[b.indices[row]];
                *seen.entry(b.indices[row]).or_insert(0) += 1;
                let l = ex.tokens.len();
                prop_assert_eq!(b.length(row), l);
                prop_assert_eq!(b.mask[row].iter().filter(|&&m| m).count(), l);
                prop_assert!(b.token_ids[row][..l].iter().all(|&id| id != UNK && id < vocab.len()));
                for t in l..b.max_len {
                    prop_assert_eq!(b.slot_targets[row][t], IGNORE);
                    prop_assert!(b.slot_binary[row][t].iter().all(|&v| v == 0));
                }
                let tags = ex.bio_tags.as_ref().unwrap();
                for t in 0..l {
                    prop_assert_eq!(maps.bio.name(b.slot_targets[row][t]), tags[t].as_str());
                }
            }
        }
        prop_assert_eq!(seen.len(), examples.len());
        prop_assert!(seen.values().all(|&c| c == 1));
    }

    #[test]
    fn begin_and_inside_strip_to_the_same_class(class in "[A-Za-z_.]{1,12}") {
        let b = format!("B-{class}");
        let i = format!("I-{class}");
        prop_assert_eq!(strip_bio(&b).unwrap(), Some(class.as_str()));
        prop_assert_eq!(strip_bio(&i).unwrap(), Some(class.as_str()));
    }
}
