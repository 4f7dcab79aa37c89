use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

use super::Example;

/// Dense name ↔ index mapping.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = LabelSet::default();
        for name in names {
            let name = name.into();
            if set.index.contains_key(&name) {
                return Err(Error::Value(format!("duplicate label `{name}`")));
            }
            set.index.insert(name.clone(), set.names.len());
            set.names.push(name);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Serialize for LabelSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        LabelSet::new(names).map_err(serde::de::Error::custom)
    }
}

/// Splits a BIO tag into its slot class; `None` for `O`.
pub fn strip_bio(tag: &str) -> Result<Option<&str>> {
    if tag == "O" {
        return Ok(None);
    }
    match tag.split_once('-') {
        Some(("B" | "I", class)) if !class.is_empty() => Ok(Some(class)),
        _ => Err(Error::Value(format!("malformed BIO tag `{tag}`"))),
    }
}

/// Intent classes `I`, slot classes `T` and BIO labels `S` with the derived
/// map from each BIO label to its slot class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelMapsRepr", into = "LabelMapsRepr")]
pub struct LabelMaps {
    pub intents: LabelSet,
    pub slot_classes: LabelSet,
    pub bio: LabelSet,
    strip: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct LabelMapsRepr {
    intents: LabelSet,
    slot_classes: LabelSet,
    bio: LabelSet,
}

impl TryFrom<LabelMapsRepr> for LabelMaps {
    type Error = Error;

    fn try_from(r: LabelMapsRepr) -> Result<Self> {
        LabelMaps::new(r.intents, r.slot_classes, r.bio)
    }
}

impl From<LabelMaps> for LabelMapsRepr {
    fn from(m: LabelMaps) -> Self {
        LabelMapsRepr {
            intents: m.intents,
            slot_classes: m.slot_classes,
            bio: m.bio,
        }
    }
}

impl LabelMaps {
    /// Validates the BIO set against the slot classes. An empty BIO set means
    /// the task has no token labels.
    pub fn new(intents: LabelSet, slot_classes: LabelSet, bio: LabelSet) -> Result<Self> {
        if !bio.is_empty() && bio.get("O").is_none() {
            return Err(Error::Value("BIO label set lacks `O`".into()));
        }
        let mut strip = Vec::with_capacity(bio.len());
        for tag in bio.names() {
            strip.push(match strip_bio(tag)? {
                None => None,
                Some(class) => Some(
                    slot_classes
                        .get(class)
                        .ok_or_else(|| Error::Value(format!("tag `{tag}` names unknown slot class `{class}`")))?,
                ),
            });
        }
        Ok(LabelMaps {
            intents,
            slot_classes,
            bio,
            strip,
        })
    }

    /// Builds sorted label sets from the labels seen in `examples`.
    pub fn from_examples(examples: &[Example]) -> Result<Self> {
        let mut intents = BTreeSet::new();
        let mut classes = BTreeSet::new();
        let mut tags = BTreeSet::new();
        let mut any_tags = false;
        for ex in examples {
            if let Some(intent) = &ex.intent {
                intents.insert(intent.clone());
            }
            if let Some(bio) = &ex.bio_tags {
                any_tags = true;
                for tag in bio {
                    if let Some(class) = strip_bio(tag)? {
                        classes.insert(class.to_string());
                        tags.insert(tag.clone());
                    }
                }
            }
        }
        let bio = if any_tags {
            std::iter::once("O".to_string()).chain(tags).collect::<Vec<_>>()
        } else {
            Vec::new()
        };
        LabelMaps::new(LabelSet::new(intents)?, LabelSet::new(classes)?, LabelSet::new(bio)?)
    }

    /// Slot class of a BIO label index; `None` for `O`.
    pub fn strip(&self, bio_index: usize) -> Option<usize> {
        self.strip[bio_index]
    }
}
