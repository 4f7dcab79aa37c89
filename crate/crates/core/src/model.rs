//! Model assembly for the three task kinds and the plain-head baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use xnlu_tensor::{Graph, ParamStore, Real, Var};

use crate::corpus::{Batch, LabelMaps};
use crate::encoder::{EncodedUtterance, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::intent::{intent_losses, IntentNetwork, IntentTrace};
use crate::layers::{Initializer, Linear};
use crate::slot::{slot_losses, SlotNetwork, SlotTrace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    #[default]
    JointNlu,
    SentenceClassification,
    TokenClassification,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::JointNlu,
        TaskKind::SentenceClassification,
        TaskKind::TokenClassification,
    ];

    pub fn has_intent(self) -> bool {
        !matches!(self, TaskKind::TokenClassification)
    }

    pub fn has_slot(self) -> bool {
        !matches!(self, TaskKind::SentenceClassification)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::JointNlu => "joint-nlu",
            TaskKind::SentenceClassification => "sentence-classification",
            TaskKind::TokenClassification => "token-classification",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint-nlu" | "joint" | "nlu" => Ok(TaskKind::JointNlu),
            "sentence-classification" | "sentiment" => Ok(TaskKind::SentenceClassification),
            "token-classification" | "ner" => Ok(TaskKind::TokenClassification),
            other => Err(Error::Usage(format!(
                "unknown task '{other}' (expected joint-nlu, sentence-classification or token-classification)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Encoder with the class-specific auxiliary networks.
    #[default]
    Explainable,
    /// Same encoder with plain linear heads only.
    Baseline,
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explainable" => Ok(ModelVariant::Explainable),
            "baseline" => Ok(ModelVariant::Baseline),
            other => Err(Error::Usage(format!("unknown variant '{other}' (expected explainable or baseline)"))),
        }
    }
}

/// Architecture hyperparameters independent of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    /// Projection width of the per-slot-class attentions.
    pub head_dim: usize,
    /// Standard deviation of the normal weight init. Training from scratch
    /// needs more than the usual 0.02: the per-class attentions start out
    /// uniform and their binary heads barely move.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 512,
            max_len: 128,
            head_dim: 32,
            init_std: 0.05,
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub task: TaskKind,
    pub variant: ModelVariant,
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub num_intents: usize,
    pub num_slot_classes: usize,
    pub num_tags: usize,
}

impl ModelSpec {
    pub fn new(task: TaskKind, variant: ModelVariant, config: ModelConfig, vocab_size: usize, maps: &LabelMaps) -> Result<Self> {
        let (m, n, s) = (maps.intents.len(), maps.slot_classes.len(), maps.bio.len());
        match task {
            TaskKind::JointNlu if m == 0 || n == 0 => {
                return Err(Error::Config(format!(
                    "joint-nlu needs intents and slot classes, found {m} intents and {n} slot classes"
                )))
            }
            TaskKind::SentenceClassification if m == 0 || s > 0 => {
                return Err(Error::Config(format!(
                    "sentence-classification needs sentence labels and no tags, found {m} labels and {s} tags"
                )))
            }
            TaskKind::TokenClassification if n == 0 || m > 0 => {
                return Err(Error::Config(format!(
                    "token-classification needs slot classes and no intents, found {n} slot classes and {m} intents"
                )))
            }
            _ => {}
        }
        Ok(ModelSpec {
            task,
            variant,
            config,
            vocab_size,
            num_intents: if task.has_intent() { m } else { 0 },
            num_slot_classes: if task.has_slot() { n } else { 0 },
            num_tags: if task.has_slot() { s } else { 0 },
        })
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            d_model: self.config.d_model,
            n_layers: self.config.n_layers,
            n_heads: self.config.n_heads,
            ffn_dim: self.config.ffn_dim,
            max_len: self.config.max_len,
        }
    }
}

// One per model; boxing would buy nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Eq)]
enum Heads {
    Explainable {
        intent: Option<IntentNetwork>,
        slot: Option<SlotNetwork>,
    },
    Baseline {
        intent: Option<Linear>,
        slot: Option<Linear>,
    },
}

/// Parameters plus the layout that interprets them.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    spec: ModelSpec,
    pub store: ParamStore<T>,
    encoder: Encoder,
    heads: Heads,
}

/// One utterance's forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub encoded: EncodedUtterance,
    pub intent: Option<IntentTrace>,
    pub slot: Option<SlotTrace>,
    /// `1 × |I|`
    pub intent_logits: Option<Var>,
    /// `l × |S|`
    pub slot_logits: Option<Var>,
}

/// Loss terms for one batch; absent terms do not exist for the task or variant.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub intent: Option<Var>,
    pub intent_binary: Option<Var>,
    pub slot_binary: Option<Var>,
    pub slot: Option<Var>,
}

/// Scalar counts grouped by role.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub encoder: usize,
    pub intent: usize,
    pub slot: usize,
    pub total: usize,
}

/// Explainable model for `task`. The encoder is always registered first from
/// the seed, so a baseline built from the same seed shares its initialization.
pub fn build_model<T: Real>(task: TaskKind, maps: &LabelMaps, config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Model<T>> {
    Model::new(ModelSpec::new(task, ModelVariant::Explainable, config, vocab_size, maps)?, seed)
}

pub fn baseline_model<T: Real>(
    task: TaskKind,
    maps: &LabelMaps,
    config: ModelConfig,
    vocab_size: usize,
    seed: u64,
) -> Result<Model<T>> {
    Model::new(ModelSpec::new(task, ModelVariant::Baseline, config, vocab_size, maps)?, seed)
}

impl<T: Real> Model<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        if !(spec.config.init_std.is_finite() && spec.config.init_std > 0.0) {
            return Err(Error::Config(format!("init_std must be positive, got {}", spec.config.init_std)));
        }
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed, spec.config.init_std);
        let encoder = Encoder::register(spec.encoder_config(), &mut store, &mut init)?;
        let d = spec.config.d_model;
        let heads = match spec.variant {
            ModelVariant::Explainable => {
                let intent = if spec.task.has_intent() {
                    Some(IntentNetwork::register(&mut store, &mut init, d, spec.num_intents)?)
                } else {
                    None
                };
                let slot = if spec.task.has_slot() {
                    Some(SlotNetwork::register(
                        &mut store,
                        &mut init,
                        d,
                        spec.config.head_dim,
                        spec.num_intents,
                        spec.num_slot_classes,
                        spec.num_tags,
                    )?)
                } else {
                    None
                };
                Heads::Explainable { intent, slot }
            }
            ModelVariant::Baseline => {
                let intent = if spec.task.has_intent() {
                    Some(Linear::register(&mut store, &mut init, "intent.classifier", d, spec.num_intents)?)
                } else {
                    None
                };
                let slot = if spec.task.has_slot() {
                    Some(Linear::register(&mut store, &mut init, "slot.classifier", d, spec.num_tags)?)
                } else {
                    None
                };
                Heads::Baseline { intent, slot }
            }
        };
        Ok(Model {
            spec,
            store,
            encoder,
            heads,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn intent_network(&self) -> Option<&IntentNetwork> {
        match &self.heads {
            Heads::Explainable { intent, .. } => intent.as_ref(),
            Heads::Baseline { .. } => None,
        }
    }

    pub fn slot_network(&self) -> Option<&SlotNetwork> {
        match &self.heads {
            Heads::Explainable { slot, .. } => slot.as_ref(),
            Heads::Baseline { .. } => None,
        }
    }

    /// Same layout at another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
        }
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for p in self.store.iter() {
            let n = p.value.numel();
            c.total += n;
            if p.name.starts_with("encoder.") {
                c.encoder += n;
            } else if p.name.starts_with("intent.") {
                c.intent += n;
            } else if p.name.starts_with("slot.") {
                c.slot += n;
            }
        }
        c
    }

    /// Forward pass over one utterance of token ids, padded where `mask` is false.
    pub fn forward(&self, g: &mut Graph<T>, token_ids: &[usize], mask: &[bool], dropout: f64) -> Result<Forward> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::Usage("utterance has no tokens".into()));
        }
        let enc = self.encoder.encode(g, &self.store, token_ids, mask, dropout)?;
        let mut out = Forward {
            encoded: enc,
            intent: None,
            slot: None,
            intent_logits: None,
            slot_logits: None,
        };
        match &self.heads {
            Heads::Explainable { intent, slot } => {
                if let Some(net) = intent {
                    let trace = net.forward(g, &self.store, &out.encoded, dropout)?;
                    out.intent_logits = Some(trace.logits);
                    out.intent = Some(trace);
                }
                if let Some(net) = slot {
                    let trace = net.forward(g, &self.store, &out.encoded, out.intent_logits, dropout)?;
                    out.slot_logits = Some(trace.logits);
                    out.slot = Some(trace);
                }
            }
            Heads::Baseline { intent, slot } => {
                if let Some(head) = intent {
                    let cls = g.dropout(out.encoded.cls, dropout)?;
                    out.intent_logits = Some(head.forward(g, &self.store, cls)?);
                }
                if let Some(head) = slot {
                    let tokens = g.dropout(out.encoded.tokens, dropout)?;
                    out.slot_logits = Some(head.forward(g, &self.store, tokens)?);
                }
            }
        }
        Ok(out)
    }

    /// Forward every row of `batch` and build the stacked loss terms.
    pub fn batch_losses(&self, g: &mut Graph<T>, batch: &Batch, dropout: f64) -> Result<(Vec<Forward>, LossTerms)> {
        let mut forwards = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            forwards.push(self.forward(g, &batch.token_ids[b], &batch.mask[b], dropout)?);
        }
        let mut terms = LossTerms::default();
        if self.spec.task.has_intent() {
            let logits: Vec<Var> = forwards.iter().filter_map(|f| f.intent_logits).collect();
            let logits = g.concat_rows(&logits)?;
            match forwards[0].intent.as_ref() {
                Some(_) => {
                    let binary: Vec<Var> = forwards.iter().filter_map(|f| f.intent.as_ref().map(|t| t.binary_logits)).collect();
                    let binary = g.concat_rows(&binary)?;
                    let (lx, li) = intent_losses(g, binary, logits, &batch.intent_targets)?;
                    terms.intent_binary = Some(lx);
                    terms.intent = Some(li);
                }
                None => {
                    let row_mask: Vec<bool> = batch.intent_targets.iter().map(|&y| y != crate::corpus::IGNORE).collect();
                    terms.intent = Some(g.cross_entropy(logits, &batch.intent_targets, Some(&row_mask))?);
                }
            }
        }
        if self.spec.task.has_slot() {
            let logits: Vec<Var> = forwards.iter().filter_map(|f| f.slot_logits).collect();
            let logits = g.concat_rows(&logits)?;
            let gold: Vec<usize> = batch.slot_targets.iter().flatten().copied().collect();
            let mask: Vec<bool> = batch.mask.iter().flatten().copied().collect();
            match forwards[0].slot.as_ref() {
                Some(_) => {
                    let binary: Vec<Var> = forwards.iter().filter_map(|f| f.slot.as_ref().map(|t| t.binary_logits)).collect();
                    let binary = g.concat_rows(&binary)?;
                    let targets: Vec<u8> = batch.slot_binary.iter().flatten().flatten().copied().collect();
                    let (ly, ls) = slot_losses(g, binary, logits, &gold, &targets, &mask)?;
                    terms.slot_binary = Some(ly);
                    terms.slot = Some(ls);
                }
                None => {
                    let tag_mask: Vec<bool> = mask
                        .iter()
                        .zip(&gold)
                        .map(|(&m, &y)| m && y != crate::corpus::IGNORE)
                        .collect();
                    terms.slot = Some(g.cross_entropy(logits, &gold, Some(&tag_mask))?);
                }
            }
        }
        Ok((forwards, terms))
    }

    /// Argmax predictions for one unpadded utterance.
    pub fn predict(&self, token_ids: &[usize]) -> Result<Prediction> {
        let mut g = Graph::inference();
        let fwd = self.forward(&mut g, token_ids, &vec![true; token_ids.len()], 0.0)?;
        Ok(Prediction {
            intent: fwd.intent_logits.map(|v| argmax(g.value(v).row(0))),
            tags: fwd
                .slot_logits
                .map(|v| (0..token_ids.len()).map(|r| argmax(g.value(v).row(r))).collect()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub intent: Option<usize>,
    pub tags: Option<Vec<usize>>,
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelSet;

    fn joint_maps() -> LabelMaps {
        LabelMaps::new(
            LabelSet::new(["a", "b"]).unwrap(),
            LabelSet::new(["loc"]).unwrap(),
            LabelSet::new(["O", "B-loc", "I-loc"]).unwrap(),
        )
        .unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 8,
            max_len: 8,
            head_dim: 4,
            init_std: 0.1,
        }
    }

    #[test]
    fn task_names_round_trip() {
        for t in TaskKind::ALL {
            assert_eq!(t.as_str().parse::<TaskKind>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{t}\""));
        }
        assert!("pos-tagging".parse::<TaskKind>().is_err());
    }

    #[test]
    fn inconsistent_maps_are_config_errors() {
        let maps = joint_maps();
        assert!(matches!(
            build_model::<f32>(TaskKind::SentenceClassification, &maps, small(), 10, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_model::<f32>(TaskKind::TokenClassification, &maps, small(), 10, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn baseline_shares_encoder_initialization() {
        let maps = joint_maps();
        let full = build_model::<f32>(TaskKind::JointNlu, &maps, small(), 10, 3).unwrap();
        let base = baseline_model::<f32>(TaskKind::JointNlu, &maps, small(), 10, 3).unwrap();
        for p in base.store.iter().filter(|p| p.name.starts_with("encoder.")) {
            let id = full.store.id(&p.name).unwrap();
            assert_eq!(full.store.value(id), &p.value);
        }
        assert!(base.census().total < full.census().total);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
    }
}
