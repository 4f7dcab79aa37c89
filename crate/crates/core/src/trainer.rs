//! Weighted joint objective and the Adam training loop.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use xnlu_tensor::{Adam, AdamConfig, Graph, Real, Var};

use crate::corpus::{make_batches, BatchOrder, Example, LabelMaps, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{LossTerms, Model, ModelVariant, TaskKind};

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Main intent (or sentence) classifier.
    pub intent: f64,
    /// Per-intent-class binary classifiers.
    pub intent_binary: f64,
    /// Per-slot-class binary classifiers.
    pub slot_binary: f64,
    /// Main BIO classifier.
    pub slot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            intent: 1.0,
            intent_binary: 0.5,
            slot_binary: 0.5,
            slot: 1.0,
        }
    }
}

impl LossWeights {
    /// Zeroes the terms a task or variant does not have.
    pub fn effective(self, task: TaskKind, variant: ModelVariant) -> Self {
        let mut w = self;
        if !task.has_intent() {
            w.intent = 0.0;
            w.intent_binary = 0.0;
        }
        if !task.has_slot() {
            w.slot = 0.0;
            w.slot_binary = 0.0;
        }
        if variant == ModelVariant::Baseline {
            w.intent_binary = 0.0;
            w.slot_binary = 0.0;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("intent", self.intent),
            ("intent_binary", self.intent_binary),
            ("slot_binary", self.slot_binary),
            ("slot", self.slot),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and non-negative, got {v}")));
            }
        }
        if self.intent + self.slot <= 0.0 {
            return Err(Error::Config("at least one main loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Loss values of one batch (or means over an epoch).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub intent: f64,
    pub intent_binary: f64,
    pub slot_binary: f64,
    pub slot: f64,
    pub total: f64,
}

/// `λ·intent + β·intent_binary + γ·slot_binary + η·slot`. A non-finite
/// component is reported as divergence at `(epoch, batch)`.
pub fn joint_loss(
    components: [f64; 4],
    weights: &LossWeights,
    epoch: usize,
    batch: usize,
) -> Result<LossBundle> {
    let names = ["intent", "intent_binary", "slot_binary", "slot"];
    for (v, name) in components.iter().zip(names) {
        if !v.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch,
                component: name,
            });
        }
    }
    let [intent, intent_binary, slot_binary, slot] = components;
    Ok(LossBundle {
        intent,
        intent_binary,
        slot_binary,
        slot,
        total: weights.intent * intent
            + weights.intent_binary * intent_binary
            + weights.slot_binary * slot_binary
            + weights.slot * slot,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderKind {
    Sequential,
    #[default]
    Shuffled,
    Bucketed,
}

impl std::str::FromStr for OrderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(OrderKind::Sequential),
            "shuffled" => Ok(OrderKind::Shuffled),
            "bucketed" => Ok(OrderKind::Bucketed),
            other => Err(Error::Usage(format!(
                "unknown batch order '{other}' (expected sequential, shuffled or bucketed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    /// The default suits a pretrained encoder; from scratch, 3e-4 to 1e-3 works.
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub order: OrderKind,
    /// Evaluate on the validation split after every epoch.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            epochs: 30,
            batch_size: 32,
            learning_rate: 5e-5,
            dropout: 0.1,
            seed: 0,
            clip_norm: None,
            order: OrderKind::default(),
            validate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate_config(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    fn batch_order(&self, epoch: usize) -> BatchOrder {
        let seed = mix(self.seed, epoch as u64);
        match self.order {
            OrderKind::Sequential => BatchOrder::Sequential,
            OrderKind::Shuffled => BatchOrder::Shuffled { seed },
            OrderKind::Bucketed => BatchOrder::Bucketed { seed },
        }
    }
}

fn mix(a: u64, b: u64) -> u64 {
    (a ^ 0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ b.wrapping_mul(0x94D0_49BB_1331_11EB)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TrainEvent {
    Step {
        epoch: usize,
        batch: usize,
        step: u64,
        losses: LossBundle,
    },
    Epoch {
        epoch: usize,
        /// Mean over the epoch's batches.
        losses: LossBundle,
        valid: Option<EvalReport>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: u64,
    pub last_epoch: Option<LossBundle>,
}

/// Runs one optimizer step on `batch` and returns its losses.
fn step<T: Real>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    batch: &crate::corpus::Batch,
    config: &TrainConfig,
    weights: &LossWeights,
    epoch: usize,
    index: usize,
) -> Result<LossBundle> {
    let mut g = Graph::training(mix(config.seed, adam.steps() + 1));
    let (_, terms) = model.batch_losses(&mut g, batch, config.dropout)?;
    let value = |g: &Graph<T>, v: Option<Var>| v.map_or(0.0, |v| g.value(v).item().as_f64());
    let bundle = joint_loss(
        [
            value(&g, terms.intent),
            value(&g, terms.intent_binary),
            value(&g, terms.slot_binary),
            value(&g, terms.slot),
        ],
        weights,
        epoch,
        index,
    )?;
    let root = weighted_total(&mut g, &terms, weights)?;
    let grads = g.backward(root)?;
    model.store.zero_grad();
    grads.accumulate_into(&mut model.store)?;
    if let Some(c) = config.clip_norm {
        model.store.clip_grad_norm(T::lit(c));
    }
    if !model.store.grad_norm().is_finite() {
        return Err(Error::Divergence {
            epoch,
            batch: index,
            component: "gradient",
        });
    }
    adam.step(&mut model.store)?;
    Ok(bundle)
}

/// The weighted objective as a graph node; zero-weight terms are left out.
pub fn weighted_total<T: Real>(g: &mut Graph<T>, terms: &LossTerms, weights: &LossWeights) -> Result<Var> {
    let parts: Vec<(Var, T)> = [
        (terms.intent, weights.intent),
        (terms.intent_binary, weights.intent_binary),
        (terms.slot_binary, weights.slot_binary),
        (terms.slot, weights.slot),
    ]
    .into_iter()
    .filter_map(|(v, w)| v.filter(|_| w != 0.0).map(|v| (v, T::lit(w))))
    .collect();
    Ok(g.weighted_sum(&parts)?)
}

/// Trains `model` in place. `observer` sees every event with the current
/// model and may stop training early by returning `Break`.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train: &[Example],
    valid: &[Example],
    vocab: &Vocab,
    maps: &LabelMaps,
    config: &TrainConfig,
    mut observer: impl FnMut(&TrainEvent, &Model<T>) -> ControlFlow<()>,
) -> Result<TrainSummary> {
    config.validate_config()?;
    if train.is_empty() {
        return Err(Error::Usage("training split is empty".into()));
    }
    let spec = model.spec();
    let weights = config.weights.effective(spec.task, spec.variant);
    weights.validate()?;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut summary = TrainSummary {
        epochs: 0,
        steps: 0,
        last_epoch: None,
    };
    for epoch in 0..config.epochs {
        let batches = make_batches(train, vocab, maps, config.batch_size, config.batch_order(epoch))?;
        let mut sum = LossBundle::default();
        let mut stop = false;
        for (index, batch) in batches.iter().enumerate() {
            let losses = step(model, &mut adam, batch, config, &weights, epoch, index)?;
            sum.intent += losses.intent;
            sum.intent_binary += losses.intent_binary;
            sum.slot_binary += losses.slot_binary;
            sum.slot += losses.slot;
            sum.total += losses.total;
            summary.steps = adam.steps();
            let event = TrainEvent::Step {
                epoch,
                batch: index,
                step: adam.steps(),
                losses,
            };
            if observer(&event, model).is_break() {
                stop = true;
                break;
            }
        }
        let n = batches.len().max(1) as f64;
        let mean = LossBundle {
            intent: sum.intent / n,
            intent_binary: sum.intent_binary / n,
            slot_binary: sum.slot_binary / n,
            slot: sum.slot / n,
            total: sum.total / n,
        };
        summary.epochs = epoch + 1;
        summary.last_epoch = Some(mean);
        if stop {
            break;
        }
        let valid_report = if config.validate && !valid.is_empty() {
            Some(evaluate(model, valid, vocab, maps)?)
        } else {
            None
        };
        let event = TrainEvent::Epoch {
            epoch,
            losses: mean,
            valid: valid_report,
        };
        if observer(&event, model).is_break() {
            break;
        }
    }
    Ok(summary)
}
