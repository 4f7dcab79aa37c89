//! Intent auxiliary network and main intent classifier.
//!
//! For every intent class the utterance is re-encoded by a class-owned
//! self-attention; the utterance embedding then scores each token of that
//! class-specific representation, and the resulting attention weights are the
//! class's explanation. A binary classifier per class keeps each transform
//! tied to its class, and the binary logits are fused back into the utterance
//! embedding before the main classifier.

use xnlu_tensor::{Graph, ParamId, ParamStore, Real, Var};

use crate::corpus::IGNORE;
use crate::encoder::EncodedUtterance;
use crate::error::{Error, Result};
use crate::layers::{Initializer, LayerNorm, Linear, Projections};

/// Parameters of the intent auxiliary network, fusion, and classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentNetwork {
    d_model: usize,
    classes: Vec<Projections>,
    /// `m × d`, one row per class.
    binary_weight: ParamId,
    /// `1 × m`
    binary_bias: ParamId,
    fusion: Linear,
    fusion_norm: LayerNorm,
    fusion_out: Linear,
    classifier: Linear,
}

/// Every intermediate of one utterance's intent pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentTrace {
    /// Per class, `l × d` class-specific representation.
    pub transformed: Vec<Var>,
    /// Per class, `1 × l` token scores against the utterance embedding.
    pub scores: Vec<Var>,
    /// Per class, `1 × l` attention weights (the explanation).
    pub attention: Vec<Var>,
    /// Per class, `1 × d` context vector.
    pub contexts: Vec<Var>,
    /// `1 × m`
    pub binary_logits: Var,
    /// `1 × d` fused utterance embedding.
    pub fused_cls: Var,
    /// `1 × |I|`
    pub logits: Var,
}

impl IntentNetwork {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        d_model: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("intent network needs at least one class".into()));
        }
        let classes = (0..num_classes)
            .map(|i| Projections::register(store, init, &format!("intent.class{i}"), d_model, d_model))
            .collect::<Result<Vec<_>>>()?;
        Ok(IntentNetwork {
            d_model,
            classes,
            binary_weight: init.weight(store, "intent.binary.weight", &[num_classes, d_model])?,
            binary_bias: crate::layers::zeros(store, "intent.binary.bias", &[1, num_classes])?,
            fusion: Linear::register(store, init, "intent.fusion", num_classes, d_model)?,
            fusion_norm: LayerNorm::register(store, "intent.fusion_norm", d_model)?,
            fusion_out: Linear::register(store, init, "intent.fusion_out", d_model, d_model)?,
            classifier: Linear::register(store, init, "intent.classifier", d_model, num_classes)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn fusion(&self) -> &Linear {
        &self.fusion
    }

    /// Parameters owned by the per-class transforms and binary head.
    pub fn auxiliary_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.classes.iter().flat_map(|p| [p.query, p.key, p.value]).collect();
        ids.extend([self.binary_weight, self.binary_bias]);
        ids
    }

    pub fn binary_head_params(&self) -> [ParamId; 2] {
        [self.binary_weight, self.binary_bias]
    }

    /// `softmax(Q_i K_iᵀ / √d) V_i` over the encoded tokens.
    pub fn class_transform<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &EncodedUtterance,
        class: usize,
    ) -> Result<Var> {
        let proj = self
            .classes
            .get(class)
            .ok_or_else(|| Error::Usage(format!("intent class {class} out of range")))?;
        Ok(proj.attend(g, store, enc.tokens, enc.tokens, &enc.mask)?.1)
    }

    /// Scores each token row of `transformed` by its dot product with `cls`
    /// and normalizes over valid tokens. Returns `(scores, weights)`, both `1 × l`.
    pub fn query_attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        cls: Var,
        transformed: Var,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let column = g.matmul_nt(transformed, cls)?;
        let scores = g.transpose(column)?;
        let weights = g.softmax_rows(scores, Some(mask))?;
        Ok((scores, weights))
    }

    /// Attention-weighted sum of the transformed rows, divided by the utterance length.
    pub fn context<T: Real>(&self, g: &mut Graph<T>, weights: Var, transformed: Var, len: usize) -> Result<Var> {
        let pooled = g.matmul(weights, transformed)?;
        Ok(g.scale(pooled, T::one() / T::lit(len.max(1) as f64)))
    }

    /// `g_i = c_i · W_i + b_i` for every class, as a `1 × m` row.
    pub fn binary_logits<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, contexts: &[Var]) -> Result<Var> {
        if contexts.len() != self.classes.len() {
            return Err(Error::Usage(format!(
                "{} contexts for {} intent classes",
                contexts.len(),
                self.classes.len()
            )));
        }
        let stacked = g.concat_rows(contexts)?;
        let w = g.param(store, self.binary_weight);
        let b = g.param(store, self.binary_bias);
        let prod = g.mul(stacked, w)?;
        let column = g.row_sums(prod)?;
        let row = g.transpose(column)?;
        Ok(g.add_row(row, b)?)
    }

    /// `CLS^c = Linear(LayerNorm(cls + Linear(g^I)))` and the intent logits from it.
    pub fn fuse_and_classify<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        binary_logits: Var,
        cls: Var,
        dropout: f64,
    ) -> Result<(Var, Var)> {
        let out_c = self.fusion.forward(g, store, binary_logits)?;
        let out_c = g.dropout(out_c, dropout)?;
        let summed = g.add(cls, out_c)?;
        let normed = self.fusion_norm.forward(g, store, summed)?;
        let fused = self.fusion_out.forward(g, store, normed)?;
        let fused = g.dropout(fused, dropout)?;
        let logits = self.classifier.forward(g, store, fused)?;
        Ok((fused, logits))
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &EncodedUtterance,
        dropout: f64,
    ) -> Result<IntentTrace> {
        let m = self.classes.len();
        let len = enc.valid_len();
        let mut trace = IntentTrace {
            transformed: Vec::with_capacity(m),
            scores: Vec::with_capacity(m),
            attention: Vec::with_capacity(m),
            contexts: Vec::with_capacity(m),
            binary_logits: enc.cls,
            fused_cls: enc.cls,
            logits: enc.cls,
        };
        for class in 0..m {
            let u = self.class_transform(g, store, enc, class)?;
            let (scores, weights) = self.query_attention(g, enc.cls, u, &enc.mask)?;
            let c = self.context(g, weights, u, len)?;
            trace.transformed.push(u);
            trace.scores.push(scores);
            trace.attention.push(weights);
            trace.contexts.push(c);
        }
        trace.binary_logits = self.binary_logits(g, store, &trace.contexts)?;
        let (fused, logits) = self.fuse_and_classify(g, store, trace.binary_logits, enc.cls, dropout)?;
        trace.fused_cls = fused;
        trace.logits = logits;
        Ok(trace)
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }
}

/// `(L^X, L^intent)` for stacked `B × m` binary logits and `B × |I|` intent
/// logits. Rows whose gold is [`IGNORE`] are left out of both losses.
pub fn intent_losses<T: Real>(g: &mut Graph<T>, binary_logits: Var, logits: Var, gold: &[usize]) -> Result<(Var, Var)> {
    let m = g.value(binary_logits).cols();
    let mut targets = vec![T::zero(); gold.len() * m];
    let mut mask = vec![false; gold.len() * m];
    for (r, &y) in gold.iter().enumerate() {
        if y == IGNORE {
            continue;
        }
        if y >= m {
            return Err(Error::Tensor(xnlu_tensor::TensorError::Index {
                op: "intent_losses",
                index: y,
                bound: m,
            }));
        }
        targets[r * m + y] = T::one();
        mask[r * m..(r + 1) * m].fill(true);
    }
    let row_mask: Vec<bool> = gold.iter().map(|&y| y != IGNORE).collect();
    let binary = g.bce_with_logits(binary_logits, &targets, Some(&mask))?;
    let main = g.cross_entropy(logits, gold, Some(&row_mask))?;
    Ok((binary, main))
}
