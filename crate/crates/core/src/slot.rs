//! Slot auxiliary network and main slot classifier.
//!
//! The utterance (optionally conditioned on the intent logits) passes through a
//! shared self-attention block, then one self-attention per slot class whose
//! `l × l` weights are that class's explanation. Per-token binary classifiers
//! tie each transform to its class; their logits are fused back into the
//! utterance by cross-attention before the BIO classifier.

use xnlu_tensor::{Graph, ParamId, ParamStore, Real, TensorError, Var};

use crate::corpus::IGNORE;
use crate::encoder::EncodedUtterance;
use crate::error::{Error, Result};
use crate::layers::{Initializer, LayerNorm, Linear, Projections};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotNetwork {
    d_model: usize,
    head_dim: usize,
    num_intents: usize,
    input: Linear,
    input_attention: Projections,
    input_norm: LayerNorm,
    input_out: Linear,
    classes: Vec<Projections>,
    /// `n × d_h`, one row per class.
    binary_weight: ParamId,
    /// `1 × n`
    binary_bias: ParamId,
    fusion: Linear,
    cross_attention: Projections,
    fusion_norm: LayerNorm,
    fusion_out: Linear,
    classifier: Linear,
}

/// Every intermediate of one utterance's slot pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTrace {
    /// `l × d` input to the per-class transforms.
    pub shared: Var,
    /// Per class, `l × l` attention matrix (the explanation).
    pub attention: Vec<Var>,
    /// Per class, `l × d_h`.
    pub features: Vec<Var>,
    /// `l × n`, column `s` holds class `s`'s per-token logits.
    pub binary_logits: Var,
    /// `l × d`
    pub fused: Var,
    /// `l × |S|`
    pub logits: Var,
}

impl SlotNetwork {
    /// `num_intents == 0` builds the variant with no intent-logit injection.
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        d_model: usize,
        head_dim: usize,
        num_intents: usize,
        num_classes: usize,
        num_tags: usize,
    ) -> Result<Self> {
        if num_classes == 0 || num_tags == 0 || head_dim == 0 {
            return Err(Error::Config("slot network needs classes, tags and a positive head dimension".into()));
        }
        let d = d_model;
        let classes = (0..num_classes)
            .map(|s| Projections::register(store, init, &format!("slot.class{s}"), d, head_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(SlotNetwork {
            d_model,
            head_dim,
            num_intents,
            input: Linear::register(store, init, "slot.input", d + num_intents, d)?,
            input_attention: Projections::register(store, init, "slot.input_attn", d, d)?,
            input_norm: LayerNorm::register(store, "slot.input_norm", d)?,
            input_out: Linear::register(store, init, "slot.input_out", d, d)?,
            classes,
            binary_weight: init.weight(store, "slot.binary.weight", &[num_classes, head_dim])?,
            binary_bias: crate::layers::zeros(store, "slot.binary.bias", &[1, num_classes])?,
            fusion: Linear::register(store, init, "slot.fusion", num_classes, d)?,
            cross_attention: Projections::register(store, init, "slot.cross_attn", d, d)?,
            fusion_norm: LayerNorm::register(store, "slot.fusion_norm", d)?,
            fusion_out: Linear::register(store, init, "slot.fusion_out", d, d)?,
            classifier: Linear::register(store, init, "slot.classifier", d, num_tags)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn takes_intent(&self) -> bool {
        self.num_intents > 0
    }

    pub fn fusion(&self) -> &Linear {
        &self.fusion
    }

    pub fn input(&self) -> &Linear {
        &self.input
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

    /// Broadcasts `intent_logits` (`1 × |I|`) onto every token, then
    /// linear → self-attention → residual → layer norm → linear.
    pub fn input_fusion<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &EncodedUtterance,
        intent_logits: Option<Var>,
    ) -> Result<Var> {
        let x = match (intent_logits, self.takes_intent()) {
            (Some(logits), true) => {
                let spread = g.repeat_rows(logits, enc.len())?;
                g.concat_cols(&[enc.tokens, spread])?
            }
            (None, false) => enc.tokens,
            (Some(_), false) => return Err(Error::Usage("slot network built without intent injection".into())),
            (None, true) => return Err(Error::Usage("slot network expects intent logits".into())),
        };
        let projected = self.input.forward(g, store, x)?;
        let (_, attended) = self.input_attention.attend(g, store, projected, projected, &enc.mask)?;
        let res = g.add(projected, attended)?;
        let normed = self.input_norm.forward(g, store, res)?;
        self.input_out.forward(g, store, normed)
    }

    /// `(α_s, h_s)` with `α_s = softmax(Q_s K_sᵀ / √d_h)` (`l × l`) and `h_s = α_s V_s`.
    pub fn class_transform<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        shared: Var,
        mask: &[bool],
        class: usize,
    ) -> Result<(Var, Var)> {
        let proj = self
            .classes
            .get(class)
            .ok_or_else(|| Error::Usage(format!("slot class {class} out of range")))?;
        proj.attend(g, store, shared, shared, mask)
    }

    /// Per-token logits of every class, `l × n`.
    pub fn binary_logits<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, features: &[Var]) -> Result<Var> {
        if features.len() != self.classes.len() {
            return Err(Error::Usage(format!(
                "{} feature maps for {} slot classes",
                features.len(),
                self.classes.len()
            )));
        }
        let w = g.param(store, self.binary_weight);
        let b = g.param(store, self.binary_bias);
        let mut columns = Vec::with_capacity(features.len());
        for (s, &h) in features.iter().enumerate() {
            let w_s = g.slice_rows(w, s, 1)?;
            columns.push(g.matmul_nt(h, w_s)?);
        }
        let stacked = if columns.len() == 1 { columns[0] } else { g.concat_cols(&columns)? };
        Ok(g.add_row(stacked, b)?)
    }

    /// Cross-attention with queries from the projected binary logits and
    /// keys/values from the encoded utterance; residual on the query stream.
    pub fn feature_fusion<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        binary_logits: Var,
        enc: &EncodedUtterance,
        dropout: f64,
    ) -> Result<Var> {
        let stream = self.fusion.forward(g, store, binary_logits)?;
        let stream = g.dropout(stream, dropout)?;
        let (_, attended) = self.cross_attention.attend(g, store, stream, enc.tokens, &enc.mask)?;
        let res = g.add(stream, attended)?;
        let normed = self.fusion_norm.forward(g, store, res)?;
        let fused = self.fusion_out.forward(g, store, normed)?;
        Ok(g.dropout(fused, dropout)?)
    }

    pub fn classify<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, fused: Var) -> Result<Var> {
        self.classifier.forward(g, store, fused)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        enc: &EncodedUtterance,
        intent_logits: Option<Var>,
        dropout: f64,
    ) -> Result<SlotTrace> {
        let shared = self.input_fusion(g, store, enc, intent_logits)?;
        let n = self.classes.len();
        let mut attention = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n);
        for s in 0..n {
            let (alpha, h) = self.class_transform(g, store, shared, &enc.mask, s)?;
            attention.push(alpha);
            features.push(h);
        }
        let binary_logits = self.binary_logits(g, store, &features)?;
        let fused = self.feature_fusion(g, store, binary_logits, enc, dropout)?;
        let logits = self.classify(g, store, fused)?;
        Ok(SlotTrace {
            shared,
            attention,
            features,
            binary_logits,
            fused,
            logits,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }
}

/// `(L^Y, L^slot)` over stacked rows: `binary_logits` is `R × n`, `logits` is
/// `R × |S|`, and `mask[r]` marks real tokens. Padding rows must carry the
/// [`IGNORE`] tag and all-zero binary targets.
pub fn slot_losses<T: Real>(
    g: &mut Graph<T>,
    binary_logits: Var,
    logits: Var,
    gold: &[usize],
    binary_targets: &[u8],
    mask: &[bool],
) -> Result<(Var, Var)> {
    let rows = mask.len();
    let n = g.value(binary_logits).cols();
    if gold.len() != rows || binary_targets.len() != rows * n || g.value(logits).rows() != rows {
        return Err(Error::Usage(format!(
            "slot loss inputs disagree: {rows} mask rows, {} tags, {} binary targets for {n} classes",
            gold.len(),
            binary_targets.len()
        )));
    }
    for (r, &valid) in mask.iter().enumerate() {
        if !valid && (gold[r] != IGNORE || binary_targets[r * n..(r + 1) * n].iter().any(|&b| b != 0)) {
            return Err(Error::Usage(format!("padding row {r} carries slot targets")));
        }
    }
    if let Some(&bad) = binary_targets.iter().find(|&&b| b > 1) {
        return Err(Error::Tensor(TensorError::Value {
            op: "slot_losses",
            msg: format!("binary target {bad}"),
        }));
    }
    let targets: Vec<T> = binary_targets.iter().map(|&b| T::lit(b as f64)).collect();
    let element_mask: Vec<bool> = mask.iter().flat_map(|&m| std::iter::repeat_n(m, n)).collect();
    let tag_mask: Vec<bool> = mask.iter().zip(gold).map(|(&m, &y)| m && y != IGNORE).collect();
    let binary = g.bce_with_logits(binary_logits, &targets, Some(&element_mask))?;
    let main = g.cross_entropy(logits, gold, Some(&tag_mask))?;
    Ok((binary, main))
}
