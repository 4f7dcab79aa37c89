//! Small trainable transformer encoder producing per-token states and an
//! utterance embedding from a reserved leading `<cls>` position.

use serde::{Deserialize, Serialize};
use xnlu_tensor::{Graph, ParamId, ParamStore, Real, Var};

use crate::corpus::CLS;
use crate::error::{Error, Result};
use crate::layers::{scaled_attention, Initializer, LayerNorm, Linear};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Longest sequence including the `<cls>` position.
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= CLS {
            return Err(Error::Config("vocabulary lacks reserved tokens".into()));
        }
        if self.max_len < 2 || self.ffn_dim == 0 {
            return Err(Error::Config("max_len must be at least 2 and ffn_dim positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EncoderLayer {
    query: Linear,
    /// Bias-free: a key bias shifts each score row by a constant, which the softmax cancels.
    key: ParamId,
    value: Linear,
    output: Linear,
    attn_norm: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
    ffn_norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    config: EncoderConfig,
    token_embedding: ParamId,
    position_embedding: ParamId,
    layers: Vec<EncoderLayer>,
}

/// Encoder output for one (possibly padded) utterance of `l` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedUtterance {
    /// `l × d` token states.
    pub tokens: Var,
    /// `1 × d` utterance embedding.
    pub cls: Var,
    /// Valid-token flags, length `l`.
    pub mask: Vec<bool>,
}

impl EncodedUtterance {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

impl Encoder {
    pub fn register<T: Real>(config: EncoderConfig, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let token_embedding = init.weight(store, "encoder.token_embedding", &[config.vocab_size, d])?;
        let position_embedding = init.weight(store, "encoder.position_embedding", &[config.max_len, d])?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = format!("encoder.layer{i}");
            layers.push(EncoderLayer {
                query: Linear::register(store, init, &format!("{p}.attn.query"), d, d)?,
                key: init.weight(store, &format!("{p}.attn.key.weight"), &[d, d])?,
                value: Linear::register(store, init, &format!("{p}.attn.value"), d, d)?,
                output: Linear::register(store, init, &format!("{p}.attn.output"), d, d)?,
                attn_norm: LayerNorm::register(store, &format!("{p}.attn_norm"), d)?,
                ffn_in: Linear::register(store, init, &format!("{p}.ffn.in"), d, config.ffn_dim)?,
                ffn_out: Linear::register(store, init, &format!("{p}.ffn.out"), config.ffn_dim, d)?,
                ffn_norm: LayerNorm::register(store, &format!("{p}.ffn_norm"), d)?,
            });
        }
        Ok(Encoder {
            config,
            token_embedding,
            position_embedding,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Encodes `token_ids` (padding allowed where `mask` is false). Padded
    /// positions are never attended to, so valid rows do not depend on padding.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        token_ids: &[usize],
        mask: &[bool],
        dropout: f64,
    ) -> Result<EncodedUtterance> {
        if token_ids.len() != mask.len() {
            return Err(Error::Usage(format!(
                "{} token ids with {} mask flags",
                token_ids.len(),
                mask.len()
            )));
        }
        let positions = token_ids.len() + 1;
        if positions > self.config.max_len {
            return Err(Error::Length {
                len: positions,
                max_len: self.config.max_len,
            });
        }
        if let Some(&bad) = token_ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::Value(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let ids: Vec<usize> = std::iter::once(CLS).chain(token_ids.iter().copied()).collect();
        let key_mask: Vec<bool> = std::iter::once(true).chain(mask.iter().copied()).collect();
        let pos_ids: Vec<usize> = (0..positions).collect();

        let tok_table = g.param(store, self.token_embedding);
        let pos_table = g.param(store, self.position_embedding);
        let tok = g.gather_rows(tok_table, &ids)?;
        let pos = g.gather_rows(pos_table, &pos_ids)?;
        let mut x = g.add(tok, pos)?;
        x = g.dropout(x, dropout)?;

        let d = self.config.d_model;
        let dh = d / self.config.n_heads;
        for layer in &self.layers {
            let q = layer.query.forward(g, store, x)?;
            let wk = g.param(store, layer.key);
            let k = g.matmul(x, wk)?;
            let v = layer.value.forward(g, store, x)?;
            let mut heads = Vec::with_capacity(self.config.n_heads);
            for h in 0..self.config.n_heads {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(v, h * dh, dh)?;
                heads.push(scaled_attention(g, qh, kh, vh, &key_mask)?.1);
            }
            let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
            let attn = layer.output.forward(g, store, merged)?;
            let attn = g.dropout(attn, dropout)?;
            let res = g.add(x, attn)?;
            x = layer.attn_norm.forward(g, store, res)?;

            let hidden = layer.ffn_in.forward(g, store, x)?;
            let hidden = g.gelu(hidden);
            let ffn = layer.ffn_out.forward(g, store, hidden)?;
            let ffn = g.dropout(ffn, dropout)?;
            let res = g.add(x, ffn)?;
            x = layer.ffn_norm.forward(g, store, res)?;
        }
        let cls = g.slice_rows(x, 0, 1)?;
        let tokens = g.slice_rows(x, 1, token_ids.len())?;
        Ok(EncodedUtterance {
            tokens,
            cls,
            mask: mask.to_vec(),
        })
    }
}
