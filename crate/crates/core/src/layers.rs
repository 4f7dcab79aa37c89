//! Parameter registration and the small building blocks shared by every network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use xnlu_tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

/// Seeded source of initial parameter values.
///
/// Values are drawn in `f64` and rounded to the store's precision, so stores of
/// different precision built from one seed hold the same weights.
pub struct Initializer {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Initializer {
    pub fn new(seed: u64, std: f64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("finite positive std"),
        }
    }

    pub fn normal<T: Real>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.normal.sample(&mut self.rng))).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches sample count")
    }

    pub fn weight<T: Real>(&mut self, store: &mut ParamStore<T>, name: &str, shape: &[usize]) -> Result<ParamId> {
        let value = self.normal(shape);
        Ok(store.add(name, value)?)
    }
}

pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, shape: &[usize]) -> Result<ParamId> {
    Ok(store.add(name, Tensor::zeros(shape))?)
}

/// `x·W + b`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Linear {
            weight: init.weight(store, &format!("{name}.weight"), &[input, output])?,
            bias: zeros(store, &format!("{name}.bias"), &[1, output])?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        Ok(g.add_row(xw, b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn register<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[1, dim]))?,
            bias: zeros(store, &format!("{name}.bias"), &[1, dim])?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        Ok(g.layer_norm(x, gain, bias, T::lit(LN_EPS))?)
    }
}

/// Bias-free query/key/value projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projections {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

impl Projections {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Projections {
            query: init.weight(store, &format!("{name}.query"), &[input, output])?,
            key: init.weight(store, &format!("{name}.key"), &[input, output])?,
            value: init.weight(store, &format!("{name}.value"), &[input, output])?,
        })
    }

    /// Attention of `queries_from` over `keys_from`, scaled by `1/√d_k`, with
    /// masked key columns. Returns `(weights, output)`.
    pub fn attend<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries_from: Var,
        keys_from: Var,
        key_mask: &[bool],
    ) -> Result<(Var, Var)> {
        let wq = g.param(store, self.query);
        let wk = g.param(store, self.key);
        let wv = g.param(store, self.value);
        let q = g.matmul(queries_from, wq)?;
        let k = g.matmul(keys_from, wk)?;
        let v = g.matmul(keys_from, wv)?;
        scaled_attention(g, q, k, v, key_mask)
    }
}

/// `softmax(Q·Kᵀ/√d_k) · V` with masked key columns. Returns `(weights, output)`.
pub fn scaled_attention<T: Real>(g: &mut Graph<T>, q: Var, k: Var, v: Var, key_mask: &[bool]) -> Result<(Var, Var)> {
    let dk = g.value(k).cols();
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, T::one() / T::lit(dk as f64).sqrt());
    let weights = g.softmax_rows(scores, Some(key_mask))?;
    let out = g.matmul(weights, v)?;
    Ok((weights, out))
}
