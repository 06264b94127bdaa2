//! Parameterized building blocks shared by the encoders, the fusion
//! decoders and the experts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Registers parameters under a dotted name prefix with seeded initial values.
pub struct ParamBuilder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut ParamBuilder<'_>) -> Result<T>) -> Result<T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let mut child = ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        };
        f(&mut child)
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn tensor(&mut self, name: &str, t: Tensor) -> Result<ParamId> {
        let n = self.full_name(name);
        self.store.insert(n, t)
    }

    /// Glorot-uniform `rows × cols` matrix.
    pub fn glorot(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-a..a)).collect();
        self.tensor(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.tensor(name, Tensor::zeros(vec![rows, cols]))
    }

    pub fn filled(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> Result<ParamId> {
        self.tensor(name, Tensor::matrix(rows, cols, vec![v; rows * cols])?)
    }
}

/// Affine map `x·W + b` applied row-wise.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, inp: usize, out: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Linear {
                weight: b.glorot("w", inp, out)?,
                bias: Some(b.zeros("b", 1, out)?),
            })
        })
    }

    pub fn no_bias(b: &mut ParamBuilder<'_>, name: &str, inp: usize, out: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Linear {
                weight: b.glorot("w", inp, out)?,
                bias: None,
            })
        })
    }

    pub fn zeroed(b: &mut ParamBuilder<'_>, name: &str, inp: usize, out: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Linear {
                weight: b.zeros("w", inp, out)?,
                bias: Some(b.zeros("b", 1, out)?),
            })
        })
    }

    pub fn identity(b: &mut ParamBuilder<'_>, name: &str, dim: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Linear {
                weight: b.tensor("w", Tensor::eye(dim))?,
                bias: Some(b.zeros("b", 1, dim)?),
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(p, b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalization followed by a learned scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, dim: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(LayerNorm {
                gamma: b.filled("gamma", 1, dim, 1.0)?,
                beta: b.zeros("beta", 1, dim)?,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let n = g.layer_norm(x);
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        let s = g.mul(n, gamma)?;
        g.add(s, beta)
    }
}

/// Multi-head attention with query/key/value/output projections.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(MultiHeadAttention {
                q: Linear::new(b, "q", dim, dim)?,
                k: Linear::new(b, "k", dim, dim)?,
                v: Linear::new(b, "v", dim, dim)?,
                out: Linear::new(b, "o", dim, dim)?,
                heads,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, query: Var, kv: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let q = self.q.forward(g, p, query)?;
        let k = self.k.forward(g, p, kv)?;
        let v = self.v.forward(g, p, kv)?;
        let a = g.attention(q, k, v, self.heads, key_mask)?;
        self.out.forward(g, p, a)
    }
}

/// Two-layer ReLU feed-forward block.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(FeedForward {
                up: Linear::new(b, "up", dim, hidden)?,
                down: Linear::new(b, "down", hidden, dim)?,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.relu(h);
        self.down.forward(g, p, h)
    }
}

/// Post-norm attention block: `LN(x + Attn(x, kv))` then `LN(h + FFN(h))`.
///
/// With `kv == x` this is an encoder layer; with an external `kv` it is a
/// cross-attention decoder layer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionBlock {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl AttentionBlock {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(AttentionBlock {
                attn: MultiHeadAttention::new(b, "attn", dim, heads)?,
                norm1: LayerNorm::new(b, "ln1", dim)?,
                ffn: FeedForward::new(b, "ffn", dim, hidden)?,
                norm2: LayerNorm::new(b, "ln2", dim)?,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, query: Var, kv: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let a = self.attn.forward(g, p, query, kv, key_mask)?;
        let h = g.add(query, a)?;
        let h = self.norm1.forward(g, p, h)?;
        let f = self.ffn.forward(g, p, h)?;
        let o = g.add(h, f)?;
        self.norm2.forward(g, p, o)
    }
}

/// Scales each row of `x` to unit L2 norm.
pub fn l2_normalize_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let sq = g.mul(x, x)?;
    let s = g.sum(sq, Some(1));
    let s = g.add_scalar(s, 1e-24);
    let inv = g.powf(s, -0.5);
    g.mul(x, inv)
}
