use super::layers::{Builder, LayerNorm, Linear};
use super::params::Session;
use crate::autograd::Var;
use crate::error::{Error, Result};

pub const FFN_EXPANSION: usize = 2;

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct Mha {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub dim: usize,
    pub heads: usize,
}

impl Mha {
    pub fn new(b: &mut Builder<'_>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(format!("embedding dim {dim} not divisible by {heads} heads")));
        }
        Ok(Mha {
            wq: Linear::new(&mut b.scope("q"), dim, dim),
            wk: Linear::new(&mut b.scope("k"), dim, dim),
            wv: Linear::new(&mut b.scope("v"), dim, dim),
            wo: Linear::new(&mut b.scope("out"), dim, dim),
            dim,
            heads,
        })
    }

    /// `q_in` is `(B, T, d)`, `k_in`/`v_in` are `(B, S, d)`. Returns the
    /// projected output `(B, T, d)` and attention `(B, heads, T, S)`.
    pub fn forward(&self, s: &mut Session<'_>, q_in: Var, k_in: Var, v_in: Var) -> Result<(Var, Var)> {
        for v in [q_in, k_in, v_in] {
            let shape = s.graph.shape(v);
            if shape.len() != 3 || shape[2] != self.dim {
                return Err(Error::shape("mha", format!("tokens {shape:?} for dim {}", self.dim)));
            }
        }
        let q = self.wq.forward(s, q_in)?;
        let k = self.wk.forward(s, k_in)?;
        let v = self.wv.forward(s, v_in)?;
        let (heads_out, attn) = s.graph.attention(q, k, v, self.heads)?;
        let out = self.wo.forward(s, heads_out)?;
        Ok((out, attn))
    }
}

/// Post-norm encoder block:
/// `z = LN1(residual + MHA(q, k, v))`, `out = LN2(z + FFN(z))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub mha: Mha,
    pub ln1: LayerNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub ln2: LayerNorm,
}

impl TransformerBlock {
    pub fn new(b: &mut Builder<'_>, dim: usize, heads: usize) -> Result<Self> {
        Ok(TransformerBlock {
            mha: Mha::new(&mut b.scope("attn"), dim, heads)?,
            ln1: LayerNorm::new(&mut b.scope("ln1"), dim),
            ffn1: Linear::new(&mut b.scope("ffn1"), dim, FFN_EXPANSION * dim),
            ffn2: Linear::new(&mut b.scope("ffn2"), FFN_EXPANSION * dim, dim),
            ln2: LayerNorm::new(&mut b.scope("ln2"), dim),
        })
    }

    /// Queries from `tokens_q`, keys and values from `tokens_kv`, residual
    /// on the query side.
    pub fn forward(&self, s: &mut Session<'_>, tokens_q: Var, tokens_kv: Var) -> Result<(Var, Var)> {
        self.forward_sources(s, tokens_q, tokens_kv, tokens_kv, tokens_q)
    }

    /// Fully general wiring: each of query, key, value and the residual
    /// base may come from a different token set.
    pub fn forward_sources(
        &self,
        s: &mut Session<'_>,
        q_src: Var,
        k_src: Var,
        v_src: Var,
        residual: Var,
    ) -> Result<(Var, Var)> {
        let (a, attn) = self.mha.forward(s, q_src, k_src, v_src)?;
        let z = s.graph.add(residual, a)?;
        let z = self.ln1.forward(s, z)?;
        let h = self.ffn1.forward(s, z)?;
        let h = s.graph.relu(h)?;
        let h = self.ffn2.forward(s, h)?;
        let y = s.graph.add(z, h)?;
        let y = self.ln2.forward(s, y)?;
        Ok((y, attn))
    }
}
