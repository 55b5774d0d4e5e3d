//! Transformer encoder over all nodes: input embedding, full multi-head
//! self-attention, and the residual/LayerNorm/FFN block.

use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};

use super::params::{BoundParams, LayerParams};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `H⁰ = X·W_x + P·W_p`.
pub fn embed_on(tape: &mut Tape, x: Var, pe: Var, params: &BoundParams) -> Result<Var> {
    let hx = tape.matmul(x, params.w_x)?;
    let hp = tape.matmul(pe, params.w_p)?;
    tape.add(hx, hp)
}

/// Unmasked scaled dot-product attention, one softmax per head, heads
/// concatenated then projected by `W_O`. When `capture` is given, each
/// head's `N×N` attention matrix is appended to it.
pub fn multi_head_attention_on(
    tape: &mut Tape,
    h: Var,
    layer: &LayerParams<Var>,
    mut capture: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let mut outputs = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let q = tape.matmul(h, head.w_q)?;
        let k = tape.matmul(h, head.w_k)?;
        let v = tape.matmul(h, head.w_v)?;
        let d_k = tape.value(q).cols() as f64;
        let logits = tape.matmul_nt(q, k)?;
        let logits = tape.scale(logits, 1.0 / d_k.sqrt())?;
        let attn = tape.softmax_rows(logits)?;
        if let Some(c) = capture.as_deref_mut() {
            c.push(tape.value(attn).clone());
        }
        outputs.push(tape.matmul(attn, v)?);
    }
    let concat = tape.concat_cols(&outputs)?;
    tape.matmul(concat, layer.w_o)
}

/// `t = LN(h + MHA(h))`, `out = LN(t + FFN(t))` with
/// `FFN(x) = ReLU(x·W₁ + b₁)·W₂ + b₂`.
pub fn transformer_layer_on(
    tape: &mut Tape,
    h: Var,
    layer: &LayerParams<Var>,
    capture: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let attn = multi_head_attention_on(tape, h, layer, capture)?;
    let res = tape.add(h, attn)?;
    let t = tape.layer_norm(res, layer.norm1_gamma, layer.norm1_beta, LAYER_NORM_EPS)?;

    let f = tape.matmul(t, layer.ffn_w1)?;
    let f = tape.add_row(f, layer.ffn_b1)?;
    let f = tape.relu(f)?;
    let f = tape.matmul(f, layer.ffn_w2)?;
    let f = tape.add_row(f, layer.ffn_b2)?;
    let res = tape.add(t, f)?;
    tape.layer_norm(res, layer.norm2_gamma, layer.norm2_beta, LAYER_NORM_EPS)
}

pub struct Encoded {
    pub mu: Var,
    pub logvar: Var,
    /// `[layer][head]`, present when capture was requested.
    pub attention: Option<Vec<Vec<Tensor>>>,
}

pub fn encode_on(tape: &mut Tape, x: Var, pe: Var, params: &BoundParams, capture: bool) -> Result<Encoded> {
    let mut h = embed_on(tape, x, pe, params)?;
    let mut record = capture.then(Vec::new);
    for layer in &params.layers {
        let mut heads = Vec::new();
        h = transformer_layer_on(tape, h, layer, capture.then_some(&mut heads))?;
        if let Some(r) = record.as_mut() {
            r.push(heads);
        }
    }
    let mu = tape.matmul(h, params.w_mu)?;
    let mu = tape.add_row(mu, params.b_mu)?;
    let logvar = tape.matmul(h, params.w_logvar)?;
    let logvar = tape.add_row(logvar, params.b_logvar)?;
    Ok(Encoded {
        mu,
        logvar,
        attention: record,
    })
}

/// `Z = μ + ε ⊙ exp(½ log σ²)` with `eps` supplied by the caller.
pub fn reparameterize_on(tape: &mut Tape, mu: Var, logvar: Var, eps: Tensor) -> Result<Var> {
    let half = tape.scale(logvar, 0.5)?;
    let sigma = tape.exp(half)?;
    let eps = tape.constant(eps);
    let noise = tape.mul(eps, sigma)?;
    tape.add(mu, noise)
}
