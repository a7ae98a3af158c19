//! Single-layer, single-head self-attention encoder block.
//!
//! `X₁ = X + softmax(XW_q (XW_k)ᵀ / √d) XW_v`, then
//! `out = X₁ + tanh(X₁W₁ + b₁)W₂ + b₂`. No positional encoding and no layer
//! normalization, so the block is permutation equivariant.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::Result;

use super::ModelParams;

pub(super) fn shapes(embed_dim: usize, ffn_dim: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        ("attn.query".into(), vec![embed_dim, embed_dim]),
        ("attn.key".into(), vec![embed_dim, embed_dim]),
        ("attn.value".into(), vec![embed_dim, embed_dim]),
        ("ffn.w1".into(), vec![embed_dim, ffn_dim]),
        ("ffn.b1".into(), vec![ffn_dim]),
        ("ffn.w2".into(), vec![ffn_dim, embed_dim]),
        ("ffn.b2".into(), vec![embed_dim]),
    ]
}

pub(super) struct Encoded {
    pub output: NodeId,
    pub attention: NodeId,
}

pub(super) fn encode(graph: &mut Graph, ids: &BTreeMap<String, NodeId>, x: NodeId) -> Result<Encoded> {
    let d = graph.value(x).shape()[1];
    let q = graph.matmul(x, ids["attn.query"])?;
    let k = graph.matmul(x, ids["attn.key"])?;
    let v = graph.matmul(x, ids["attn.value"])?;
    let kt = graph.transpose(k)?;
    let scores = graph.matmul(q, kt)?;
    let scores = graph.scale(scores, 1.0 / (d as f64).sqrt());
    let attention = graph.softmax_rows(scores)?;
    let mixed = graph.matmul(attention, v)?;
    let x1 = graph.add(x, mixed)?;

    let inner = graph.matmul(x1, ids["ffn.w1"])?;
    let inner = graph.add_bias(inner, ids["ffn.b1"])?;
    let inner = graph.tanh(inner);
    let ff = graph.matmul(inner, ids["ffn.w2"])?;
    let ff = graph.add_bias(ff, ids["ffn.b2"])?;
    let output = graph.add(x1, ff)?;
    Ok(Encoded { output, attention })
}

/// Attention matrix (`[N × N]`, rows sum to 1) of an `ara-a` model.
pub fn attention_weights(params: &ModelParams, embeddings: &Tensor) -> Result<Vec<Vec<f64>>> {
    if params.variant != super::Variant::AraA {
        return Err(crate::Error::contract(format!(
            "{} models have no attention layer",
            params.variant
        )));
    }
    params.check_input(embeddings)?;
    let mut graph = Graph::new();
    let ids = params.bind(&mut graph)?;
    let x = graph.constant(embeddings.clone());
    let enc = encode(&mut graph, &ids, x)?;
    let n = embeddings.shape()[0];
    Ok(graph.value(enc.attention).data().chunks(n).map(<[f64]>::to_vec).collect())
}
