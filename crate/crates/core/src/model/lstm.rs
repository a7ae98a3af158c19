//! Bidirectional LSTM contextualizer.
//!
//! Gate layout within the `[(d + h) × 4h]` weight matrix is `[input | forget |
//! candidate | output]`. Each direction has its own weights; the per-position
//! outputs of both directions are concatenated to width `2h`.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::Result;

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

pub(super) fn shapes(embed_dim: usize, per_direction: usize) -> Vec<(String, Vec<usize>)> {
    DIRECTIONS
        .iter()
        .flat_map(|dir| {
            [
                (format!("lstm.{dir}.w"), vec![embed_dim + per_direction, 4 * per_direction]),
                (format!("lstm.{dir}.b"), vec![4 * per_direction]),
            ]
        })
        .collect()
}

/// Zero biases except the forget gate, which starts at 1.
pub(super) fn initial_bias(per_direction: usize) -> Tensor {
    let mut b = Tensor::zeros(&[4 * per_direction]);
    b.data_mut()[per_direction..2 * per_direction].fill(1.0);
    b
}

fn run_direction(
    graph: &mut Graph,
    x: NodeId,
    weight: NodeId,
    bias: NodeId,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<NodeId>> {
    let n = graph.value(x).shape()[0];
    let mut h = graph.constant(Tensor::zeros(&[1, hidden]));
    let mut c = graph.constant(Tensor::zeros(&[1, hidden]));
    let mut states = vec![h; n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in order {
        let xt = graph.row(x, t)?;
        let z = graph.concat_cols(&[xt, h])?;
        let lin = graph.matmul(z, weight)?;
        let gates = graph.add_bias(lin, bias)?;
        let i = graph.slice_cols(gates, 0, hidden)?;
        let f = graph.slice_cols(gates, hidden, hidden)?;
        let g = graph.slice_cols(gates, 2 * hidden, hidden)?;
        let o = graph.slice_cols(gates, 3 * hidden, hidden)?;
        let i = graph.sigmoid(i);
        let f = graph.sigmoid(f);
        let g = graph.tanh(g);
        let o = graph.sigmoid(o);
        let kept = graph.mul(f, c)?;
        let written = graph.mul(i, g)?;
        c = graph.add(kept, written)?;
        let squashed = graph.tanh(c);
        h = graph.mul(o, squashed)?;
        states[t] = h;
    }
    Ok(states)
}

/// `[N × d]` → `[N × 2·per_direction]`.
pub(super) fn bidirectional(
    graph: &mut Graph,
    ids: &BTreeMap<String, NodeId>,
    x: NodeId,
    per_direction: usize,
) -> Result<NodeId> {
    let fwd = run_direction(graph, x, ids["lstm.fwd.w"], ids["lstm.fwd.b"], per_direction, false)?;
    let bwd = run_direction(graph, x, ids["lstm.bwd.w"], ids["lstm.bwd.b"], per_direction, true)?;
    let fwd = graph.stack_rows(&fwd)?;
    let bwd = graph.stack_rows(&bwd)?;
    graph.concat_cols(&[fwd, bwd])
}
