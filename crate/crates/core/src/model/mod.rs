//! Aggregated regression models over utterance embeddings.
//!
//! Every variant maps a conversation (an `[N × d]` matrix of utterance
//! embeddings) to a per-utterance rating `r`, weight `w = σ(·)` and impact
//! score `s = r·w`, and to a conversation quality `q = Σ r w / Σ w`.
//!
//! | variant | contextualizer                    | context width |
//! |---------|-----------------------------------|---------------|
//! | `ara`   | identity                          | `embed_dim`   |
//! | `ara-o` | bidirectional LSTM                | `hidden_dim`  |
//! | `ara-a` | single-head self-attention block  | `embed_dim`   |
//! | `nara`  | bidirectional LSTM, no aggregation| `hidden_dim`  |
//!
//! `nara` regresses every utterance directly onto the conversation rating; its
//! conversation prediction is the mean of the utterance predictions and its
//! weights are reported as 1.

mod attention;
mod io;
mod lstm;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng;

pub use attention::attention_weights;
pub use io::{load_model, save_model, ModelFile, MODEL_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ara")]
    Ara,
    #[serde(rename = "ara-o")]
    AraO,
    #[serde(rename = "ara-a")]
    AraA,
    #[serde(rename = "nara")]
    Nara,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ara, Variant::AraO, Variant::AraA, Variant::Nara];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ara => "ara",
            Variant::AraO => "ara-o",
            Variant::AraA => "ara-a",
            Variant::Nara => "nara",
        }
    }

    fn uses_lstm(self) -> bool {
        matches!(self, Variant::AraO | Variant::Nara)
    }

    /// Whether the variant aggregates with learned weights.
    pub fn is_aggregated(self) -> bool {
        !matches!(self, Variant::Nara)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!("unknown variant {s:?} (expected ara, ara-o, ara-a or nara)"))
            })
    }
}

pub(crate) const RATING_V: &str = "rating.v";
pub(crate) const RATING_B: &str = "rating.b";
pub(crate) const WEIGHT_V: &str = "weight.v";
pub(crate) const WEIGHT_B: &str = "weight.b";

/// All learnable tensors of one model, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Freshly initialized parameters: Glorot-uniform matrices, zero biases
    /// (LSTM forget-gate biases start at 1).
    pub fn init(variant: Variant, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if embed_dim == 0 || hidden_dim == 0 {
            return Err(Error::contract("embed_dim and hidden_dim must be positive"));
        }
        if variant.uses_lstm() && hidden_dim % 2 != 0 {
            return Err(Error::contract(format!(
                "{variant} splits hidden_dim across two directions; {hidden_dim} is odd"
            )));
        }
        let shapes = Self::expected_shapes(variant, embed_dim, hidden_dim);
        let mut rng = rng::stream(seed, "init");
        let mut tensors = BTreeMap::new();
        for (name, shape) in shapes {
            let tensor = if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let n = shape[0] * shape[1];
                let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::new(shape, data)?
            } else if name.starts_with("lstm.") {
                lstm::initial_bias(hidden_dim / 2)
            } else {
                Tensor::zeros(&shape)
            };
            tensors.insert(name, tensor);
        }
        Ok(Self {
            variant,
            embed_dim,
            hidden_dim,
            seed,
            tensors,
        })
    }

    /// Builds parameters from explicit tensors, validating names and shapes.
    pub fn from_tensors(
        variant: Variant,
        embed_dim: usize,
        hidden_dim: usize,
        seed: u64,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let expected = Self::expected_shapes(variant, embed_dim, hidden_dim);
        if expected.len() != tensors.len() {
            let names: Vec<&String> = tensors.keys().collect();
            return Err(Error::integrity(format!(
                "{variant} expects tensors {:?}, found {names:?}",
                expected.keys().collect::<Vec<_>>()
            )));
        }
        for (name, shape) in &expected {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::integrity(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "load",
                    left: shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::integrity(format!("tensor {name} has non-finite values")));
            }
        }
        Ok(Self {
            variant,
            embed_dim,
            hidden_dim,
            seed,
            tensors,
        })
    }

    fn expected_shapes(variant: Variant, d: usize, hidden: usize) -> BTreeMap<String, Vec<usize>> {
        let mut shapes = BTreeMap::new();
        let ctx = match variant {
            Variant::Ara | Variant::AraA => d,
            Variant::AraO | Variant::Nara => hidden,
        };
        shapes.insert(RATING_V.to_string(), vec![ctx, 1]);
        shapes.insert(RATING_B.to_string(), vec![1]);
        if variant.is_aggregated() {
            shapes.insert(WEIGHT_V.to_string(), vec![ctx, 1]);
            shapes.insert(WEIGHT_B.to_string(), vec![1]);
        }
        if variant.uses_lstm() {
            shapes.extend(lstm::shapes(d, hidden / 2));
        }
        if variant == Variant::AraA {
            shapes.extend(attention::shapes(d, hidden));
        }
        shapes
    }

    /// Width of the contextualized utterance representation.
    pub fn ctx_dim(&self) -> usize {
        match self.variant {
            Variant::Ara | Variant::AraA => self.embed_dim,
            Variant::AraO | Variant::Nara => self.hidden_dim,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no tensor named {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "set",
                left: slot.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Registers every tensor as a parameter node on `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Result<BTreeMap<String, NodeId>> {
        self.tensors
            .iter()
            .map(|(name, t)| Ok((name.clone(), graph.param(name, t.clone())?)))
            .collect()
    }

    fn check_input(&self, embeddings: &Tensor) -> Result<()> {
        match embeddings.shape() {
            [_, d] if *d == self.embed_dim => Ok(()),
            shape => Err(Error::Dimension {
                op: "forward",
                left: vec![shape.first().copied().unwrap_or(0), self.embed_dim],
                right: shape.to_vec(),
            }),
        }
    }

    fn contextualize_node(
        &self,
        graph: &mut Graph,
        ids: &BTreeMap<String, NodeId>,
        x: NodeId,
    ) -> Result<NodeId> {
        match self.variant {
            Variant::Ara => Ok(x),
            Variant::AraO | Variant::Nara => lstm::bidirectional(graph, ids, x, self.hidden_dim / 2),
            Variant::AraA => attention::encode(graph, ids, x).map(|enc| enc.output),
        }
    }

    /// Records the full forward pass on `graph`.
    pub fn build(
        &self,
        graph: &mut Graph,
        ids: &BTreeMap<String, NodeId>,
        x: NodeId,
    ) -> Result<ForwardNodes> {
        self.check_input(graph.value(x))?;
        let h = self.contextualize_node(graph, ids, x)?;
        let lin = graph.matmul(h, ids[RATING_V])?;
        let ratings = graph.add_bias(lin, ids[RATING_B])?;
        if !self.variant.is_aggregated() {
            let quality = graph.mean(ratings);
            return Ok(ForwardNodes {
                ratings,
                weights: None,
                quality,
            });
        }
        let wlin = graph.matmul(h, ids[WEIGHT_V])?;
        let wlogit = graph.add_bias(wlin, ids[WEIGHT_B])?;
        let weights = graph.sigmoid(wlogit);
        let quality = graph.weighted_mean(ratings, weights)?;
        Ok(ForwardNodes {
            ratings,
            weights: Some(weights),
            quality,
        })
    }

    /// Records forward pass and training loss for one rated conversation.
    ///
    /// The loss is `(q − y)²` for aggregated variants and the MSE of every
    /// utterance prediction against the replicated rating for `nara`.
    /// `dropout_mask`, when given, multiplies the embeddings elementwise.
    pub fn loss_graph(
        &self,
        embeddings: &Tensor,
        rating: f64,
        dropout_mask: Option<Tensor>,
    ) -> Result<(Graph, NodeId)> {
        let mut graph = Graph::new();
        let ids = self.bind(&mut graph)?;
        let mut x = graph.constant(embeddings.clone());
        if let Some(mask) = dropout_mask {
            x = graph.mask(x, mask)?;
        }
        let out = self.build(&mut graph, &ids, x)?;
        let loss = if self.variant.is_aggregated() {
            graph.mse(out.quality, &[rating])?
        } else {
            let n = graph.value(out.ratings).numel();
            graph.mse(out.ratings, &vec![rating; n])?
        };
        Ok((graph, loss))
    }

    /// Contextualized representation of every utterance (`[N × ctx_dim]` rows).
    pub fn contextualize(&self, embeddings: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check_input(embeddings)?;
        let mut graph = Graph::new();
        let ids = self.bind(&mut graph)?;
        let x = graph.constant(embeddings.clone());
        let h = self.contextualize_node(&mut graph, &ids, x)?;
        let width = graph.value(h).shape()[1];
        Ok(graph.value(h).data().chunks(width).map(<[f64]>::to_vec).collect())
    }

    /// Pure inference pass producing the per-utterance impact report.
    pub fn forward(&self, embeddings: &Tensor) -> Result<ImpactReport> {
        let mut graph = Graph::new();
        let ids = self.bind(&mut graph)?;
        let x = graph.constant(embeddings.clone());
        let out = self.build(&mut graph, &ids, x)?;
        let ratings = graph.value(out.ratings).data();
        let utterances = match out.weights {
            Some(w) => ratings
                .iter()
                .zip(graph.value(w).data())
                .enumerate()
                .map(|(index, (&r, &w))| UtteranceImpact::new(index, r, w))
                .collect(),
            None => ratings
                .iter()
                .enumerate()
                .map(|(index, &r)| UtteranceImpact::new(index, r, 1.0))
                .collect(),
        };
        Ok(ImpactReport {
            conversation_id: String::new(),
            q: graph.value(out.quality).data()[0],
            utterances,
        })
    }

    /// Per-utterance predictions of the non-aggregated baseline.
    pub fn nara_forward(&self, embeddings: &Tensor) -> Result<Vec<f64>> {
        if self.variant != Variant::Nara {
            return Err(Error::contract(format!(
                "nara_forward called on a {} model",
                self.variant
            )));
        }
        Ok(self.forward(embeddings)?.utterances.iter().map(|u| u.r).collect())
    }
}

/// Node handles produced by [`ModelParams::build`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// `[N × 1]` ratings (utterance predictions for `nara`).
    pub ratings: NodeId,
    /// `[N × 1]` sigmoid weights; absent for `nara`.
    pub weights: Option<NodeId>,
    /// Scalar conversation quality.
    pub quality: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtteranceImpact {
    pub index: usize,
    pub r: f64,
    pub w: f64,
    pub s: f64,
}

impl UtteranceImpact {
    pub fn new(index: usize, r: f64, w: f64) -> Self {
        Self { index, r, w, s: r * w }
    }
}

/// Model output for one conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub conversation_id: String,
    pub q: f64,
    pub utterances: Vec<UtteranceImpact>,
}

impl ImpactReport {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.conversation_id = id.into();
        self
    }

    /// `(index, s)` in utterance order.
    pub fn impact_scores(&self) -> Vec<(usize, f64)> {
        self.utterances.iter().map(|u| (u.index, u.s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn random_input(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![n, d], data).unwrap()
    }

    fn hand_params() -> ModelParams {
        let mut p = ModelParams::init(Variant::Ara, 2, 4, 0).unwrap();
        p.set(RATING_V, Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap()).unwrap();
        p.set(RATING_B, Tensor::scalar(0.0)).unwrap();
        p.set(WEIGHT_V, Tensor::new(vec![2, 1], vec![0.0, 10.0]).unwrap()).unwrap();
        p.set(WEIGHT_B, Tensor::scalar(0.0)).unwrap();
        p
    }

    #[test]
    fn hand_evaluated_forward() {
        let p = hand_params();
        let x = Tensor::new(vec![2, 2], vec![2.0, 1.0, 4.0, -1.0]).unwrap();
        let report = p.forward(&x).unwrap();
        let (w1, w2) = (sigmoid(10.0), sigmoid(-10.0));
        let q = (2.0 * w1 + 4.0 * w2) / (w1 + w2);
        assert_eq!(report.utterances[0].r, 2.0);
        assert_eq!(report.utterances[1].r, 4.0);
        assert!((report.utterances[0].w - w1).abs() < 1e-15);
        assert!((report.utterances[1].w - w2).abs() < 1e-15);
        assert!((report.q - q).abs() < 1e-12);
        // closed form gives 2 + 2σ(−10)/(σ(10)+σ(−10)) ≈ 2.0000908
        assert!((report.q - 2.0000908).abs() < 1e-7);

        let scores = report.impact_scores();
        assert!((scores[0].1 - 1.99991).abs() < 1e-5);
        assert!((scores[1].1 - 0.00018).abs() < 1e-5);
    }

    #[test]
    fn constant_rating_head() {
        let mut p = ModelParams::init(Variant::Ara, 3, 4, 9).unwrap();
        p.set(RATING_V, Tensor::zeros(&[3, 1])).unwrap();
        p.set(RATING_B, Tensor::scalar(3.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = p.forward(&random_input(&mut rng, 5, 3)).unwrap();
        assert!(report.utterances.iter().all(|u| u.r == 3.5));
        assert!((report.q - 3.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_give_arithmetic_mean() {
        let mut p = ModelParams::init(Variant::Ara, 3, 4, 2).unwrap();
        p.set(WEIGHT_V, Tensor::zeros(&[3, 1])).unwrap();
        p.set(WEIGHT_B, Tensor::scalar(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let report = p.forward(&random_input(&mut rng, 6, 3)).unwrap();
        assert!(report.utterances.iter().all(|u| u.w == 0.5));
        let mean = report.utterances.iter().map(|u| u.r).sum::<f64>() / 6.0;
        assert!((report.q - mean).abs() < 1e-12);
    }

    #[test]
    fn impact_score_is_product() {
        let u = UtteranceImpact::new(0, 2.0, 0.5);
        assert_eq!(u.s, 1.0);
        let u = UtteranceImpact::new(1, -1.0, 1.0 - 1e-12);
        assert!((u.s + 1.0).abs() < 1e-11);
    }

    #[test]
    fn ara_contextualizer_is_identity() {
        let p = ModelParams::init(Variant::Ara, 4, 8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_input(&mut rng, 3, 4);
        let h = p.contextualize(&x).unwrap();
        let flat: Vec<f64> = h.into_iter().flatten().collect();
        assert_eq!(flat, x.data());
    }

    #[test]
    fn zero_lstm_gives_zero_states() {
        let mut p = ModelParams::init(Variant::AraO, 3, 6, 1).unwrap();
        for name in p.tensors().keys().cloned().collect::<Vec<_>>() {
            if name.starts_with("lstm.") {
                let shape = p.get(&name).unwrap().shape().to_vec();
                p.set(&name, Tensor::zeros(&shape)).unwrap();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = p.contextualize(&random_input(&mut rng, 4, 3)).unwrap();
        assert_eq!(h.len(), 4);
        assert!(h.iter().flatten().all(|&v| v == 0.0));
        assert!(h.iter().all(|row| row.len() == 6));
    }

    #[test]
    fn single_utterance_attends_to_itself() {
        let p = ModelParams::init(Variant::AraA, 3, 5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let attn = attention_weights(&p, &random_input(&mut rng, 1, 3)).unwrap();
        assert_eq!(attn, vec![vec![1.0]]);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
        let p = ModelParams::init(Variant::AraO, 3, 4, 1).unwrap();
        let x = Tensor::zeros(&[2, 5]);
        assert!(matches!(p.forward(&x), Err(Error::Dimension { .. })));
        assert!(matches!(p.contextualize(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn nara_constant_output() {
        let mut p = ModelParams::init(Variant::Nara, 3, 4, 5).unwrap();
        for name in p.tensors().keys().cloned().collect::<Vec<_>>() {
            let shape = p.get(&name).unwrap().shape().to_vec();
            p.set(&name, Tensor::zeros(&shape)).unwrap();
        }
        p.set(RATING_B, Tensor::scalar(2.25)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let preds = p.nara_forward(&random_input(&mut rng, 4, 3)).unwrap();
        assert_eq!(preds, vec![2.25; 4]);
        let report = p.forward(&random_input(&mut rng, 2, 3)).unwrap();
        assert!(report.utterances.iter().all(|u| u.w == 1.0 && u.s == u.r));
        assert!((report.q - 2.25).abs() < 1e-15);
    }

    #[test]
    fn nara_single_utterance_is_head_of_bidirectional_state() {
        let p = ModelParams::init(Variant::Nara, 3, 4, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_input(&mut rng, 1, 3);
        let h = p.contextualize(&x).unwrap();
        let v = p.get(RATING_V).unwrap().data();
        let b = p.get(RATING_B).unwrap().data()[0];
        let expected: f64 = h[0].iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + b;
        let pred = p.nara_forward(&x).unwrap();
        assert!((pred[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("ARA-O".parse::<Variant>().unwrap(), Variant::AraO);
        assert!("lstm".parse::<Variant>().is_err());
        assert!(ModelParams::init(Variant::AraO, 3, 5, 0).is_err());
    }

    #[test]
    fn ctx_dims() {
        assert_eq!(ModelParams::init(Variant::Ara, 7, 4, 0).unwrap().ctx_dim(), 7);
        assert_eq!(ModelParams::init(Variant::AraO, 7, 4, 0).unwrap().ctx_dim(), 4);
        assert_eq!(ModelParams::init(Variant::AraA, 7, 4, 0).unwrap().ctx_dim(), 7);
        assert_eq!(ModelParams::init(Variant::Nara, 7, 4, 0).unwrap().ctx_dim(), 4);
    }
}
