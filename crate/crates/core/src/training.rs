//! MSE regression of conversation ratings with Adam, mini-batches of whole
//! conversations, inverted dropout on the utterance embeddings and early
//! stopping on dev Pearson.
//!
//! Seed chain: parameters come from stream `init` (unless warm-started),
//! per-epoch conversation order from stream `shuffle`, dropout masks from
//! stream `dropout`; all keyed by [`TrainConfig::seed`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{mse_raw, Tensor};
use crate::data::{Conversation, EmbeddingTable};
use crate::error::{Error, Result};
use crate::evaluation::pearson;
use crate::model::{ModelParams, Variant};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub loss: Loss,
    pub dropout_embed: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Context width of the recurrent variants (split over both directions)
    /// and inner width of the attention block's feed-forward layer.
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            loss: Loss::Mse,
            dropout_embed: 0.1,
            epochs: 100,
            batch_size: 32,
            patience: 10,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            hidden_dim: 200,
        }
    }
}

impl TrainConfig {
    /// Parses `key = value` text; absent keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_embed) {
            return fail(format!("dropout_embed must lie in [0, 1), got {}", self.dropout_embed));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return fail("adam_epsilon must be positive".into());
        }
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update with bias correction, applied in place.
///
/// `gradients` must cover exactly the parameters, with matching shapes.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    gradients: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != gradients.len() || params.keys().any(|k| !gradients.contains_key(k)) {
        return Err(Error::contract(format!(
            "gradients {:?} do not match parameters {:?}",
            gradients.keys().collect::<Vec<_>>(),
            params.keys().collect::<Vec<_>>()
        )));
    }
    for (name, p) in params.iter() {
        let g = &gradients[name];
        if g.shape() != p.shape() {
            return Err(Error::contract(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = gradients[name].data();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
        }
    }
    Ok(())
}

/// Mean squared difference; lengths must match and be non-zero.
pub fn mse_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::contract(format!(
            "mse over {} predictions and {} targets",
            predicted.len(),
            target.len()
        )));
    }
    mse_raw(predicted, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Undefined when dev predictions are constant.
    pub dev_pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub best_dev_pearson: Option<f64>,
    pub epoch_selected: usize,
    pub history: Vec<EpochRecord>,
}

struct Example {
    embeddings: Tensor,
    rating: f64,
}

fn prepare(conversations: &[Conversation], table: &EmbeddingTable, role: &str) -> Result<Vec<Example>> {
    conversations
        .iter()
        .map(|c| {
            let rating = c
                .rating
                .ok_or_else(|| Error::integrity(format!("{role} conversation {} has no rating", c.id)))?;
            Ok(Example {
                embeddings: c.embedding_matrix(table)?,
                rating,
            })
        })
        .collect()
}

/// Conversation-level predictions `q` (no dropout).
pub fn predict_quality(params: &ModelParams, conversations: &[Conversation], table: &EmbeddingTable) -> Result<Vec<f64>> {
    conversations
        .iter()
        .map(|c| Ok(params.forward(&c.embedding_matrix(table)?)?.q))
        .collect()
}

fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<(f64, Option<f64>)> {
    let mut predicted = Vec::with_capacity(examples.len());
    for ex in examples {
        predicted.push(params.forward(&ex.embeddings)?.q);
    }
    let target: Vec<f64> = examples.iter().map(|e| e.rating).collect();
    let loss = mse_loss(&predicted, &target)?;
    let r = pearson(&predicted, &target).ok().filter(|r| r.is_finite());
    Ok((loss, r))
}

fn dropout_mask(rng: &mut impl Rng, shape: &[usize], p: f64) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        *m = if rng.random::<f64>() < p { 0.0 } else { keep };
    }
    mask
}

fn selection_key(record: &EpochRecord) -> (f64, f64) {
    (record.dev_pearson.unwrap_or(f64::NEG_INFINITY), -record.dev_loss)
}

/// Fits `variant` on `train`, selecting the epoch with the best dev Pearson.
///
/// `init` warm-starts from existing parameters (finetuning); its variant and
/// dimensions must match.
pub fn train(
    variant: Variant,
    train: &[Conversation],
    dev: &[Conversation],
    table: &EmbeddingTable,
    config: &TrainConfig,
    init: Option<&ModelParams>,
) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if dev.is_empty() {
        return Err(Error::contract("dev set is empty"));
    }
    let train_set = prepare(train, table, "train")?;
    let dev_set = prepare(dev, table, "dev")?;

    let mut params = match init {
        Some(p) => {
            if p.variant != variant {
                return Err(Error::contract(format!(
                    "warm start from a {} model cannot train {variant}",
                    p.variant
                )));
            }
            if p.embed_dim != table.dim() {
                return Err(Error::Dimension {
                    op: "warm start (model embed_dim vs embeddings dim)",
                    left: vec![p.embed_dim],
                    right: vec![table.dim()],
                });
            }
            p.clone()
        }
        None => ModelParams::init(variant, table.dim(), config.hidden_dim, config.seed)?,
    };

    let mut shuffle_rng = rng::stream(config.seed, "shuffle");
    let mut dropout_rng = rng::stream(config.seed, "dropout");
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(EpochRecord, ModelParams)> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let mut summed: BTreeMap<String, Tensor> = BTreeMap::new();
            for &i in batch {
                let ex = &train_set[i];
                let mask = (config.dropout_embed > 0.0)
                    .then(|| dropout_mask(&mut dropout_rng, ex.embeddings.shape(), config.dropout_embed));
                let (mut graph, loss) = params.loss_graph(&ex.embeddings, ex.rating, mask)?;
                let value = graph.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch, step });
                }
                epoch_loss += value;
                graph.backward(loss)?;
                for (name, g) in graph.param_gradients() {
                    match summed.get_mut(&name) {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                        None => {
                            summed.insert(name, g);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in summed.values_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            adam_step(params.tensors_mut(), &summed, &mut adam, config)?;
            if !params.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
        }

        let (dev_loss, dev_pearson) = evaluate(&params, &dev_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            dev_loss,
            dev_pearson,
        };
        history.push(record);
        let improved = best
            .as_ref()
            .is_none_or(|(b, _)| selection_key(&record) > selection_key(b));
        if improved {
            best = Some((record, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }

    let (record, params) = best.expect("at least one epoch ran");
    Ok(TrainedModel {
        params,
        best_dev_pearson: record.dev_pearson,
        epoch_selected: record.epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{utterance_id, Speaker, Utterance};

    fn scalar_params(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::scalar(value))])
    }

    #[test]
    fn adam_matches_hand_rolled_oracle() {
        // minimize f(x) = (x - 3)^2 from x = 0
        let config = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut params = scalar_params(0.0);
        let mut state = AdamState::new();

        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);

            let current = params["x"].data()[0];
            let grads = scalar_params(2.0 * (current - 3.0));
            adam_step(&mut params, &grads, &mut state, &config).unwrap();
            assert!((params["x"].data()[0] - x).abs() < 1e-12, "step {t}");
        }
        assert_eq!(state.step, 3);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let config = TrainConfig::default();
        for g in [-250.0, -1e-3, 0.7, 42.0] {
            let mut params = scalar_params(1.0);
            adam_step(&mut params, &scalar_params(g), &mut AdamState::new(), &config).unwrap();
            let delta = params["x"].data()[0] - 1.0;
            assert!((delta.abs() - config.learning_rate).abs() < 1e-9 * config.learning_rate.max(1.0) + 1e-12);
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let config = TrainConfig::default();
        let mut params = scalar_params(2.5);
        let mut state = AdamState::new();
        for _ in 0..50 {
            adam_step(&mut params, &scalar_params(0.0), &mut state, &config).unwrap();
        }
        assert_eq!(params["x"].data()[0], 2.5);
    }

    #[test]
    fn adam_rejects_mismatched_gradients() {
        let config = TrainConfig::default();
        let mut params = scalar_params(0.0);
        let wrong = BTreeMap::from([("x".to_string(), Tensor::zeros(&[2]))]);
        assert!(matches!(
            adam_step(&mut params, &wrong, &mut AdamState::new(), &config),
            Err(Error::Contract(_))
        ));
        let other = BTreeMap::from([("y".to_string(), Tensor::scalar(1.0))]);
        assert!(adam_step(&mut params, &other, &mut AdamState::new(), &config).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 4.0);
        assert!((mse_loss(&[1.0, 2.0, 3.0], &[2.0, 2.0, 5.0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn config_parsing() {
        let c = TrainConfig::from_toml("learning_rate = 0.001\nbatch_size = 4\n").unwrap();
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.patience, 10);
        assert_eq!(TrainConfig::from_toml("").unwrap(), TrainConfig::default());
        assert!(TrainConfig::from_toml("learning_rat = 0.1").is_err());
        assert!(TrainConfig::from_toml("dropout_embed = 1.0").is_err());
        assert!(TrainConfig::from_toml("learning_rate = 0.0").is_err());
        assert!(TrainConfig::from_toml("loss = \"mae\"").is_err());
        let round = TrainConfig::from_toml(&TrainConfig::default().to_toml()).unwrap();
        assert_eq!(round, TrainConfig::default());
    }

    fn toy(n: usize, rating: impl Fn(usize) -> f64) -> (Vec<Conversation>, EmbeddingTable) {
        let mut table = EmbeddingTable::new(2).unwrap();
        let mut convs = Vec::new();
        for c in 0..n {
            let id = format!("t{c}");
            let len = 1 + c % 3;
            for i in 0..len {
                let x = ((c * 7 + i * 3) % 11) as f32 / 11.0;
                table.insert(utterance_id(&id, i), vec![x, 1.0 - x]).unwrap();
            }
            convs.push(Conversation {
                id,
                rating: Some(rating(c)),
                utterances: (0..len).map(|_| Utterance::new(Speaker::User, "u")).collect(),
            });
        }
        (convs, table)
    }

    #[test]
    fn constant_target_is_learned() {
        let (convs, table) = toy(12, |_| 3.0);
        let config = TrainConfig {
            learning_rate: 0.05,
            batch_size: 4,
            epochs: 200,
            patience: 200,
            dropout_embed: 0.0,
            ..TrainConfig::default()
        };
        let model = train(Variant::Ara, &convs, &convs, &table, &config, None).unwrap();
        let q = predict_quality(&model.params, &convs, &table).unwrap();
        let targets = vec![3.0; q.len()];
        assert!(mse_loss(&q, &targets).unwrap() < 0.01);
        assert!(model.history.last().unwrap().train_loss < 0.01);
    }

    #[test]
    fn selection_picks_best_dev_epoch() {
        let (convs, table) = toy(20, |c| 1.0 + (c % 5) as f64);
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 5,
            epochs: 15,
            patience: 3,
            ..TrainConfig::default()
        };
        let model = train(Variant::Ara, &convs[..14], &convs[14..], &table, &config, None).unwrap();
        let best = model
            .history
            .iter()
            .map(selection_key)
            .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
        let chosen = &model.history[model.epoch_selected - 1];
        assert_eq!(selection_key(chosen), best);
        assert_eq!(model.best_dev_pearson, chosen.dev_pearson);
        // early stopping: at most `patience` epochs after the selected one
        assert!(model.history.len() <= model.epoch_selected + config.patience + 1);
    }

    #[test]
    fn training_is_deterministic() {
        let (convs, table) = toy(10, |c| 1.0 + (c % 4) as f64);
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 3,
            epochs: 4,
            seed: 11,
            hidden_dim: 4,
            ..TrainConfig::default()
        };
        for variant in Variant::ALL {
            let a = train(variant, &convs[..7], &convs[7..], &table, &config, None).unwrap();
            let b = train(variant, &convs[..7], &convs[7..], &table, &config, None).unwrap();
            assert_eq!(a, b, "{variant}");
        }
    }

    #[test]
    fn warm_start_and_errors() {
        let (convs, table) = toy(6, |c| 2.0 + (c % 2) as f64);
        let config = TrainConfig {
            learning_rate: 0.01,
            epochs: 2,
            hidden_dim: 4,
            ..TrainConfig::default()
        };
        let first = train(Variant::Ara, &convs, &convs, &table, &config, None).unwrap();
        let tuned = train(Variant::Ara, &convs, &convs, &table, &config, Some(&first.params)).unwrap();
        assert_ne!(tuned.params, first.params);
        assert!(matches!(
            train(Variant::AraO, &convs, &convs, &table, &config, Some(&first.params)),
            Err(Error::Contract(_))
        ));

        let mut unrated = convs.clone();
        unrated[0].rating = None;
        assert!(matches!(
            train(Variant::Ara, &unrated, &convs, &table, &config, None),
            Err(Error::Integrity(_))
        ));
        let mut missing = convs.clone();
        missing[1].utterances.push(Utterance::new(Speaker::System, "extra"));
        let err = train(Variant::Ara, &missing, &convs, &table, &config, None).unwrap_err();
        assert!(err.to_string().contains("t1:"), "{err}");
    }

    #[test]
    fn divergence_is_reported() {
        let (convs, table) = toy(4, |_| 3.0);
        let config = TrainConfig {
            learning_rate: 1e308,
            epochs: 3,
            dropout_embed: 0.0,
            ..TrainConfig::default()
        };
        let err = train(Variant::Ara, &convs, &convs, &table, &config, None).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
    }
}
