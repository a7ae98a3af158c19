//! Synthetic conversations with planted utterance impacts.
//!
//! Prototype directions are drawn uniformly on the unit sphere. Each
//! conversation draws a topic mixture from a symmetric Dirichlet, then each
//! utterance picks a prototype from that mixture and embeds as the prototype
//! plus isotropic Gaussian jitter. The conversation rating is the mean planted
//! impact of its utterances plus Gaussian noise, clamped to `[1, 5]`.
//! Utterances of the lowest-impact prototype are labeled `bad`, those of the
//! highest-impact prototype `good`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{utterance_id, Conversation, EmbeddingTable, Speaker, Utterance, UtteranceLabel};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_conversations: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub embed_dim: usize,
    pub n_prototypes: usize,
    /// Planted impact per prototype; empty means evenly spaced over `[1, 5]`.
    pub impacts: Vec<f64>,
    /// Standard deviation of the rating noise.
    pub noise: f64,
    /// Standard deviation of the per-component embedding jitter.
    pub jitter: f64,
    /// Symmetric Dirichlet concentration of the per-conversation topic mixture.
    pub concentration: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_conversations: 2000,
            min_len: 5,
            max_len: 20,
            embed_dim: 16,
            n_prototypes: 8,
            impacts: Vec::new(),
            noise: 0.25,
            jitter: 0.05,
            concentration: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Impacts in effect, filling in the evenly spaced default.
    pub fn resolved_impacts(&self) -> Vec<f64> {
        if !self.impacts.is_empty() {
            return self.impacts.clone();
        }
        let k = self.n_prototypes;
        (0..k)
            .map(|i| if k == 1 { 3.0 } else { 1.0 + 4.0 * i as f64 / (k - 1) as f64 })
            .collect()
    }

    /// Parses `key = value` settings; absent keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::contract(msg));
        if self.n_prototypes < 2 {
            return fail(format!("need at least 2 prototypes, got {}", self.n_prototypes));
        }
        if !self.impacts.is_empty() && self.impacts.len() != self.n_prototypes {
            return fail(format!(
                "{} impacts given for {} prototypes",
                self.impacts.len(),
                self.n_prototypes
            ));
        }
        if self.resolved_impacts().iter().any(|v| !v.is_finite()) {
            return fail("impacts must be finite".into());
        }
        if self.n_conversations == 0 || self.embed_dim == 0 {
            return fail("n_conversations and embed_dim must be positive".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        if !(self.noise >= 0.0 && self.jitter >= 0.0 && self.noise.is_finite() && self.jitter.is_finite()) {
            return fail("noise and jitter must be finite and non-negative".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return fail("concentration must be positive".into());
        }
        Ok(())
    }
}

/// Planted prototype and impact of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub utterance_id: String,
    pub prototype: usize,
    pub impact: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub conversations: Vec<Conversation>,
    pub embeddings: EmbeddingTable,
    pub truth: Vec<GroundTruth>,
    pub prototypes: Vec<Vec<f64>>,
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dirichlet(rng: &mut impl Rng, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    }
}

fn categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let impacts = spec.resolved_impacts();
    let mut proto_rng = rng::stream(spec.seed, "synthetic.prototypes");
    let prototypes: Vec<Vec<f64>> = (0..spec.n_prototypes)
        .map(|_| unit_vector(&mut proto_rng, spec.embed_dim))
        .collect();

    let lowest = (0..impacts.len())
        .min_by(|&a, &b| impacts[a].total_cmp(&impacts[b]))
        .unwrap_or(0);
    let highest = (0..impacts.len())
        .max_by(|&a, &b| impacts[a].total_cmp(&impacts[b]).then(b.cmp(&a)))
        .unwrap_or(0);

    let mut rng = rng::stream(spec.seed, "synthetic.conversations");
    let jitter = Normal::new(0.0, spec.jitter).map_err(|e| Error::contract(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::contract(e.to_string()))?;
    let mut conversations = Vec::with_capacity(spec.n_conversations);
    let mut embeddings = EmbeddingTable::new(spec.embed_dim)?;
    let mut truth = Vec::new();

    for c in 0..spec.n_conversations {
        let id = format!("syn{c:05}");
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mixture = dirichlet(&mut rng, spec.n_prototypes, spec.concentration);
        let mut utterances = Vec::with_capacity(len);
        let mut planted = Vec::with_capacity(len);
        for i in 0..len {
            let k = categorical(&mut rng, &mixture);
            let vector: Vec<f32> = prototypes[k]
                .iter()
                .map(|&p| (p + jitter.sample(&mut rng)) as f32)
                .collect();
            let uid = utterance_id(&id, i);
            embeddings.insert(uid.clone(), vector)?;
            let speaker = if i % 2 == 0 { Speaker::User } else { Speaker::System };
            let mut utt = Utterance::new(speaker, format!("prototype {k}"));
            if k == lowest && lowest != highest {
                utt = utt.labeled(UtteranceLabel::Bad);
            } else if k == highest && lowest != highest {
                utt = utt.labeled(UtteranceLabel::Good);
            }
            utterances.push(utt);
            planted.push(impacts[k]);
            truth.push(GroundTruth {
                utterance_id: uid,
                prototype: k,
                impact: impacts[k],
            });
        }
        let mean = planted.iter().sum::<f64>() / len as f64;
        let rating = (mean + noise.sample(&mut rng)).clamp(1.0, 5.0);
        conversations.push(Conversation {
            id,
            rating: Some(rating),
            utterances,
        });
    }

    Ok(SyntheticData {
        conversations,
        embeddings,
        truth,
        prototypes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_conversations: 60,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn rejects_single_prototype() {
        let spec = SyntheticSpec {
            n_prototypes: 1,
            ..small(0)
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_impact_gives_constant_rating() {
        let spec = SyntheticSpec {
            n_prototypes: 2,
            impacts: vec![4.0, 4.0],
            noise: 0.0,
            ..small(3)
        };
        let data = generate_synthetic(&spec).unwrap();
        assert!(data.conversations.iter().all(|c| c.rating == Some(4.0)));
    }

    #[test]
    fn pure_high_conversation_rates_five() {
        let spec = SyntheticSpec {
            n_prototypes: 2,
            impacts: vec![1.0, 5.0],
            noise: 0.0,
            ..small(4)
        };
        let data = generate_synthetic(&spec).unwrap();
        let mut seen_pure = 0;
        let mut t = 0;
        for conv in &data.conversations {
            let protos: Vec<usize> = data.truth[t..t + conv.utterances.len()].iter().map(|g| g.prototype).collect();
            t += conv.utterances.len();
            if protos.iter().all(|&k| k == 1) {
                assert_eq!(conv.rating, Some(5.0));
                seen_pure += 1;
            }
        }
        assert!(seen_pure > 0);
    }

    #[test]
    fn zero_noise_rating_is_mean_impact() {
        let spec = SyntheticSpec { noise: 0.0, ..small(5) };
        let data = generate_synthetic(&spec).unwrap();
        let mut t = 0;
        for conv in &data.conversations {
            let n = conv.utterances.len();
            let mean = data.truth[t..t + n].iter().map(|g| g.impact).sum::<f64>() / n as f64;
            t += n;
            assert_eq!(conv.rating, Some(mean));
        }
    }

    #[test]
    fn structure_and_determinism() {
        let spec = small(6);
        let a = generate_synthetic(&spec).unwrap();
        assert_eq!(a, generate_synthetic(&spec).unwrap());
        assert_ne!(a.conversations, generate_synthetic(&small(7)).unwrap().conversations);
        assert_eq!(a.conversations.len(), 60);
        assert_eq!(a.embeddings.len(), a.truth.len());
        for conv in &a.conversations {
            assert!((5..=20).contains(&conv.utterances.len()));
            let r = conv.rating.unwrap();
            assert!((1.0..=5.0).contains(&r));
        }
        for p in &a.prototypes {
            let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        for (g, conv_utt) in a.truth.iter().zip(a.conversations.iter().flat_map(|c| &c.utterances)) {
            let expected = match g.prototype {
                0 => Some(UtteranceLabel::Bad),
                7 => Some(UtteranceLabel::Good),
                _ => None,
            };
            assert_eq!(conv_utt.label, expected);
        }
    }

    #[test]
    fn toml_settings() {
        let spec = SyntheticSpec::from_toml("n_conversations = 10\nimpacts = [1.0, 2.0, 3.0]\nn_prototypes = 3").unwrap();
        assert_eq!(spec.n_conversations, 10);
        assert_eq!(spec.embed_dim, 16);
        assert!(SyntheticSpec::from_toml("n_convs = 10").is_err());
        assert!(SyntheticSpec::from_toml("n_prototypes = 1").is_err());
    }

    #[test]
    fn default_impacts_evenly_spaced() {
        let imp = SyntheticSpec::default().resolved_impacts();
        assert_eq!(imp.len(), 8);
        assert_eq!(imp[0], 1.0);
        assert_eq!(imp[7], 5.0);
    }
}
