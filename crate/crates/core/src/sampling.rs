//! Model-led review pairs: percentile cutoff, diversity sampling of issues with
//! k-means, random non-issue partners, blind ordering and context windows.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Conversation, EmbeddingTable, Speaker};
use crate::error::{Error, Result};
use crate::evaluation::PairJudgment;
use crate::model::ImpactReport;
use crate::rng;

pub const KMEANS_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileCutoff {
    pub threshold: f64,
    /// No score lies above the threshold, so the non-issue pool is empty.
    pub degenerate: bool,
}

/// Nearest-rank percentile: the `⌈pct/100 · n⌉`-th smallest score.
///
/// Scores `≤ threshold` form the issue pool, the rest the non-issue pool.
pub fn percentile_cutoff(scores: &[f64], pct: f64) -> Result<PercentileCutoff> {
    if scores.is_empty() {
        return Err(Error::DegenerateEvaluation("no scores for percentile cutoff".into()));
    }
    if !(pct > 0.0 && pct < 100.0) {
        return Err(Error::contract(format!("percentile {pct} must lie in (0, 100)")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DegenerateEvaluation("NaN score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((pct / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let threshold = sorted[rank - 1];
    Ok(PercentileCutoff {
        threshold,
        degenerate: sorted[n - 1] <= threshold,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = dist.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && target < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding and Euclidean distance.
///
/// Stops when no assignment changes or after [`KMEANS_MAX_ITERATIONS`].
/// A cluster that empties is re-seeded with the point farthest from its own
/// centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::contract(format!(
            "k = {k} must lie in 1..={} (number of points)",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::contract("points differ in dimension"));
    }
    let mut rng = rng::stream(seed, "kmeans");
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();

    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for empty in (0..k).filter(|&c| counts[c] == 0).collect::<Vec<_>>() {
            let far = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(&points[a], &centroids[assignments[a]]);
                    let db = sq_dist(&points[b], &centroids[assignments[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                });
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                assignments[i] = empty;
                counts[empty] = 1;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            if counts[c] > 0 {
                centroids[c] = sum.into_iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut inertia = 0.0;
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let (c, d) = nearest(p, &centroids);
                inertia += d;
                c
            })
            .collect();
        history.push(inertia);
        let converged = next == assignments;
        assignments = next;
        if converged {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        inertia_history: history,
    })
}

/// One line of a context window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLine {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
}

/// Up to two preceding and one following utterance around a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub preceding: Vec<ContextLine>,
    pub target: ContextLine,
    pub following: Vec<ContextLine>,
}

pub fn extract_context(conversation: &Conversation, index: usize) -> Result<ContextWindow> {
    let n = conversation.utterances.len();
    if index >= n {
        return Err(Error::contract(format!(
            "utterance index {index} out of range for conversation {} ({n} utterances)",
            conversation.id
        )));
    }
    let line = |i: usize| {
        let u = &conversation.utterances[i];
        ContextLine {
            index: i,
            speaker: u.speaker,
            text: u.text.clone(),
        }
    };
    Ok(ContextWindow {
        preceding: (index.saturating_sub(2)..index).map(line).collect(),
        target: line(index),
        following: (index + 1..(index + 2).min(n)).map(line).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMember {
    pub utterance_id: String,
    pub context: ContextWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewPair {
    pub pair_id: String,
    pub a: PairMember,
    pub b: PairMember,
    /// Which member the model scored low. Never part of the presentation.
    pub model_low: Side,
    pub issue_score: f64,
    pub non_issue_score: f64,
}

impl ReviewPair {
    pub fn issue(&self) -> &PairMember {
        match self.model_low {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn non_issue(&self) -> &PairMember {
        match self.model_low {
            Side::A => &self.b,
            Side::B => &self.a,
        }
    }

    pub fn presentation(&self) -> PresentationRecord {
        PresentationRecord {
            pair_id: self.pair_id.clone(),
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }

    pub fn key(&self) -> KeyRecord {
        KeyRecord {
            pair_id: self.pair_id.clone(),
            model_low: self.model_low,
            model_low_id: self.issue().utterance_id.clone(),
            model_high_id: self.non_issue().utterance_id.clone(),
        }
    }
}

/// Line of the presentation document shown to judges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresentationRecord {
    pub pair_id: String,
    pub a: PairMember,
    pub b: PairMember,
}

/// Line of the sealed key document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyRecord {
    pub pair_id: String,
    pub model_low: Side,
    pub model_low_id: String,
    pub model_high_id: String,
}

/// Line of a judgments file: the member the judge found worse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentRecord {
    pub pair_id: String,
    pub choice: Side,
}

/// Joins judgments with the sealed key. Pairs without a judgment are skipped.
pub fn join_judgments(key: &[KeyRecord], judgments: &[JudgmentRecord]) -> Result<Vec<PairJudgment>> {
    let by_id: HashMap<&str, &KeyRecord> = key.iter().map(|k| (k.pair_id.as_str(), k)).collect();
    let mut seen = HashSet::new();
    judgments
        .iter()
        .map(|j| {
            let k = by_id
                .get(j.pair_id.as_str())
                .ok_or_else(|| Error::integrity(format!("judgment for unknown pair {}", j.pair_id)))?;
            if !seen.insert(j.pair_id.as_str()) {
                return Err(Error::integrity(format!("pair {} judged twice", j.pair_id)));
            }
            let chosen_low = j.choice == k.model_low;
            Ok(PairJudgment {
                model_low_id: k.model_low_id.clone(),
                model_high_id: k.model_high_id.clone(),
                human_choice: if chosen_low { &k.model_low_id } else { &k.model_high_id }.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub n_pairs: usize,
    pub pct: f64,
    pub k_fraction: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_pairs: 300,
            pct: 5.0,
            k_fraction: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<ReviewPair>,
    pub threshold: f64,
    pub degenerate: bool,
    pub k: usize,
    pub n_issue: usize,
    pub n_non_issue: usize,
}

/// Number of clusters for an issue pool: `max(1, round(k_fraction · pool))`.
pub fn cluster_count(issue_pool: usize, k_fraction: f64) -> usize {
    ((k_fraction * issue_pool as f64).round() as usize).max(1)
}

struct Scored<'a> {
    conversation: &'a Conversation,
    index: usize,
    score: f64,
}

impl Scored<'_> {
    fn member(&self) -> Result<PairMember> {
        Ok(PairMember {
            utterance_id: self.conversation.utterance_id(self.index),
            context: extract_context(self.conversation, self.index)?,
        })
    }
}

/// Builds blind review pairs from scored conversations.
///
/// Issues are clustered on their pretrained embeddings; the utterance nearest
/// each centroid is a candidate, `n_pairs` candidates are drawn without
/// replacement, and each is paired with a distinct non-issue drawn uniformly.
pub fn sample_pairs(
    reports: &[ImpactReport],
    conversations: &[Conversation],
    embeddings: &EmbeddingTable,
    config: &SamplingConfig,
) -> Result<PairBatch> {
    if config.n_pairs == 0 {
        return Err(Error::contract("n_pairs must be positive"));
    }
    if !(config.k_fraction > 0.0 && config.k_fraction <= 1.0) {
        return Err(Error::contract(format!("k_fraction {} must lie in (0, 1]", config.k_fraction)));
    }
    let by_id: BTreeMap<&str, &Conversation> = conversations.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut scored = Vec::new();
    for report in reports {
        let conv = by_id.get(report.conversation_id.as_str()).ok_or_else(|| {
            Error::integrity(format!("no conversation for report {}", report.conversation_id))
        })?;
        for row in &report.utterances {
            if row.index >= conv.utterances.len() {
                return Err(Error::integrity(format!(
                    "report row {} out of range for conversation {}",
                    row.index, conv.id
                )));
            }
            scored.push(Scored {
                conversation: conv,
                index: row.index,
                score: row.s,
            });
        }
    }
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let cutoff = percentile_cutoff(&scores, config.pct)?;
    let (issues, non_issues): (Vec<&Scored>, Vec<&Scored>) =
        scored.iter().partition(|s| s.score <= cutoff.threshold);

    let k = cluster_count(issues.len(), config.k_fraction);
    if config.n_pairs > k {
        return Err(Error::contract(format!(
            "{} pairs requested but only {k} issue candidates (k = {} x {} issues); \
             request at most {k} pairs or raise k_fraction",
            config.n_pairs,
            config.k_fraction,
            issues.len()
        )));
    }
    if config.n_pairs > non_issues.len() {
        return Err(Error::contract(format!(
            "{} pairs requested but only {} non-issue utterances",
            config.n_pairs,
            non_issues.len()
        )));
    }

    let points = issues
        .iter()
        .map(|s| {
            let id = s.conversation.utterance_id(s.index);
            embeddings
                .get(&id)
                .map(|v| v.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>())
                .ok_or_else(|| Error::integrity(format!("missing embedding for utterance {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = kmeans(&points, k, rng::stream(config.seed, "sampling.kmeans").random())?;

    let mut representative: Vec<Option<(usize, f64)>> = vec![None; k];
    for (i, (p, &c)) in points.iter().zip(&clusters.assignments).enumerate() {
        let d = sq_dist(p, &clusters.centroids[c]);
        if representative[c].is_none_or(|(_, best)| d < best) {
            representative[c] = Some((i, d));
        }
    }
    let candidates: Vec<usize> = representative.into_iter().flatten().map(|(i, _)| i).collect();

    let mut issue_rng = rng::stream(config.seed, "sampling.issues");
    let mut partner_rng = rng::stream(config.seed, "sampling.non_issues");
    let mut order_rng = rng::stream(config.seed, "sampling.order");
    let chosen = index::sample(&mut issue_rng, candidates.len(), config.n_pairs);
    let partners = index::sample(&mut partner_rng, non_issues.len(), config.n_pairs);

    let mut pairs = Vec::with_capacity(config.n_pairs);
    for (n, (ci, pi)) in chosen.iter().zip(partners.iter()).enumerate() {
        let issue = issues[candidates[ci]];
        let partner = non_issues[pi];
        let (a, b, model_low) = if order_rng.random::<bool>() {
            (issue.member()?, partner.member()?, Side::A)
        } else {
            (partner.member()?, issue.member()?, Side::B)
        };
        pairs.push(ReviewPair {
            pair_id: format!("pair-{:04}", n + 1),
            a,
            b,
            model_low,
            issue_score: issue.score,
            non_issue_score: partner.score,
        });
    }
    Ok(PairBatch {
        pairs,
        threshold: cutoff.threshold,
        degenerate: cutoff.degenerate,
        k,
        n_issue: issues.len(),
        n_non_issue: non_issues.len(),
    })
}
