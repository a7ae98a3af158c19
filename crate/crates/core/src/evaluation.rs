//! Correlation, ranking and agreement metrics.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Conversation, UtteranceLabel};
use crate::error::{Error, Result};
use crate::model::ImpactReport;

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "pearson length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueLabel {
    Issue,
    NonIssue,
}

impl From<UtteranceLabel> for IssueLabel {
    fn from(label: UtteranceLabel) -> Self {
        match label {
            UtteranceLabel::Bad => IssueLabel::Issue,
            UtteranceLabel::Good => IssueLabel::NonIssue,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedUtterance {
    pub utterance_id: String,
    pub score: f64,
    pub label: IssueLabel,
}

impl RankedUtterance {
    /// Conversation part of an `<conversation_id>:<index>` id.
    pub fn conversation_id(&self) -> &str {
        self.utterance_id
            .rsplit_once(':')
            .map_or(self.utterance_id.as_str(), |(c, _)| c)
    }
}

/// Which (issue, non-issue) pairs a C-Index compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairScope {
    /// Every issue against every non-issue in the dataset.
    #[default]
    Global,
    /// Only pairs within the same conversation.
    Conversation,
}

impl FromStr for PairScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(PairScope::Global),
            "conversation" => Ok(PairScope::Conversation),
            _ => Err(Error::Config(format!("unknown scope {s:?} (expected global or conversation)"))),
        }
    }
}

/// Concordance counts in half-units so ties stay exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Concordance {
    half_credit: u64,
    pairs: u64,
}

impl Concordance {
    fn add(&mut self, other: Concordance) {
        self.half_credit += other.half_credit;
        self.pairs += other.pairs;
    }

    fn value(self) -> f64 {
        self.half_credit as f64 / (2.0 * self.pairs as f64)
    }
}

fn concordance(issues: &[f64], non_issues: &[f64]) -> Concordance {
    let mut sorted = non_issues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut half_credit = 0u64;
    for &s in issues {
        let below_or_equal = sorted.partition_point(|&v| v <= s);
        let below = sorted.partition_point(|&v| v < s);
        let greater = (sorted.len() - below_or_equal) as u64;
        let ties = (below_or_equal - below) as u64;
        half_credit += 2 * greater + ties;
    }
    Concordance {
        half_credit,
        pairs: (issues.len() * non_issues.len()) as u64,
    }
}

fn split_scores<'a>(entries: impl Iterator<Item = &'a RankedUtterance>) -> (Vec<f64>, Vec<f64>) {
    let mut issues = Vec::new();
    let mut non_issues = Vec::new();
    for e in entries {
        match e.label {
            IssueLabel::Issue => issues.push(e.score),
            IssueLabel::NonIssue => non_issues.push(e.score),
        }
    }
    (issues, non_issues)
}

/// Fraction of (issue, non-issue) pairs where the non-issue scores higher,
/// with half credit for exact ties. Runs in `O(n log n)`.
pub fn c_index(entries: &[RankedUtterance]) -> Result<f64> {
    c_index_scoped(entries, PairScope::Global)
}

pub fn c_index_scoped(entries: &[RankedUtterance], scope: PairScope) -> Result<f64> {
    if entries.iter().any(|e| e.score.is_nan()) {
        return Err(Error::DegenerateEvaluation("NaN score".into()));
    }
    let total = match scope {
        PairScope::Global => {
            let (issues, non_issues) = split_scores(entries.iter());
            concordance(&issues, &non_issues)
        }
        PairScope::Conversation => {
            let mut groups: BTreeMap<&str, Vec<&RankedUtterance>> = BTreeMap::new();
            for e in entries {
                groups.entry(e.conversation_id()).or_default().push(e);
            }
            let mut total = Concordance::default();
            for group in groups.values() {
                let (issues, non_issues) = split_scores(group.iter().copied());
                total.add(concordance(&issues, &non_issues));
            }
            total
        }
    };
    if total.pairs == 0 {
        return Err(Error::DegenerateEvaluation(
            "no (issue, non-issue) pairs to compare".into(),
        ));
    }
    Ok(total.value())
}

/// Keeps labels both annotators agree on; disagreements become `None`.
pub fn agreed_labels(a: &[Option<IssueLabel>], b: &[Option<IssueLabel>]) -> Result<Vec<Option<IssueLabel>>> {
    if a.len() != b.len() {
        return Err(Error::contract("annotation sequences differ in length"));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { *x } else { None })
        .collect())
}

/// Joins impact reports with the labeled utterances of `conversations`.
///
/// The ranking score is the impact `s`; for the baseline this is its raw
/// prediction since its weights are 1. Conversations without a report are skipped.
pub fn ranked_utterances(reports: &[ImpactReport], conversations: &[Conversation]) -> Result<Vec<RankedUtterance>> {
    let by_id: BTreeMap<&str, &ImpactReport> =
        reports.iter().map(|r| (r.conversation_id.as_str(), r)).collect();
    let mut out = Vec::new();
    for conv in conversations {
        let Some(report) = by_id.get(conv.id.as_str()) else {
            continue;
        };
        if report.utterances.len() != conv.utterances.len() {
            return Err(Error::integrity(format!(
                "report for {} has {} utterances, conversation has {}",
                conv.id,
                report.utterances.len(),
                conv.utterances.len()
            )));
        }
        for (row, utt) in report.utterances.iter().zip(&conv.utterances) {
            if let Some(label) = utt.label {
                out.push(RankedUtterance {
                    utterance_id: conv.utterance_id(row.index),
                    score: row.s,
                    label: label.into(),
                });
            }
        }
    }
    Ok(out)
}

/// One human decision on a model-constructed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairJudgment {
    pub model_low_id: String,
    pub model_high_id: String,
    /// Id of the member the human judged worse.
    pub human_choice: String,
}

/// Fraction of judgments where the human picked the model's low member.
pub fn pair_accuracy(judgments: &[PairJudgment]) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::DegenerateEvaluation("no judgments".into()));
    }
    let agree = judgments
        .iter()
        .filter(|j| j.human_choice == j.model_low_id)
        .count();
    Ok(agree as f64 / judgments.len() as f64)
}

/// Mean of per-annotator accuracies.
pub fn average_accuracy(per_annotator: &[f64]) -> Result<f64> {
    if per_annotator.is_empty() {
        return Err(Error::DegenerateEvaluation("no annotators".into()));
    }
    Ok(per_annotator.iter().sum::<f64>() / per_annotator.len() as f64)
}

/// Cohen's kappa for two binary label sequences.
pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "kappa length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptySequence("cohens_kappa"));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let p_o = agree / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::UndefinedKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Per-seed metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub pearson_dev: Option<f64>,
    pub pearson_test: Option<f64>,
    pub c_index: Option<f64>,
}

/// Metrics document written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub dataset: String,
    pub split: String,
    pub pearson_dev: Option<f64>,
    pub pearson_test: Option<f64>,
    pub c_index: Option<f64>,
    pub n_issue: usize,
    pub n_non_issue: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedMetrics>,
}

impl MetricsReport {
    /// Fills the top-level values with the means over `per_seed`.
    pub fn summarize(
        variant: impl Into<String>,
        dataset: impl Into<String>,
        split: impl Into<String>,
        n_issue: usize,
        n_non_issue: usize,
        per_seed: Vec<SeedMetrics>,
    ) -> Self {
        fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let v: Vec<f64> = values.flatten().collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        }
        MetricsReport {
            variant: variant.into(),
            dataset: dataset.into(),
            split: split.into(),
            pearson_dev: mean(per_seed.iter().map(|s| s.pearson_dev)),
            pearson_test: mean(per_seed.iter().map(|s| s.pearson_test)),
            c_index: mean(per_seed.iter().map(|s| s.c_index)),
            n_issue,
            n_non_issue,
            seeds: per_seed.iter().map(|s| s.seed).collect(),
            per_seed,
        }
    }
}
