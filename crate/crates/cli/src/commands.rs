use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ara_core::data::{
    filter_min_utterances, generate_synthetic, preprocess, read_conversations, read_embeddings, read_jsonl, split,
    write_conversations, write_embeddings, write_jsonl, Conversation, EmbeddingTable, Lexicon, SyntheticSpec,
};
use ara_core::evaluation::{
    average_accuracy, c_index_scoped, cohens_kappa, pair_accuracy, pearson, ranked_utterances, IssueLabel,
    MetricsReport, SeedMetrics,
};
use ara_core::model::{load_model, save_model, ImpactReport, ModelParams};
use ara_core::sampling::{join_judgments, sample_pairs, JudgmentRecord, KeyRecord, SamplingConfig, Side};
use ara_core::training::{train, EpochRecord, TrainConfig};

use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, RunManifest};
use crate::{
    EmbedCheckArgs, EvalArgs, JudgeArgs, Metric, PairsArgs, PreprocessArgs, ScoreArgs, SplitArgs, SynthArgs, TrainArgs,
};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => create_dir(parent),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub conversations: usize,
    pub utterances: usize,
    pub out_dir: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<SynthSummary> {
    let mut spec = match &args.spec {
        Some(path) => SyntheticSpec::load(path)?,
        None => SyntheticSpec::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                spec.$field = v;
            }
        )*};
    }
    apply!(n_conversations, min_len, max_len, embed_dim, n_prototypes, impacts, noise, jitter, concentration, seed);

    let mut manifest = RunManifest::begin("synth", &spec, Some(spec.seed))?;
    if let Some(path) = &args.spec {
        manifest.input(path)?;
    }
    let data = generate_synthetic(&spec)?;
    create_dir(&args.out_dir)?;
    let conversations = args.out_dir.join("conversations.jsonl");
    let embeddings = args.out_dir.join("embeddings.ueb");
    let truth = args.out_dir.join("truth.jsonl");
    write_conversations(&conversations, &data.conversations)?;
    write_embeddings(&embeddings, &data.embeddings)?;
    write_jsonl(&truth, &data.truth)?;
    for path in [&conversations, &embeddings, &truth] {
        manifest.output(path);
    }
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(SynthSummary {
        conversations: data.conversations.len(),
        utterances: data.truth.len(),
        out_dir: args.out_dir.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub conversations_in: usize,
    pub conversations_out: usize,
    pub out: PathBuf,
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> CliResult<PreprocessSummary> {
    let mut manifest = RunManifest::begin("preprocess", args, None)?;
    manifest.input(&args.data)?;
    let lexicon = match &args.lexicon {
        Some(path) => {
            manifest.input(path)?;
            Lexicon::load(path)?
        }
        None => Lexicon::builtin(),
    };
    let input = read_conversations(&args.data)?;
    let processed: Vec<Conversation> = input.iter().map(|c| preprocess(c, args.profile, &lexicon)).collect();
    let kept = filter_min_utterances(processed, args.min_utterances);
    create_parent(&args.out)?;
    write_conversations(&args.out, &kept)?;
    manifest.output(&args.out);
    manifest.write(&sibling(&args.out, ".manifest.json"))?;
    Ok(PreprocessSummary {
        conversations_in: input.len(),
        conversations_out: kept.len(),
        out: args.out.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub out_dir: PathBuf,
}

pub fn cmd_split(args: &SplitArgs) -> CliResult<SplitSummary> {
    let mut manifest = RunManifest::begin("split", args, Some(args.seed))?;
    manifest.input(&args.data)?;
    let data = read_conversations(&args.data)?;
    let parts = split(&data, args.dev, args.test, args.seed)?;
    create_dir(&args.out_dir)?;
    for (name, rows) in [("train", &parts.train), ("dev", &parts.dev), ("test", &parts.test)] {
        let path = args.out_dir.join(format!("{name}.jsonl"));
        write_conversations(&path, rows)?;
        manifest.output(&path);
    }
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(SplitSummary {
        train: parts.train.len(),
        dev: parts.dev.len(),
        test: parts.test.len(),
        out_dir: args.out_dir.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedCheckSummary {
    pub dim: usize,
    pub count: usize,
    pub conversations_checked: usize,
    pub utterances_checked: usize,
}

/// Ensures every utterance of `conversations` has an embedding.
fn check_coverage(conversations: &[Conversation], table: &EmbeddingTable) -> CliResult<usize> {
    let mut missing = Vec::new();
    let mut checked = 0;
    for c in conversations {
        for i in 0..c.utterances.len() {
            checked += 1;
            let id = c.utterance_id(i);
            if table.get(&id).is_none() {
                missing.push(id);
            }
        }
    }
    match missing.as_slice() {
        [] => Ok(checked),
        [first, rest @ ..] => Err(ara_core::Error::Integrity(format!(
            "missing embedding for utterance {first}{}",
            if rest.is_empty() { String::new() } else { format!(" (and {} more)", rest.len()) }
        ))
        .into()),
    }
}

pub fn cmd_embed_check(args: &EmbedCheckArgs) -> CliResult<EmbedCheckSummary> {
    let table = read_embeddings(&args.embeddings)?;
    let (conversations_checked, utterances_checked) = match &args.data {
        Some(path) => {
            let conversations = read_conversations(path)?;
            (conversations.len(), check_coverage(&conversations, &table)?)
        }
        None => (0, 0),
    };
    Ok(EmbedCheckSummary {
        dim: table.dim(),
        count: table.len(),
        conversations_checked,
        utterances_checked,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub history: PathBuf,
    pub manifest: PathBuf,
    pub epoch_selected: usize,
    pub epochs_run: usize,
    pub best_dev_pearson: Option<f64>,
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    variant: String,
    data: &'a Path,
    dev: &'a Path,
    embeddings: &'a Path,
    init: Option<&'a Path>,
    train: &'a TrainConfig,
}

fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<TrainConfig> {
    let mut config = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let config = resolve_config(args.config.as_deref(), args.seed)?;
    let resolved = ResolvedTrain {
        variant: args.variant.to_string(),
        data: &args.data,
        dev: &args.dev,
        embeddings: &args.embeddings,
        init: args.init.as_deref(),
        train: &config,
    };
    let mut manifest = RunManifest::begin("train", &resolved, Some(config.seed))?;
    let table = read_embeddings(&args.embeddings)?;
    let train_set = read_conversations(&args.data)?;
    let dev_set = read_conversations(&args.dev)?;
    let init: Option<ModelParams> = args.init.as_deref().map(load_model).transpose()?;
    for path in [Some(&args.data), Some(&args.dev), Some(&args.embeddings), args.config.as_ref(), args.init.as_ref()]
        .into_iter()
        .flatten()
    {
        manifest.input(path)?;
    }

    let model = train(args.variant, &train_set, &dev_set, &table, &config, init.as_ref())?;
    create_parent(&args.out)?;
    save_model(&args.out, &model.params)?;
    let history = sibling(&args.out, ".history.jsonl");
    write_jsonl::<EpochRecord>(&history, &model.history)?;
    manifest.output(&args.out);
    manifest.output(&history);
    let manifest_path = manifest.write(&sibling(&args.out, ".manifest.json"))?;
    Ok(TrainSummary {
        model: args.out.clone(),
        history,
        manifest: manifest_path,
        epoch_selected: model.epoch_selected,
        epochs_run: model.history.len(),
        best_dev_pearson: model.best_dev_pearson,
    })
}

fn score_all(params: &ModelParams, conversations: &[Conversation], table: &EmbeddingTable) -> CliResult<Vec<ImpactReport>> {
    conversations
        .iter()
        .map(|c| Ok(params.forward(&c.embedding_matrix(table)?)?.with_id(&c.id)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub conversations: usize,
    pub utterances: usize,
    pub out: PathBuf,
}

pub fn cmd_score(args: &ScoreArgs) -> CliResult<ScoreSummary> {
    let mut manifest = RunManifest::begin("score", args, None)?;
    let params = load_model(&args.model)?;
    let table = read_embeddings(&args.embeddings)?;
    let conversations = read_conversations(&args.data)?;
    for path in [&args.model, &args.data, &args.embeddings] {
        manifest.input(path)?;
    }
    let reports = score_all(&params, &conversations, &table)?;
    create_parent(&args.out)?;
    write_jsonl(&args.out, &reports)?;
    manifest.output(&args.out);
    manifest.write(&sibling(&args.out, ".manifest.json"))?;
    Ok(ScoreSummary {
        conversations: reports.len(),
        utterances: reports.iter().map(|r| r.utterances.len()).sum(),
        out: args.out.clone(),
    })
}

struct Evaluated {
    pearson: Option<f64>,
    c_index: Option<f64>,
    n_issue: usize,
    n_non_issue: usize,
}

fn evaluate_reports(
    reports: &[ImpactReport],
    conversations: &[Conversation],
    args: &EvalArgs,
    source: &Path,
) -> CliResult<Evaluated> {
    let by_id: BTreeMap<&str, &ImpactReport> = reports.iter().map(|r| (r.conversation_id.as_str(), r)).collect();
    let mut pearson_value = None;
    if args.metrics.contains(&Metric::Pearson) {
        let (predicted, target): (Vec<f64>, Vec<f64>) = conversations
            .iter()
            .filter_map(|c| Some((by_id.get(c.id.as_str())?.q, c.rating?)))
            .unzip();
        if predicted.is_empty() {
            return Err(CliError::Usage(format!(
                "no rated conversations with scores in {}; Pearson needs ratings (drop it with --metrics c-index)",
                source.display()
            )));
        }
        pearson_value = pearson(&predicted, &target).ok();
    }
    let ranked = ranked_utterances(reports, conversations)?;
    let n_issue = ranked.iter().filter(|r| r.label == IssueLabel::Issue).count();
    let n_non_issue = ranked.len() - n_issue;
    let mut c_index = None;
    if args.metrics.contains(&Metric::CIndex) {
        if n_issue == 0 || n_non_issue == 0 {
            return Err(CliError::Usage(format!(
                "C-Index needs both bad and good utterance labels in {}; found {n_issue} bad and {n_non_issue} good \
                 (drop it with --metrics pearson)",
                source.display()
            )));
        }
        c_index = Some(c_index_scoped(&ranked, args.scope)?);
    }
    Ok(Evaluated {
        pearson: pearson_value,
        c_index,
        n_issue,
        n_non_issue,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<MetricsReport> {
    if args.metrics.is_empty() {
        return Err(CliError::Usage("--metrics must name at least one metric".into()));
    }
    let mut manifest = RunManifest::begin("eval", args, None)?;
    let mut per_seed = Vec::new();
    let (variant, dataset, counts);

    if !args.report.is_empty() {
        let data = args
            .data
            .as_ref()
            .ok_or_else(|| CliError::Usage("--report needs --data with the scored conversations".into()))?;
        let seeds: Vec<u64> = if args.seeds.is_empty() {
            (0..args.report.len() as u64).collect()
        } else if args.seeds.len() == args.report.len() {
            args.seeds.clone()
        } else {
            return Err(CliError::Usage(format!(
                "{} seeds given for {} reports",
                args.seeds.len(),
                args.report.len()
            )));
        };
        let conversations = read_conversations(data)?;
        manifest.input(data)?;
        let mut last = (0, 0);
        for (path, seed) in args.report.iter().zip(seeds) {
            let reports: Vec<ImpactReport> = read_jsonl(path)?;
            manifest.input(path)?;
            let e = evaluate_reports(&reports, &conversations, args, data)?;
            last = (e.n_issue, e.n_non_issue);
            per_seed.push(SeedMetrics {
                seed,
                pearson_dev: None,
                pearson_test: e.pearson,
                c_index: e.c_index,
            });
        }
        variant = "report".to_string();
        dataset = file_name(data);
        counts = last;
    } else {
        let need = |p: &Option<PathBuf>, flag: &str| {
            p.clone()
                .ok_or_else(|| CliError::Usage(format!("eval needs --report, or --variant with {flag}")))
        };
        let v = args
            .variant
            .ok_or_else(|| CliError::Usage("eval needs --report files or a --variant to train".into()))?;
        let (train_path, dev_path, test_path, emb_path) = (
            need(&args.train, "--train")?,
            need(&args.dev, "--dev")?,
            need(&args.test, "--test")?,
            need(&args.embeddings, "--embeddings")?,
        );
        let base = resolve_config(args.config.as_deref(), None)?;
        let table = read_embeddings(&emb_path)?;
        let train_set = read_conversations(&train_path)?;
        let dev_set = read_conversations(&dev_path)?;
        let test_set = read_conversations(&test_path)?;
        for path in [Some(&train_path), Some(&dev_path), Some(&test_path), Some(&emb_path), args.config.as_ref()]
            .into_iter()
            .flatten()
        {
            manifest.input(path)?;
        }
        let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
        let mut last = (0, 0);
        for seed in seeds {
            let config = TrainConfig { seed, ..base.clone() };
            let model = train(v, &train_set, &dev_set, &table, &config, None)?;
            let reports = score_all(&model.params, &test_set, &table)?;
            let e = evaluate_reports(&reports, &test_set, args, &test_path)?;
            last = (e.n_issue, e.n_non_issue);
            per_seed.push(SeedMetrics {
                seed,
                pearson_dev: model.best_dev_pearson,
                pearson_test: e.pearson,
                c_index: e.c_index,
            });
        }
        variant = v.to_string();
        dataset = file_name(&test_path);
        counts = last;
    }

    let report = MetricsReport::summarize(variant, dataset, "test", counts.0, counts.1, per_seed);
    if let Some(out) = &args.out {
        create_parent(out)?;
        write_json(out, &report)?;
        manifest.output(out);
        manifest.write(&sibling(out, ".manifest.json"))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsSummary {
    pub pairs: usize,
    pub threshold: f64,
    pub degenerate: bool,
    pub k: usize,
    pub n_issue: usize,
    pub n_non_issue: usize,
    pub presentation: PathBuf,
    pub key: PathBuf,
}

pub fn cmd_pairs(args: &PairsArgs) -> CliResult<PairsSummary> {
    let mut manifest = RunManifest::begin("pairs", args, Some(args.seed))?;
    let reports: Vec<ImpactReport> = read_jsonl(&args.report)?;
    let conversations = read_conversations(&args.data)?;
    let table = read_embeddings(&args.embeddings)?;
    for path in [&args.report, &args.data, &args.embeddings] {
        manifest.input(path)?;
    }
    let config = SamplingConfig {
        n_pairs: args.n,
        pct: args.pct,
        k_fraction: args.k_fraction,
        seed: args.seed,
    };
    let batch = sample_pairs(&reports, &conversations, &table, &config)?;
    if batch.degenerate {
        eprintln!(
            "warning: no impact score lies above the threshold {}; the non-issue pool is empty",
            batch.threshold
        );
    }
    create_dir(&args.out_dir)?;
    let presentation = args.out_dir.join("presentation.jsonl");
    let key = args.out_dir.join("key.jsonl");
    let shown: Vec<_> = batch.pairs.iter().map(|p| p.presentation()).collect();
    let sealed: Vec<_> = batch.pairs.iter().map(|p| p.key()).collect();
    write_jsonl(&presentation, &shown)?;
    write_jsonl(&key, &sealed)?;
    manifest.output(&presentation);
    manifest.output(&key);
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(PairsSummary {
        pairs: batch.pairs.len(),
        threshold: batch.threshold,
        degenerate: batch.degenerate,
        k: batch.k,
        n_issue: batch.n_issue,
        n_non_issue: batch.n_non_issue,
        presentation,
        key,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorAccuracy {
    pub judgments: PathBuf,
    pub judged: usize,
    pub accuracy: f64,
}

/// Cohen's kappa between two annotators over the pairs both judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorAgreement {
    pub a: PathBuf,
    pub b: PathBuf,
    pub common: usize,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub annotators: Vec<AnnotatorAccuracy>,
    pub average_accuracy: f64,
    pub agreement: Vec<AnnotatorAgreement>,
}

pub fn cmd_judge(args: &JudgeArgs) -> CliResult<JudgeReport> {
    let mut manifest = RunManifest::begin("judge", args, None)?;
    let key: Vec<KeyRecord> = read_jsonl(&args.key)?;
    manifest.input(&args.key)?;
    let mut annotators = Vec::new();
    let mut choices: Vec<BTreeMap<String, Side>> = Vec::new();
    for path in &args.judgments {
        let records: Vec<JudgmentRecord> = read_jsonl(path)?;
        manifest.input(path)?;
        let joined = join_judgments(&key, &records)?;
        annotators.push(AnnotatorAccuracy {
            judgments: path.clone(),
            judged: joined.len(),
            accuracy: pair_accuracy(&joined)?,
        });
        choices.push(records.into_iter().map(|r| (r.pair_id, r.choice)).collect());
    }
    let accuracies: Vec<f64> = annotators.iter().map(|a| a.accuracy).collect();
    let average = average_accuracy(&accuracies)?;

    let mut agreement = Vec::new();
    for i in 0..choices.len() {
        for j in i + 1..choices.len() {
            let (a, b): (Vec<bool>, Vec<bool>) = choices[i]
                .iter()
                .filter_map(|(id, &ca)| choices[j].get(id).map(|&cb| (ca == Side::A, cb == Side::A)))
                .unzip();
            agreement.push(AnnotatorAgreement {
                a: args.judgments[i].clone(),
                b: args.judgments[j].clone(),
                common: a.len(),
                kappa: cohens_kappa(&a, &b).ok(),
            });
        }
    }
    let report = JudgeReport {
        annotators,
        average_accuracy: average,
        agreement,
    };
    if let Some(out) = &args.out {
        create_parent(out)?;
        write_json(out, &report)?;
        manifest.output(out);
        manifest.write(&sibling(out, ".manifest.json"))?;
    }
    Ok(report)
}
