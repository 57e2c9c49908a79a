//! Five-fold cross-validation of the graph model against the dense baseline.
//!
//! Each (repetition, fold) task builds prototypes from its training folds,
//! trains both models from the same seed, picks a decision threshold, then
//! scores the held-out fold while timing every prediction.

use super::metrics::{
    confusion, mcc_optimal_threshold, metrics, roc_auc, roc_curve, ThresholdPolicy,
};
use crate::checkpoint::{Checkpoint, FnnCheckpoint, GnnCheckpoint};
use crate::dataset::{
    build_folds, extract_features, role_prototypes, FeatureMode, FoldSplit, Prototypes,
    SequenceRecord,
};
use crate::gnn::{GnnModel, GnnShape};
use crate::graph::{build_instance, FeatureVector, GraphInstance, Role, TopologyTemplate};
use crate::learn::{fnn_init, train as train_gnn, train_fnn, Hyperparams, TrainHistory};
use crate::Error;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "GNN")]
    Gnn,
    #[serde(rename = "FNN")]
    Fnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gnn => "GNN",
            ModelKind::Fnn => "FNN",
        }
    }

    pub fn file_tag(self) -> &'static str {
        match self {
            ModelKind::Gnn => "gnn",
            ModelKind::Fnn => "fnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSelection {
    Gnn,
    Fnn,
    #[default]
    Both,
}

impl ModelSelection {
    pub fn includes(self, kind: ModelKind) -> bool {
        matches!(
            (self, kind),
            (ModelSelection::Both, _)
                | (ModelSelection::Gnn, ModelKind::Gnn)
                | (ModelSelection::Fnn, ModelKind::Fnn)
        )
    }
}

impl std::str::FromStr for ModelSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gnn" => Ok(Self::Gnn),
            "fnn" => Ok(Self::Fnn),
            "both" => Ok(Self::Both),
            _ => Err(format!("unknown model selection {s:?}")),
        }
    }
}

/// Architecture and feature settings shared by both models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub state_dim: usize,
    pub feature_mode: FeatureMode,
    pub transition_hidden: usize,
    pub readout_hidden: usize,
    pub fnn_hidden: usize,
    pub template: TopologyTemplate,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 8,
            feature_mode: FeatureMode::Composition,
            transition_hidden: 16,
            readout_hidden: 16,
            fnn_hidden: 16,
            template: TopologyTemplate::star(),
        }
    }
}

impl ModelConfig {
    pub fn gnn_shape(&self) -> GnnShape {
        GnnShape {
            state_dim: self.state_dim,
            feature_dim: self.feature_mode.dim(),
            transition_hidden: self.transition_hidden,
            readout_hidden: self.readout_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub model: ModelConfig,
    /// `hp.seed` is replaced by the repetition seed.
    pub hp: Hyperparams,
    pub seed: u64,
    pub folds: usize,
    pub repetitions: usize,
    pub threshold_policy: ThresholdPolicy,
    pub fixed_threshold: f64,
    pub models: ModelSelection,
    /// Maximum number of (repetition, fold) tasks run at once.
    pub jobs: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            hp: Hyperparams::default(),
            seed: 0,
            folds: 5,
            repetitions: 1,
            threshold_policy: ThresholdPolicy::Fixed,
            fixed_threshold: 0.5,
            models: ModelSelection::Both,
            jobs: 1,
        }
    }
}

impl CvConfig {
    pub fn repetition_seed(&self, repetition: usize) -> u64 {
        self.seed.wrapping_add(repetition as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub repetition: usize,
    pub fold: usize,
    pub model: ModelKind,
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: f64,
    pub train_wall_ms: u64,
    pub mean_predict_us: f64,
}

/// Metrics restricted to one receptor family's test positives plus all test negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub fold: usize,
    pub model: ModelKind,
    pub role: Role,
    pub positives: usize,
    pub negatives: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub mcc: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub id: String,
    pub role: Role,
    pub label: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub report: MetricsReport,
    pub scores: Vec<ScoredRecord>,
    pub roc: Vec<(f64, f64)>,
    pub families: Vec<FamilyReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub prototypes: Prototypes,
    pub runs: Vec<ModelRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionOutcome {
    pub repetition: usize,
    pub seed: u64,
    pub split: FoldSplit,
    pub folds: Vec<FoldOutcome>,
}

impl RepetitionOutcome {
    pub fn reports(&self) -> impl Iterator<Item = &MetricsReport> {
        self.folds.iter().flat_map(|f| f.runs.iter().map(|r| &r.report))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub sensitivity: Stat,
    pub specificity: Stat,
    pub accuracy: Stat,
    pub mcc: Stat,
    pub auc: Stat,
    pub threshold: Stat,
}

impl ModelSummary {
    fn of(reports: &[&MetricsReport]) -> Self {
        let stat = |f: fn(&MetricsReport) -> f64| Stat::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            sensitivity: stat(|r| r.sensitivity),
            specificity: stat(|r| r.specificity),
            accuracy: stat(|r| r.accuracy),
            mcc: stat(|r| r.mcc),
            auc: stat(|r| r.auc),
            threshold: stat(|r| r.threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub seed: u64,
    pub models: BTreeMap<ModelKind, ModelSummary>,
}

/// Timing-free aggregate over all folds and repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub seed: u64,
    pub folds: usize,
    pub repetitions: usize,
    pub records: usize,
    pub models: BTreeMap<ModelKind, ModelSummary>,
    pub per_repetition: Vec<RepetitionSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub train_wall_ms: Stat,
    pub mean_predict_us: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub repetitions: Vec<RepetitionOutcome>,
    pub summary: CvSummary,
}

impl CvOutcome {
    pub fn reports(&self) -> impl Iterator<Item = &MetricsReport> {
        self.repetitions.iter().flat_map(|r| r.reports())
    }

    pub fn timing(&self) -> BTreeMap<ModelKind, TimingSummary> {
        let mut by_model: BTreeMap<ModelKind, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in self.reports() {
            let e = by_model.entry(r.model).or_default();
            e.0.push(r.train_wall_ms as f64);
            e.1.push(r.mean_predict_us);
        }
        by_model
            .into_iter()
            .map(|(k, (t, p))| {
                (
                    k,
                    TimingSummary {
                        train_wall_ms: Stat::of(&t),
                        mean_predict_us: Stat::of(&p),
                    },
                )
            })
            .collect()
    }
}

/// Per-fold CSV: `fold,model,threshold,sens,spec,acc,mcc,auc,train_wall_ms,mean_predict_us`.
pub fn reports_csv<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> String {
    let mut out = String::from("fold,model,threshold,sens,spec,acc,mcc,auc,train_wall_ms,mean_predict_us\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.fold,
            r.model,
            r.threshold,
            r.sensitivity,
            r.specificity,
            r.accuracy,
            r.mcc,
            r.auc,
            r.train_wall_ms,
            r.mean_predict_us
        );
    }
    out
}

pub fn families_csv<'a>(reports: impl IntoIterator<Item = &'a FamilyReport>) -> String {
    let mut out = String::from("fold,model,role,positives,negatives,sens,spec,acc,mcc,auc\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.fold, r.model, r.role, r.positives, r.negatives, r.sensitivity, r.specificity, r.accuracy, r.mcc, r.auc
        );
    }
    out
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// `fold,model,id,role,label,score` for every held-out prediction.
pub fn scores_csv(folds: &[FoldOutcome]) -> String {
    let mut out = String::from("fold,model,id,role,label,score\n");
    for f in folds {
        for run in &f.runs {
            for s in &run.scores {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    f.fold,
                    run.report.model,
                    s.id,
                    s.role,
                    u8::from(s.label),
                    s.score
                );
            }
        }
    }
    out
}

/// A trained model ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub train_wall_ms: u64,
}

/// Trains one model on `train` and fixes its decision threshold.
///
/// Graph prototypes come from `train` only. Under [`ThresholdPolicy::MccOpt`]
/// the threshold maximizes MCC over the training scores.
pub fn fit(
    kind: ModelKind,
    train: &[&SequenceRecord],
    model: &ModelConfig,
    hp: &Hyperparams,
    policy: ThresholdPolicy,
    fixed_threshold: f64,
) -> Result<Fitted, Error> {
    let mode = model.feature_mode;
    let features = train
        .iter()
        .map(|r| extract_features(r, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<bool> = train.iter().map(|r| r.label()).collect();
    let (mut checkpoint, history, train_wall_ms) = match kind {
        ModelKind::Gnn => {
            let prototypes = role_prototypes(train, &model.template.feeder_roles(), mode)?.by_role;
            let graphs = features
                .iter()
                .zip(&labels)
                .map(|(f, &y)| build_instance(f, &prototypes, &model.template, Some(y)))
                .collect::<Result<Vec<GraphInstance>, _>>()?;
            let init = GnnModel::init(model.gnn_shape(), hp.seed)?;
            let start = Instant::now();
            let (trained, history) = train_gnn(init, &graphs, hp)?;
            let ms = start.elapsed().as_millis() as u64;
            let ck = Checkpoint::Gnn(GnnCheckpoint {
                model: trained,
                prototypes: Some(prototypes),
                template: Some(model.template.clone()),
                threshold: None,
            });
            (ck, history, ms)
        }
        ModelKind::Fnn => {
            let data: Vec<(FeatureVector, bool)> = features.iter().cloned().zip(labels.iter().copied()).collect();
            let init = fnn_init(mode.dim(), model.fnn_hidden, hp.seed)?;
            let start = Instant::now();
            let (net, history) = train_fnn(init, &data, hp)?;
            let ms = start.elapsed().as_millis() as u64;
            (Checkpoint::Fnn(FnnCheckpoint { net, threshold: None }), history, ms)
        }
    };
    let threshold = match policy {
        ThresholdPolicy::Fixed => fixed_threshold,
        ThresholdPolicy::MccOpt => {
            let control = hp.convergence();
            let scores = features
                .iter()
                .map(|f| checkpoint.score(f, control))
                .collect::<Result<Vec<_>, _>>()?;
            mcc_optimal_threshold(&scores, &labels)?
        }
    };
    match &mut checkpoint {
        Checkpoint::Gnn(c) => c.threshold = Some(threshold),
        Checkpoint::Fnn(c) => c.threshold = Some(threshold),
    }
    Ok(Fitted {
        checkpoint,
        history,
        train_wall_ms,
    })
}

fn evaluate_scores(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<(super::metrics::Metrics, f64), Error> {
    let m = metrics(&confusion(scores, labels, threshold)?)?;
    let auc = roc_auc(scores, labels)?;
    Ok((m, auc))
}

fn family_reports(
    fold: usize,
    model: ModelKind,
    scores: &[ScoredRecord],
    threshold: f64,
) -> Result<Vec<FamilyReport>, Error> {
    let negatives: Vec<&ScoredRecord> = scores.iter().filter(|s| !s.label).collect();
    let mut out = Vec::new();
    if negatives.is_empty() {
        return Ok(out);
    }
    for role in Role::FAMILIES {
        let pos: Vec<&ScoredRecord> = scores.iter().filter(|s| s.label && s.role == role).collect();
        if pos.is_empty() {
            continue;
        }
        let subset: Vec<&ScoredRecord> = pos.iter().chain(&negatives).copied().collect();
        let sc: Vec<f64> = subset.iter().map(|s| s.score).collect();
        let lb: Vec<bool> = subset.iter().map(|s| s.label).collect();
        let (m, auc) = evaluate_scores(&sc, &lb, threshold)?;
        out.push(FamilyReport {
            fold,
            model,
            role,
            positives: pos.len(),
            negatives: negatives.len(),
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            accuracy: m.accuracy,
            mcc: m.mcc,
            auc,
        });
    }
    Ok(out)
}

fn run_model(
    cfg: &CvConfig,
    hp: &Hyperparams,
    kind: ModelKind,
    repetition: usize,
    fold: usize,
    train: &[&SequenceRecord],
    test: &[&SequenceRecord],
) -> Result<ModelRun, Error> {
    let fitted = fit(kind, train, &cfg.model, hp, cfg.threshold_policy, cfg.fixed_threshold)?;
    let threshold = fitted.checkpoint.threshold().unwrap_or(cfg.fixed_threshold);
    let control = hp.convergence();
    let mut test_scores = Vec::with_capacity(test.len());
    let mut total_us = 0.0;
    for r in test {
        let t0 = Instant::now();
        let f = extract_features(r, cfg.model.feature_mode)?;
        let p = fitted.checkpoint.score(&f, control)?;
        total_us += t0.elapsed().as_secs_f64() * 1e6;
        test_scores.push(p);
    }

    let labels: Vec<bool> = test.iter().map(|r| r.label()).collect();
    let (m, auc) = evaluate_scores(&test_scores, &labels, threshold)?;
    let roc = roc_curve(&test_scores, &labels)?;
    let scores: Vec<ScoredRecord> = test
        .iter()
        .zip(&test_scores)
        .map(|(r, s)| ScoredRecord {
            id: r.id().to_string(),
            role: r.role(),
            label: r.label(),
            score: *s,
        })
        .collect();
    let families = family_reports(fold, kind, &scores, threshold)?;
    Ok(ModelRun {
        checkpoint: fitted.checkpoint,
        history: fitted.history,
        report: MetricsReport {
            repetition,
            fold,
            model: kind,
            threshold,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            accuracy: m.accuracy,
            mcc: m.mcc,
            auc,
            train_wall_ms: fitted.train_wall_ms,
            mean_predict_us: total_us / test.len() as f64,
        },
        scores,
        roc,
        families,
    })
}

fn run_fold(
    cfg: &CvConfig,
    records: &[SequenceRecord],
    repetition: usize,
    split: &FoldSplit,
    fold: usize,
) -> Result<FoldOutcome, Error> {
    let (train, test) = split.partition(records, fold);
    let prototypes = role_prototypes(&train, &cfg.model.template.feeder_roles(), cfg.model.feature_mode)
        .map_err(|e| Error::from(e).in_fold(fold))?;
    let hp = Hyperparams {
        seed: cfg.repetition_seed(repetition),
        ..cfg.hp
    };
    let mut runs = Vec::new();
    for kind in [ModelKind::Gnn, ModelKind::Fnn] {
        if cfg.models.includes(kind) {
            runs.push(run_model(cfg, &hp, kind, repetition, fold, &train, &test).map_err(|e| e.in_fold(fold))?);
        }
    }
    Ok(FoldOutcome {
        fold,
        test_ids: test.iter().map(|r| r.id().to_string()).collect(),
        prototypes,
        runs,
    })
}

/// Runs every (repetition, fold) task over an already filtered corpus.
pub fn cross_validate(records: &[SequenceRecord], cfg: &CvConfig) -> Result<CvOutcome, Error> {
    cfg.hp.validate()?;
    if cfg.repetitions == 0 {
        return Err(Error::Config("repetitions must be >= 1".into()));
    }
    if cfg.jobs == 0 {
        return Err(Error::Config("jobs must be >= 1".into()));
    }
    let splits = (0..cfg.repetitions)
        .map(|rep| build_folds(records, cfg.folds, cfg.repetition_seed(rep)))
        .collect::<Result<Vec<_>, _>>()?;

    let tasks: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|r| (0..cfg.folds).map(move |f| (r, f)))
        .collect();
    let results: Vec<Result<FoldOutcome, Error>> = if cfg.jobs == 1 {
        tasks
            .iter()
            .map(|&(r, f)| run_fold(cfg, records, r, &splits[r], f))
            .collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<FoldOutcome, Error>>>> =
            Mutex::new((0..tasks.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..cfg.jobs.min(tasks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(r, f)) = tasks.get(i) else { break };
                    let out = run_fold(cfg, records, r, &splits[r], f);
                    slots.lock().expect("no panics while holding the lock")[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("worker threads joined")
            .into_iter()
            .map(|o| o.expect("every task ran"))
            .collect()
    };

    let mut results = results.into_iter();
    let mut repetitions = Vec::with_capacity(cfg.repetitions);
    for (rep, split) in splits.into_iter().enumerate() {
        let folds = results.by_ref().take(cfg.folds).collect::<Result<Vec<_>, _>>()?;
        repetitions.push(RepetitionOutcome {
            repetition: rep,
            seed: cfg.repetition_seed(rep),
            split,
            folds,
        });
    }
    let summary = summarize(cfg, records.len(), &repetitions);
    Ok(CvOutcome { repetitions, summary })
}

fn by_model<'a>(reports: impl Iterator<Item = &'a MetricsReport>) -> BTreeMap<ModelKind, ModelSummary> {
    let mut groups: BTreeMap<ModelKind, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.model).or_default().push(r);
    }
    groups.into_iter().map(|(k, v)| (k, ModelSummary::of(&v))).collect()
}

fn summarize(cfg: &CvConfig, records: usize, reps: &[RepetitionOutcome]) -> CvSummary {
    CvSummary {
        seed: cfg.seed,
        folds: cfg.folds,
        repetitions: cfg.repetitions,
        records,
        models: by_model(reps.iter().flat_map(|r| r.reports())),
        per_repetition: reps
            .iter()
            .map(|r| RepetitionSummary {
                repetition: r.repetition,
                seed: r.seed,
                models: by_model(r.reports()),
            })
            .collect(),
    }
}
