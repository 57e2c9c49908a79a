use crate::config::RunConfig;
use crate::error::CliError;
use prr_gnn::dataset::{
    build_folds, extract_features, prepare_corpus, read_fasta, PreparedCorpus,
};
use prr_gnn::eval::{
    cross_validate, families_csv, fit, reports_csv, roc_csv, scores_csv, CvOutcome, ModelKind,
    ModelSelection,
};
use prr_gnn::{Checkpoint, FeatureMode, Hyperparams, Role};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report values are finite");
    s.push('\n');
    s
}

/// Loads and filters the corpus, writing `folds.json` and `corpus_report.json`.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PreparedCorpus, CliError> {
    cfg.validate()?;
    let corpus = prepare_corpus(
        &cfg.paths.positive_fasta,
        &cfg.paths.negative_fasta,
        cfg.eval.residue_policy,
        cfg.eval.redundancy_threshold,
    )?;
    let split = build_folds(&corpus.records, cfg.eval.folds, cfg.seed())?;
    let out = &cfg.paths.output_dir;
    write_file(&out.join("folds.json"), &split.manifest_json())?;
    write_file(&out.join("corpus_report.json"), &pretty(&corpus))?;
    Ok(corpus)
}

/// Full cross-validation. Everything except `timing.json`, the training logs and
/// the timing columns of `metrics.csv` is byte-identical across reruns.
pub fn cmd_cv(cfg: &RunConfig, models: ModelSelection, jobs: usize) -> Result<CvOutcome, CliError> {
    let corpus = cmd_prepare(cfg)?;
    let cv = cfg.cv_config(models, jobs)?;
    let outcome = cross_validate(&corpus.records, &cv)?;
    let out = &cfg.paths.output_dir;
    for rep in &outcome.repetitions {
        let dir = out.join(format!("rep{}", rep.repetition));
        write_file(&dir.join("folds.json"), &rep.split.manifest_json())?;
        write_file(&dir.join("metrics.csv"), &reports_csv(rep.reports()))?;
        write_file(&dir.join("scores.csv"), &scores_csv(&rep.folds))?;
        write_file(
            &dir.join("families.csv"),
            &families_csv(rep.folds.iter().flat_map(|f| f.runs.iter().flat_map(|r| &r.families))),
        )?;
        for fold in &rep.folds {
            for run in &fold.runs {
                let stem = format!("fold{}_{}", fold.fold, run.report.model.file_tag());
                write_file(&dir.join("checkpoints").join(format!("{stem}.json")), &run.checkpoint.to_json())?;
                write_file(&dir.join("logs").join(format!("{stem}.csv")), &run.history.to_csv())?;
                write_file(&dir.join("roc").join(format!("{stem}.csv")), &roc_csv(&run.roc))?;
            }
        }
    }
    write_file(&out.join("summary.json"), &pretty(&outcome.summary))?;
    write_file(&out.join("timing.json"), &pretty(&outcome.timing()))?;
    Ok(outcome)
}

/// Trains the selected models on the whole filtered corpus.
pub fn cmd_train(cfg: &RunConfig, models: ModelSelection) -> Result<Vec<(ModelKind, PathBuf)>, CliError> {
    let corpus = cmd_prepare(cfg)?;
    let model = cfg.model_config()?;
    let train: Vec<_> = corpus.records.iter().collect();
    let mut written = Vec::new();
    for kind in [ModelKind::Gnn, ModelKind::Fnn] {
        if !models.includes(kind) {
            continue;
        }
        let fitted = fit(
            kind,
            &train,
            &model,
            &cfg.training,
            cfg.eval.threshold_policy,
            cfg.eval.threshold,
        )?;
        let out = &cfg.paths.output_dir;
        let path = out.join(format!("model_{}.json", kind.file_tag()));
        write_file(&path, &fitted.checkpoint.to_json())?;
        write_file(&out.join(format!("train_{}.csv", kind.file_tag())), &fitted.history.to_csv())?;
        eprintln!(
            "{kind}: {} epochs, {} ms",
            fitted.history.epochs.len(),
            fitted.train_wall_ms
        );
        written.push((kind, path));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub score: f64,
    pub label: bool,
    pub latency_us: f64,
}

/// Settings `predict` takes from a run configuration.
#[derive(Debug, Clone, Copy)]
pub struct PredictSettings {
    pub feature_mode: FeatureMode,
    pub residue_policy: prr_gnn::ResiduePolicy,
    pub hp: Hyperparams,
    pub threshold: f64,
}

impl PredictSettings {
    pub fn from_config(cfg: Option<&RunConfig>) -> Self {
        match cfg {
            Some(c) => Self {
                feature_mode: c.model.feature_mode,
                residue_policy: c.eval.residue_policy,
                hp: c.training,
                threshold: c.eval.threshold,
            },
            None => Self {
                feature_mode: FeatureMode::default(),
                residue_policy: prr_gnn::ResiduePolicy::default(),
                hp: Hyperparams::default(),
                threshold: 0.5,
            },
        }
    }
}

/// Scores every record of `fasta`. The checkpoint's own threshold wins over the configured one.
pub fn cmd_predict(checkpoint: &Path, fasta: &Path, settings: PredictSettings) -> Result<Vec<Prediction>, CliError> {
    let text = std::fs::read_to_string(checkpoint)
        .map_err(|e| CliError::Input(format!("{}: {e}", checkpoint.display())))?;
    let ck = Checkpoint::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", checkpoint.display())))?;
    let d = settings.feature_mode.dim();
    if ck.feature_dim() != d {
        return Err(CliError::Input(format!(
            "checkpoint expects {}-dimensional features but the configured feature mode gives {d}",
            ck.feature_dim()
        )));
    }
    // query roles only fill the record type; scoring ignores them
    let records = read_fasta(fasta, Some(Role::NonPrr), settings.residue_policy)?;
    let threshold = ck.threshold().unwrap_or(settings.threshold);
    let control = settings.hp.convergence();
    let mut out = Vec::with_capacity(records.len());
    for r in &records {
        let t0 = Instant::now();
        let f = extract_features(r, settings.feature_mode)?;
        let score = ck.score(&f, control)?;
        let latency_us = t0.elapsed().as_secs_f64() * 1e6;
        out.push(Prediction {
            id: r.id().to_string(),
            score,
            label: score >= threshold,
            latency_us,
        });
    }
    Ok(out)
}

pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut s = String::from("id,score,predicted_label,latency_us\n");
    for p in preds {
        let _ = writeln!(s, "{},{},{},{:.3}", p.id, p.score, u8::from(p.label), p.latency_us);
    }
    s
}
