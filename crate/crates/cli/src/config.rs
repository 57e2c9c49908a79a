//! JSON run configuration. Relative paths resolve against the config file's directory.

use crate::error::CliError;
use prr_gnn::dataset::{FeatureMode, ResiduePolicy};
use prr_gnn::eval::{CvConfig, ModelConfig, ModelSelection, ThresholdPolicy};
use prr_gnn::{Hyperparams, TopologyTemplate};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub positive_fasta: PathBuf,
    pub negative_fasta: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub state_dim: usize,
    pub feature_mode: FeatureMode,
    pub transition_hidden: usize,
    pub readout_hidden: usize,
    pub fnn_hidden: usize,
    /// JSON list of `[from_role, to_role]` pairs; the star template when absent.
    pub topology_template: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            state_dim: m.state_dim,
            feature_mode: m.feature_mode,
            transition_hidden: m.transition_hidden,
            readout_hidden: m.readout_hidden,
            fnn_hidden: m.fnn_hidden,
            topology_template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub threshold_policy: ThresholdPolicy,
    pub threshold: f64,
    pub folds: usize,
    pub repetitions: usize,
    pub redundancy_threshold: f64,
    pub residue_policy: ResiduePolicy,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold_policy: ThresholdPolicy::Fixed,
            threshold: 0.5,
            folds: 5,
            repetitions: 5,
            redundancy_threshold: 0.4,
            residue_policy: ResiduePolicy::Reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: Hyperparams,
    #[serde(default)]
    pub eval: EvalSection,
    /// Overrides `training.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold_policy: Option<ThresholdPolicy>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        cfg.paths.positive_fasta = base.join(&cfg.paths.positive_fasta);
        cfg.paths.negative_fasta = base.join(&cfg.paths.negative_fasta);
        cfg.paths.output_dir = base.join(&cfg.paths.output_dir);
        if let Some(t) = &mut cfg.model.topology_template {
            *t = base.join(&*t);
        }
        if let Some(seed) = cfg.seed {
            cfg.training.seed = seed;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
            self.training.seed = seed;
        }
        if let Some(p) = o.threshold_policy {
            self.eval.threshold_policy = p;
        }
        if let Some(out) = &o.out {
            self.paths.output_dir = out.clone();
        }
    }

    pub fn seed(&self) -> u64 {
        self.training.seed
    }

    /// Range checks and existence of every input path.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Input(format!("config: {m}")));
        let m = &self.model;
        if m.state_dim == 0 || m.transition_hidden == 0 || m.readout_hidden == 0 || m.fnn_hidden == 0 {
            return bad("model dimensions must be >= 1");
        }
        let e = &self.eval;
        if e.folds < 2 {
            return bad("eval.folds must be >= 2");
        }
        if e.repetitions == 0 {
            return bad("eval.repetitions must be >= 1");
        }
        if !(0.0..=1.0).contains(&e.threshold) {
            return bad("eval.threshold must lie in [0, 1]");
        }
        if !(e.redundancy_threshold > 0.0 && e.redundancy_threshold <= 1.0) {
            return bad("eval.redundancy_threshold must lie in (0, 1]");
        }
        self.training
            .validate()
            .map_err(|e| CliError::Input(format!("config: {e}")))?;
        let mut inputs = vec![&self.paths.positive_fasta, &self.paths.negative_fasta];
        inputs.extend(&self.model.topology_template);
        for p in inputs {
            if !p.is_file() {
                return Err(CliError::Input(format!("{}: no such file", p.display())));
            }
        }
        Ok(())
    }

    pub fn template(&self) -> Result<TopologyTemplate, CliError> {
        match &self.model.topology_template {
            None => Ok(TopologyTemplate::star()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        Ok(ModelConfig {
            state_dim: self.model.state_dim,
            feature_mode: self.model.feature_mode,
            transition_hidden: self.model.transition_hidden,
            readout_hidden: self.model.readout_hidden,
            fnn_hidden: self.model.fnn_hidden,
            template: self.template()?,
        })
    }

    pub fn cv_config(&self, models: ModelSelection, jobs: usize) -> Result<CvConfig, CliError> {
        Ok(CvConfig {
            model: self.model_config()?,
            hp: self.training,
            seed: self.seed(),
            folds: self.eval.folds,
            repetitions: self.eval.repetitions,
            threshold_policy: self.eval.threshold_policy,
            fixed_threshold: self.eval.threshold,
            models,
            jobs,
        })
    }
}
