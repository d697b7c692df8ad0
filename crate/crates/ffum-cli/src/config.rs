//! Experiment configuration: a single JSON document describing the data,
//! the model, the removal scenario, and the methods to compare.

use std::path::{Path, PathBuf};

use ffum_core::{
    CorruptionKind, CorruptionSpec, DivergenceKind, DivergencePlan, Error, EvalMode, FfumConfig,
    HalimiConfig, ModelSpec, NotConfig, PretrainConfig, Result, ScenarioSpec, TeacherPolicy,
    Tolerances,
};
use serde::{Deserialize, Serialize};

/// Where the base examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian class blobs generated on the fly.
    Synthetic {
        num_classes: usize,
        per_class: usize,
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// IDX image and label files on disk.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        downsample_to: Option<usize>,
    },
}

fn default_spread() -> f64 {
    1.0
}

/// Federated pretraining settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub supervised: DivergenceKind,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            rounds: 15,
            local_epochs: 1,
            batch_size: 32,
            learning_rate: 0.3,
            supervised: DivergenceKind::Kl,
        }
    }
}

impl PretrainSection {
    pub fn to_core(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            supervised: self.supervised,
            seed,
        }
    }
}

/// Min-max unlearning method entry. Omitted fields fall back to the engine
/// defaults; `batch_size` falls back to the pretraining batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfumSection {
    pub name: Option<String>,
    pub rounds_r: usize,
    pub post_rounds: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub epochs_max: usize,
    pub epochs_min: usize,
    pub epochs_post: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub batch_size: Option<usize>,
    pub plan: DivergencePlan,
    pub teacher_policy: TeacherPolicy,
}

impl Default for FfumSection {
    fn default() -> Self {
        let d = FfumConfig::default();
        FfumSection {
            name: None,
            rounds_r: d.rounds_r,
            post_rounds: d.post_rounds,
            eta_max: d.eta_max,
            eta_min: d.eta_min,
            epochs_max: d.epochs_max,
            epochs_min: d.epochs_min,
            epochs_post: d.epochs_post,
            alpha: d.alpha,
            gamma: d.gamma,
            batch_size: None,
            plan: d.plan,
            teacher_policy: d.teacher_policy,
        }
    }
}

impl FfumSection {
    pub fn to_core(&self, fallback_batch: usize, seed: u64) -> FfumConfig {
        FfumConfig {
            rounds_r: self.rounds_r,
            post_rounds: self.post_rounds,
            eta_max: self.eta_max,
            eta_min: self.eta_min,
            epochs_max: self.epochs_max,
            epochs_min: self.epochs_min,
            epochs_post: self.epochs_post,
            alpha: self.alpha,
            gamma: self.gamma,
            batch_size: self.batch_size.unwrap_or(fallback_batch),
            plan: self.plan,
            teacher_policy: self.teacher_policy,
            seed,
        }
    }
}

/// Projected-ascent baseline entry. A missing `radius` is sized at run time
/// from the spread of the final pretraining round's client updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HalimiSection {
    pub name: Option<String>,
    pub eta_ascent: f64,
    pub ascent_epochs: usize,
    pub radius: Option<f64>,
    pub finetune_rounds: usize,
    pub finetune_epochs: usize,
    pub eta_finetune: f64,
    pub batch_size: Option<usize>,
    pub supervised: DivergenceKind,
}

impl Default for HalimiSection {
    fn default() -> Self {
        HalimiSection {
            name: None,
            eta_ascent: 0.05,
            ascent_epochs: 1,
            radius: None,
            finetune_rounds: 3,
            finetune_epochs: 1,
            eta_finetune: 0.1,
            batch_size: None,
            supervised: DivergenceKind::Kl,
        }
    }
}

impl HalimiSection {
    pub fn to_core(&self, radius: f64, fallback_batch: usize, seed: u64) -> HalimiConfig {
        HalimiConfig {
            eta_ascent: self.eta_ascent,
            ascent_epochs: self.ascent_epochs,
            radius,
            finetune_rounds: self.finetune_rounds,
            finetune_epochs: self.finetune_epochs,
            eta_finetune: self.eta_finetune,
            batch_size: self.batch_size.unwrap_or(fallback_batch),
            supervised: self.supervised,
            seed,
        }
    }
}

/// Weight-negation baseline entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotSection {
    pub name: Option<String>,
    pub finetune_rounds: usize,
    pub finetune_epochs: usize,
    pub eta_finetune: f64,
    pub batch_size: Option<usize>,
    pub supervised: DivergenceKind,
}

impl Default for NotSection {
    fn default() -> Self {
        NotSection {
            name: None,
            finetune_rounds: 3,
            finetune_epochs: 1,
            eta_finetune: 0.1,
            batch_size: None,
            supervised: DivergenceKind::Kl,
        }
    }
}

impl NotSection {
    pub fn to_core(&self, fallback_batch: usize, seed: u64) -> NotConfig {
        NotConfig {
            finetune_rounds: self.finetune_rounds,
            finetune_epochs: self.finetune_epochs,
            eta_finetune: self.eta_finetune,
            batch_size: self.batch_size.unwrap_or(fallback_batch),
            supervised: self.supervised,
            seed,
        }
    }
}

/// One entry of the method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Ffum(FfumSection),
    Halimi(HalimiSection),
    Not(NotSection),
    RetrainOracle,
}

impl MethodSpec {
    /// Name used in reports, CSV rows, and checkpoint file names.
    pub fn name(&self) -> String {
        let custom = match self {
            MethodSpec::Ffum(s) => &s.name,
            MethodSpec::Halimi(s) => &s.name,
            MethodSpec::Not(s) => &s.name,
            MethodSpec::RetrainOracle => &None,
        };
        if let Some(n) = custom {
            return n.clone();
        }
        match self {
            MethodSpec::Ffum(s) => format!("ffum-{}", s.plan.tag()),
            MethodSpec::Halimi(_) => "halimi".to_string(),
            MethodSpec::Not(_) => "not".to_string(),
            MethodSpec::RetrainOracle => "retrain_oracle".to_string(),
        }
    }
}

/// Evaluation settings. `mode` defaults by corruption kind (clean data is
/// judged on privacy, corrupted data on robustness); `mia` defaults to on
/// exactly in privacy mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: Option<EvalMode>,
    pub mia: Option<bool>,
    pub tau_eq: f64,
    pub tau_mia: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let t = Tolerances::default();
        EvalSection { mode: None, mia: None, tau_eq: t.tau_eq, tau_mia: t.tau_mia }
    }
}

impl EvalSection {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances { tau_eq: self.tau_eq, tau_mia: self.tau_mia }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// The whole experiment: data, model, scenario, methods, evaluation.
/// Unknown keys anywhere in the document are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub pretrain: PretrainSection,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn valid_method_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Synthetic { num_classes, dim, .. } => {
                if self.model.num_classes != *num_classes {
                    return Err(Error::Config(format!(
                        "model num_classes {} does not match the dataset's {num_classes}",
                        self.model.num_classes
                    )));
                }
                if self.model.input_dim != *dim {
                    return Err(Error::Config(format!(
                        "model input_dim {} does not match the dataset dim {dim}",
                        self.model.input_dim
                    )));
                }
            }
            DatasetSpec::Idx { .. } => {}
        }
        self.model.validate()?;
        self.scenario.validate()?;
        self.corruption.validate(self.model.num_classes)?;
        self.pretrain.to_core(self.seed).validate()?;
        for (t, v) in [("tau_eq", self.eval.tau_eq), ("tau_mia", self.eval.tau_mia)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{t} must be non-negative and finite, got {v}"
                )));
            }
        }

        let mut names: Vec<String> = Vec::with_capacity(self.methods.len());
        for m in &self.methods {
            // Validate each entry through the engine config it resolves to;
            // unresolved fallbacks get stand-in values that never fail.
            match m {
                MethodSpec::Ffum(s) => s.to_core(self.pretrain.batch_size, self.seed).validate()?,
                MethodSpec::Halimi(s) => s
                    .to_core(s.radius.unwrap_or(1.0), self.pretrain.batch_size, self.seed)
                    .validate()?,
                MethodSpec::Not(s) => s.to_core(self.pretrain.batch_size, self.seed).validate()?,
                MethodSpec::RetrainOracle => {}
            }
            if let MethodSpec::Halimi(s) = m {
                if let Some(r) = s.radius {
                    if !(r.is_finite() && r >= 0.0) {
                        return Err(Error::Config(format!(
                            "radius must be non-negative and finite, got {r}"
                        )));
                    }
                }
            }
            let name = m.name();
            if !valid_method_name(&name) {
                return Err(Error::Config(format!(
                    "method name {name:?} may only contain letters, digits, '-', '_', '.'"
                )));
            }
            if names.contains(&name) {
                return Err(Error::Config(format!("duplicate method name {name:?}")));
            }
            names.push(name);
        }
        Ok(())
    }

    /// Mode resolved from the corruption kind unless set explicitly.
    pub fn eval_mode(&self) -> EvalMode {
        self.eval.mode.unwrap_or(match self.corruption.kind {
            CorruptionKind::None => EvalMode::Privacy,
            _ => EvalMode::Robustness,
        })
    }

    /// Whether the membership attack is evaluated.
    pub fn mia_enabled(&self) -> bool {
        self.eval.mia.unwrap_or(self.eval_mode() == EvalMode::Privacy)
    }
}
