//! Run configuration: a TOML file, optionally overridden by flags.
//!
//! ```toml
//! task = "qa"
//! corpus = "data/qa.jsonl"
//! exemplars = "data/qa_exemplars.jsonl"
//! seed = 7
//! estimators = ["likelihood", "self_ask", "semantic_entropy", "intent_sim"]
//! budgets = [10, 20, 30]
//! pool = "full"
//! cache_dir = "cache"
//! output_dir = "runs/qa"
//!
//! [backend]
//! kind = "mock"
//! script = "mock.json"
//!
//! [judge]
//! kind = "scripted"
//! path = "judge.json"
//!
//! [estimator]
//! samples = 10
//! temperature = 0.5
//! ```
//!
//! Relative paths in the file are resolved against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use clarify_core::estimators::{DecodeLimits, EstimatorConfig};
use clarify_core::gateway::openai::ScoringMode;
use clarify_core::{equivalence::JudgeSpec, Method, Pool, PromptVariant, TaskKind, WeightingMode};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Mock {
        script: PathBuf,
    },
    Openai {
        base_url: String,
        model: String,
        /// Environment variable holding the API key; unset means no auth.
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default)]
        scoring: ScoringMode,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

/// The config file as written; every field optional so flags can fill gaps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub task: Option<TaskKind>,
    pub corpus: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub seed: Option<u64>,
    pub backend: Option<BackendSpec>,
    pub judge: Option<JudgeSpec>,
    pub estimators: Option<Vec<Method>>,
    pub estimator: Option<EstimatorConfig>,
    pub limits: Option<DecodeLimits>,
    pub variants: Option<Vec<PromptVariant>>,
    pub weighting: Option<Vec<WeightingMode>>,
    pub outcome_weighting: Option<WeightingMode>,
    pub budgets: Option<Vec<f64>>,
    pub pool: Option<Pool>,
    pub outcomes: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub template_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
}

/// Flag values; `None` leaves the file's value in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<TaskKind>,
    pub corpus: Option<PathBuf>,
    pub budgets: Option<Vec<f64>>,
    pub estimators: Option<Vec<Method>>,
    pub pool: Option<Pool>,
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub parallelism: Option<usize>,
}

/// A validated run configuration. Serialized as the run's config snapshot,
/// without the output directory so that runs into different directories
/// compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskKind,
    pub corpus: PathBuf,
    pub exemplars: Option<PathBuf>,
    pub seed: u64,
    pub backend: BackendSpec,
    pub judge: JudgeSpec,
    pub estimators: Vec<Method>,
    pub estimator: EstimatorConfig,
    pub limits: DecodeLimits,
    pub variants: Vec<PromptVariant>,
    pub weighting: Vec<WeightingMode>,
    pub outcome_weighting: WeightingMode,
    pub budgets: Vec<f64>,
    pub pool: Pool,
    pub outcomes: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub template_dir: Option<PathBuf>,
    pub parallelism: usize,
}

pub const DEFAULT_ESTIMATORS: [Method; 4] =
    [Method::Likelihood, Method::SelfAsk, Method::SemanticEntropy, Method::IntentSim];

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError::Config(message.into())
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut file: ConfigFile =
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.resolve_paths(base);
        Ok(file)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let r = |p: &mut Option<PathBuf>| {
            if let Some(v) = p.take() {
                *p = Some(resolve(base, v));
            }
        };
        r(&mut self.corpus);
        r(&mut self.exemplars);
        r(&mut self.outcomes);
        r(&mut self.cache_dir);
        r(&mut self.output_dir);
        r(&mut self.template_dir);
        if let Some(BackendSpec::Mock { script }) = &mut self.backend {
            *script = resolve(base, std::mem::take(script));
        }
        if let Some(JudgeSpec::Scripted { path }) = &mut self.judge {
            *path = resolve(base, std::mem::take(path));
        }
    }
}

impl RunConfig {
    /// Merges flags over the file and validates the result.
    pub fn build(file: ConfigFile, o: Overrides) -> Result<Self, CliError> {
        let task = o.task.or(file.task).ok_or_else(|| config_error("`task` is required"))?;
        let corpus = o.corpus.or(file.corpus).ok_or_else(|| config_error("`corpus` is required"))?;
        let seed = o.seed.or(file.seed).ok_or_else(|| config_error("`seed` is required"))?;
        let backend = match o.mock_script {
            Some(script) => BackendSpec::Mock { script },
            None => file.backend.ok_or_else(|| config_error("`backend` is required"))?,
        };
        let output_dir = o.out.or(file.output_dir).ok_or_else(|| config_error("`output_dir` (or --out) is required"))?;
        let mut estimator = file.estimator.unwrap_or_default();
        estimator.seed = seed;
        let (weighting, outcome_weighting) = match task {
            TaskKind::Mt => (vec![WeightingMode::Uniform], WeightingMode::Uniform),
            _ => (vec![WeightingMode::Uniform, WeightingMode::Sampled], WeightingMode::Sampled),
        };
        let config = RunConfig {
            task,
            corpus,
            exemplars: file.exemplars,
            seed,
            backend,
            judge: file.judge.unwrap_or_default(),
            estimators: o.estimators.or(file.estimators).unwrap_or_else(|| DEFAULT_ESTIMATORS.to_vec()),
            estimator,
            limits: file.limits.unwrap_or_else(|| DecodeLimits::for_task(task)),
            variants: file
                .variants
                .unwrap_or_else(|| vec![PromptVariant::Direct, PromptVariant::Follow, PromptVariant::Disambig]),
            weighting: file.weighting.unwrap_or(weighting),
            outcome_weighting: file.outcome_weighting.unwrap_or(outcome_weighting),
            budgets: o.budgets.or(file.budgets).unwrap_or_else(|| vec![10.0, 20.0, 30.0]),
            pool: o.pool.or(file.pool).unwrap_or_default(),
            outcomes: file.outcomes,
            cache_dir: o.cache_dir.or(file.cache_dir),
            output_dir,
            template_dir: file.template_dir,
            parallelism: o.parallelism.or(file.parallelism).unwrap_or(4),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let exists = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(config_error(format!("{what} {} does not exist", p.display())))
            }
        };
        exists("corpus", &self.corpus)?;
        for (what, p) in [
            ("exemplars", &self.exemplars),
            ("outcomes", &self.outcomes),
            ("template_dir", &self.template_dir),
        ] {
            if let Some(p) = p {
                exists(what, p)?;
            }
        }
        if let BackendSpec::Mock { script } = &self.backend {
            exists("mock script", script)?;
        }
        if let JudgeSpec::Scripted { path } = &self.judge {
            exists("judge script", path)?;
        }
        self.estimator.validate().map_err(|e| config_error(e.to_string()))?;
        if self.exemplars.is_none() && self.estimator.exemplars > 0 {
            return Err(config_error(format!(
                "estimator.exemplars = {} but no `exemplars` file is configured; set it to 0 for zero-shot prompts",
                self.estimator.exemplars
            )));
        }
        if let Some(b) = self.budgets.iter().find(|b| !(0.0..=100.0).contains(*b)) {
            return Err(config_error(format!("budget {b} outside [0, 100]")));
        }
        if let Some(v) = self.variants.iter().find(|v| {
            !matches!(v, PromptVariant::Direct | PromptVariant::Follow | PromptVariant::Disambig)
        }) {
            return Err(config_error(format!("`{v}` is not a responsiveness setting")));
        }
        if self.variants.is_empty() || self.weighting.is_empty() {
            return Err(config_error("`variants` and `weighting` must be non-empty"));
        }
        if self.task == TaskKind::Mt
            && (self.weighting.contains(&WeightingMode::Sampled) || self.outcome_weighting == WeightingMode::Sampled)
        {
            return Err(config_error("mt examples carry no sampled intents; use uniform weighting"));
        }
        if self.parallelism == 0 {
            return Err(config_error("parallelism must be >= 1"));
        }
        Ok(())
    }
}
