use std::sync::Arc;
use std::time::Duration;

use clarify_core::corpus::load_corpus;
use clarify_core::equivalence::Judge;
use clarify_core::estimators::EstimatorContext;
use clarify_core::gateway::DiskCache;
use clarify_core::gateway::mock::{MockBackend, MockScript};
use clarify_core::gateway::openai::{OpenAiBackend, OpenAiConfig};
use clarify_core::gateway::{Backend, GatewayConfig};
use clarify_core::{AmbiguousExample, ExemplarPool, Gateway, PromptBook};

use crate::config::{BackendSpec, RunConfig};
use crate::error::CliError;

/// Everything a command needs, built once from a validated config.
pub struct Runtime {
    pub config: RunConfig,
    pub gateway: Arc<Gateway>,
    pub book: Arc<PromptBook>,
    pub judge: Box<dyn Judge>,
    pub pool: ExemplarPool,
    pub corpus: Vec<AmbiguousExample>,
    threads: rayon::ThreadPool,
}

fn backend(spec: &BackendSpec) -> Result<Arc<dyn Backend>, CliError> {
    Ok(match spec {
        BackendSpec::Mock { script } => {
            Arc::new(MockBackend::new(MockScript::load(script).map_err(CliError::Config)?))
        }
        BackendSpec::Openai { base_url, model, api_key_env, scoring, timeout_secs } => {
            Arc::new(OpenAiBackend::new(OpenAiConfig {
                base_url: base_url.clone(),
                model: model.clone(),
                api_key: std::env::var(api_key_env).ok(),
                timeout: Duration::from_secs(*timeout_secs),
                scoring: *scoring,
            }))
        }
    })
}

impl Runtime {
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        let cache = config
            .cache_dir
            .as_ref()
            .map(DiskCache::open)
            .transpose()
            .map_err(|e| CliError::Config(format!("cache: {e}")))?;
        let gateway = Arc::new(Gateway::new(
            backend(&config.backend)?,
            cache.clone(),
            GatewayConfig { max_concurrency: config.parallelism, ..Default::default() },
        ));
        let book = Arc::new(match &config.template_dir {
            Some(dir) => PromptBook::with_overrides(dir).map_err(|e| CliError::Config(e.to_string()))?,
            None => PromptBook::builtin(),
        });
        let judge = config.judge.build(&gateway, &book, cache).map_err(CliError::Config)?;
        let corpus = load_corpus(&config.corpus, config.task).map_err(|e| CliError::Config(e.to_string()))?;
        let pool = match &config.exemplars {
            Some(p) => ExemplarPool::load(p, config.task),
            None => ExemplarPool::new(config.task, Vec::new()),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        pool.check_disjoint(&corpus).map_err(|e| CliError::Config(e.to_string()))?;
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { config, gateway, book, judge, pool, corpus, threads })
    }

    pub fn estimator_context(&self) -> EstimatorContext<'_> {
        EstimatorContext {
            gateway: &self.gateway,
            judge: self.judge.as_ref(),
            book: &self.book,
            pool: &self.pool,
            config: &self.config.estimator,
            limits: self.config.limits,
        }
    }

    /// Maps `f` over `items` on the worker pool, keeping input order.
    pub fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        use rayon::prelude::*;
        self.threads.install(|| items.par_iter().map(&f).collect())
    }
}
