use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PromptError, PromptVariant};
use crate::corpus::{load_corpus, AmbiguousExample, TaskKind};

/// Worked examples available for few-shot prompts. Ambiguous exemplars
/// carry their clarifying exchange; the gold interpretation (or the first,
/// when none is sampled) is the one demonstrated.
#[derive(Debug, Clone)]
pub struct ExemplarPool {
    task: TaskKind,
    exemplars: Vec<AmbiguousExample>,
}

impl ExemplarPool {
    pub fn new(task: TaskKind, exemplars: Vec<AmbiguousExample>) -> Result<Self, PromptError> {
        let mut ids = HashSet::new();
        for e in &exemplars {
            let bad = |m: String| PromptError::InvalidExample(format!("exemplar `{}`: {m}", e.id));
            if e.task != task {
                return Err(bad(format!("task {} in a {task} pool", e.task)));
            }
            e.validate().map_err(|f| bad(f.to_string()))?;
            if e.is_ambiguous && e.exchange.is_none() {
                return Err(bad("ambiguous exemplar without a clarifying exchange".into()));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(bad("duplicate id".into()));
            }
        }
        Ok(Self { task, exemplars })
    }

    pub fn load(path: &Path, task: TaskKind) -> Result<Self, PromptError> {
        let exemplars = load_corpus(path, task).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::new(task, exemplars)
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn exemplars(&self) -> &[AmbiguousExample] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    /// Fails on the first evaluation example whose id is also an exemplar.
    pub fn check_disjoint(&self, evaluation: &[AmbiguousExample]) -> Result<(), PromptError> {
        let ids: HashSet<&str> = self.exemplars.iter().map(|e| e.id.as_str()).collect();
        match evaluation.iter().find(|e| ids.contains(e.id.as_str())) {
            Some(e) => Err(PromptError::Contamination(e.id.clone())),
            None => Ok(()),
        }
    }
}

fn take<'a>(
    items: Vec<&'a AmbiguousExample>,
    n: usize,
    kind: &'static str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a AmbiguousExample>, PromptError> {
    if items.len() < n {
        return Err(PromptError::PoolTooSmall { needed: n, available: items.len(), kind });
    }
    let mut items = items;
    items.shuffle(rng);
    items.truncate(n);
    Ok(items)
}

/// Draws `n` exemplars deterministically from `seed`. With `mix`, exactly
/// ⌈n/2⌉ are ambiguous and ⌊n/2⌋ unambiguous, in shuffled order.
pub fn sample_exemplars(
    pool: &ExemplarPool,
    n: usize,
    seed: u64,
    mix: bool,
) -> Result<Vec<&AmbiguousExample>, PromptError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if !mix {
        return take(pool.exemplars.iter().collect(), n, "exemplars", &mut rng);
    }
    let (amb, unamb): (Vec<_>, Vec<_>) = pool.exemplars.iter().partition(|e| e.is_ambiguous);
    let mut picked = take(amb, n.div_ceil(2), "ambiguous exemplars", &mut rng)?;
    picked.extend(take(unamb, n / 2, "unambiguous exemplars", &mut rng)?);
    picked.shuffle(&mut rng);
    Ok(picked)
}

/// Exemplars suited to `variant`: prompts that demonstrate a clarifying
/// exchange draw only ambiguous exemplars, Self-Ask draws a 50-50 mix, and
/// the rest draw from the whole pool.
pub fn select_exemplars(
    pool: &ExemplarPool,
    variant: PromptVariant,
    n: usize,
    seed: u64,
) -> Result<Vec<&AmbiguousExample>, PromptError> {
    match variant {
        PromptVariant::Follow | PromptVariant::IntentSimQuestion | PromptVariant::IntentSimAnswer => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let amb = pool.exemplars.iter().filter(|e| e.is_ambiguous).collect();
            take(amb, n, "ambiguous exemplars", &mut rng)
        }
        PromptVariant::SelfAsk => sample_exemplars(pool, n, seed, true),
        PromptVariant::OracleGen => Ok(Vec::new()),
        PromptVariant::Direct | PromptVariant::Disambig => sample_exemplars(pool, n, seed, false),
    }
}
