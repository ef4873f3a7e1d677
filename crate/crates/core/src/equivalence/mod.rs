//! Semantic clustering of sampled responses and the entropy over clusters.
//!
//! Two responses to the same question are equivalent when the judge finds
//! that either question-plus-answer text entails the other. Clusters are the
//! connected components of that relation; no transitivity repair is done.

mod judges;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NliLabel;
use crate::gateway::GatewayError;

pub use judges::{CachedJudge, ExactMatchJudge, JudgeSpec, LlmJudge, RemoteNliJudge, ScriptedJudge};

/// Judge verdicts share the NLI label set.
pub type EntailmentLabel = NliLabel;

#[derive(Debug, Clone, Error)]
pub enum EquivalenceError {
    #[error(transparent)]
    Judge(#[from] GatewayError),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Labels an ordered (premise, hypothesis) pair.
pub trait Judge: Send + Sync {
    /// Stable identity, used in cache keys and run metadata.
    fn id(&self) -> String;
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentLabel, GatewayError>;
}

/// The text the judge sees for one clarifying question-answer pair.
pub fn qa_concat(question: &str, answer: &str) -> String {
    if question.is_empty() {
        answer.to_owned()
    } else {
        format!("{question} {answer}")
    }
}

/// Either-direction entailment of the two question-answer texts. The
/// reverse direction is only queried when the forward one fails.
pub fn responses_equivalent(
    judge: &dyn Judge,
    question: &str,
    a_i: &str,
    a_j: &str,
) -> Result<bool, GatewayError> {
    let left = qa_concat(question, a_i);
    let right = qa_concat(question, a_j);
    if judge.judge(&left, &right)? == NliLabel::Entailment {
        return Ok(true);
    }
    Ok(judge.judge(&right, &left)? == NliLabel::Entailment)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceGraph {
    pub node_count: usize,
    /// Undirected edges as `(i, j)` with `i < j`, in ascending order.
    pub edges: Vec<(usize, usize)>,
}

impl EquivalenceGraph {
    /// Evaluates `related(i, j)` once for every pair `i < j`.
    pub fn from_relation<E>(
        node_count: usize,
        mut related: impl FnMut(usize, usize) -> Result<bool, E>,
    ) -> Result<Self, E> {
        let mut edges = Vec::new();
        for i in 0..node_count {
            for j in i + 1..node_count {
                if related(i, j)? {
                    edges.push((i, j));
                }
            }
        }
        Ok(Self { node_count, edges })
    }
}

pub fn build_equivalence_graph(
    judge: &dyn Judge,
    question: &str,
    answers: &[String],
) -> Result<EquivalenceGraph, GatewayError> {
    EquivalenceGraph::from_relation(answers.len(), |i, j| {
        responses_equivalent(judge, question, &answers[i], &answers[j])
    })
}

/// Maximal connected components by depth-first search. Members are sorted
/// ascending and components are ordered by their smallest member.
pub fn connected_components(graph: &EquivalenceGraph) -> Vec<Vec<usize>> {
    let n = graph.node_count;
    let mut adjacency = vec![Vec::new(); n];
    for &(i, j) in &graph.edges {
        adjacency[i].push(j);
        adjacency[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut component = Vec::new();
        while let Some(v) = stack.pop() {
            component.push(v);
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        component.sort_unstable();
        components.push(component);
    }
    components
}

/// Groups items with equal keys; `None` items stay singletons.
pub fn cluster_by_key(keys: &[Option<String>]) -> Vec<Vec<usize>> {
    let graph = EquivalenceGraph::from_relation(keys.len(), |i, j| {
        Ok::<_, std::convert::Infallible>(matches!((&keys[i], &keys[j]), (Some(a), Some(b)) if a == b))
    })
    .expect("infallible");
    connected_components(&graph)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistribution {
    pub clusters: Vec<Vec<usize>>,
    /// `|cluster| / S`, in cluster order.
    pub probabilities: Vec<f64>,
}

impl ClusterDistribution {
    pub fn from_clusters(clusters: Vec<Vec<usize>>) -> Self {
        let s: usize = clusters.iter().map(Vec::len).sum();
        let probabilities = clusters.iter().map(|c| c.len() as f64 / s as f64).collect();
        Self { clusters, probabilities }
    }

    pub fn sample_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    /// Entropy in nats. Terms are summed in a canonical order so that any
    /// arrangement with the same cluster sizes gives identical bits.
    pub fn entropy(&self) -> f64 {
        let mut p = self.probabilities.clone();
        p.sort_by(|a, b| b.total_cmp(a));
        entropy(&p).expect("cluster proportions form a distribution")
    }
}

/// `−Σ p ln p` in nats, with `0 ln 0 = 0`.
pub fn entropy(distribution: &[f64]) -> Result<f64, EquivalenceError> {
    if distribution.is_empty() {
        return Err(EquivalenceError::InvalidDistribution("empty".into()));
    }
    if let Some(p) = distribution.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(EquivalenceError::InvalidDistribution(format!("probability {p}")));
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(EquivalenceError::InvalidDistribution(format!("sums to {total}")));
    }
    let h: f64 = distribution
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // A single certain cluster gives -0.0 from the sum above.
    Ok(h.max(0.0))
}
