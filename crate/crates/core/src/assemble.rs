//! Partition sum `Z = |H₁|' · Σ_Γ b_Γ I_Γ / |Aut Γ|` over admissible graphs.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::graph::{admissible_partition_graphs, canonical_key, parse_graph, GraphError};
use crate::rational::{fmt_q, q, to_f64, Q};
use crate::weight::{q_from_json, rw_class, TailAssignment, TargetData, WeightError};

/// Largest supported `n` (so `2n <= 8` vertices).
pub const MAX_N: usize = 4;

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("source: {0}")]
    Source(String),
    #[error("no analytic weight for admissible class {0}")]
    MissingWeight(String),
    #[error("n = {0} exceeds the supported maximum {MAX_N}")]
    TooLarge(usize),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Exact unless some floating-point input was involved.
#[derive(Clone, Debug, PartialEq)]
pub enum Number {
    Exact(Q),
    Float(f64),
}

impl Number {
    pub fn zero() -> Self {
        Number::Exact(Q::zero())
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Number::Exact(v) => to_f64(v),
            Number::Float(x) => *x,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Number::Exact(v) => v.is_zero(),
            Number::Float(x) => *x == 0.0,
        }
    }

    pub fn add(&self, other: &Number) -> Number {
        match (self, other) {
            (Number::Exact(a), Number::Exact(b)) => Number::Exact(a + b),
            _ => Number::Float(self.to_f64() + other.to_f64()),
        }
    }

    pub fn mul_q(&self, c: &Q) -> Number {
        match self {
            Number::Exact(v) => Number::Exact(v * c),
            Number::Float(x) => Number::Float(x * to_f64(c)),
        }
    }

    /// Reads `"p/q"` strings and integers exactly, other JSON numbers as floats.
    pub fn from_json(v: &Value) -> Option<Number> {
        match v {
            Value::Number(n) if n.is_f64() => n.as_f64().map(Number::Float),
            _ => q_from_json(v).map(Number::Exact),
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Exact(v) => write!(f, "{}", fmt_q(v)),
            Number::Float(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceData {
    pub b1: usize,
    /// Number of torsion elements of `H₁(M; ℤ)`.
    pub torsion_count: u64,
    pub analytic_weights: BTreeMap<String, Number>,
    /// Triple intersection of the harmonic 1-forms (only meaningful for `b1 = 3`).
    pub harmonic_intersections: Option<Q>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceJson {
    b1: usize,
    torsion_count: u64,
    #[serde(default)]
    analytic_weights: BTreeMap<String, Value>,
    #[serde(default)]
    harmonic_intersections: Option<Value>,
}

impl SourceData {
    pub fn from_json(text: &str) -> Result<Self, AssembleError> {
        let raw: SourceJson = serde_json::from_str(text).map_err(|e| AssembleError::Source(e.to_string()))?;
        if raw.torsion_count == 0 {
            return Err(AssembleError::Source("torsion_count: must be at least 1".into()));
        }
        let mut analytic_weights = BTreeMap::new();
        for (k, v) in raw.analytic_weights {
            let x = Number::from_json(&v).ok_or_else(|| AssembleError::Source(format!("analytic_weights[{k:?}]: not a number: {v}")))?;
            // Keys are graphs in exchange format; any vertex order names the same class.
            let key = parse_graph(&k).map(|g| canonical_key(&g)).unwrap_or(k.clone());
            if analytic_weights.get(&key).is_some_and(|old| old != &x) {
                return Err(AssembleError::Source(format!("analytic_weights[{k:?}]: conflicting value for class {key}")));
            }
            analytic_weights.insert(key, x);
        }
        let harmonic_intersections = match raw.harmonic_intersections {
            None | Some(Value::Null) => None,
            Some(v) => Some(q_from_json(&v).ok_or_else(|| AssembleError::Source(format!("harmonic_intersections: not a rational: {v}")))?),
        };
        Ok(SourceData { b1: raw.b1, torsion_count: raw.torsion_count, analytic_weights, harmonic_intersections })
    }

    /// `I_Γ` for an admissible class: the supplied weight, or for `b1 = 3` the
    /// triple intersection raised to the number of vertices.
    fn weight_for(&self, key: &str, vertices: usize) -> Option<Number> {
        if let Some(w) = self.analytic_weights.get(key) {
            return Some(w.clone());
        }
        match (&self.harmonic_intersections, self.b1) {
            (Some(t), 3) => Some(Number::Exact(num_traits::pow(t.clone(), vertices))),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionTerm {
    pub key: String,
    pub aut: u64,
    pub weight: Q,
    pub analytic: Number,
    /// `weight · analytic / aut`, before the torsion factor.
    pub contribution: Number,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionReport {
    pub n: usize,
    pub b1: usize,
    pub torsion_count: u64,
    pub terms: Vec<PartitionTerm>,
    /// Weight keys that are not admissible classes; they do not contribute.
    pub ignored_keys: Vec<String>,
    pub total: Number,
}

pub fn assemble_partition(target: &TargetData, source: &SourceData) -> Result<PartitionReport, AssembleError> {
    let n = target.n;
    if n > MAX_N {
        return Err(AssembleError::TooLarge(n));
    }
    let torsion = q(source.torsion_count as i64);
    let mut report =
        PartitionReport { n, b1: source.b1, torsion_count: source.torsion_count, terms: Vec::new(), ignored_keys: Vec::new(), total: Number::zero() };
    if source.b1 > 3 {
        report.ignored_keys = source.analytic_weights.keys().cloned().collect();
        return Ok(report);
    }
    let classes = admissible_partition_graphs(n, source.b1)?;
    let terms: Vec<PartitionTerm> = classes
        .par_iter()
        .map(|c| {
            let analytic = if c.graph.num_vertices() == 0 {
                source.analytic_weights.get(&c.key).cloned().unwrap_or(Number::Exact(Q::one()))
            } else {
                source.weight_for(&c.key, c.graph.num_vertices()).ok_or_else(|| AssembleError::MissingWeight(c.key.clone()))?
            };
            let weight = if c.graph.num_vertices() == 0 { Q::one() } else { rw_class(&c.graph, target, &TailAssignment::Abstract)? };
            let contribution = analytic.mul_q(&(weight.clone() / q(c.aut as i64)));
            Ok(PartitionTerm { key: c.key.clone(), aut: c.aut, weight, analytic, contribution })
        })
        .collect::<Result<_, AssembleError>>()?;
    let sum = terms.iter().fold(Number::zero(), |acc, t| acc.add(&t.contribution));
    report.total = sum.mul_q(&torsion);
    report.ignored_keys = source.analytic_weights.keys().filter(|k| !terms.iter().any(|t| &t.key == *k)).cloned().collect();
    report.terms = terms;
    Ok(report)
}

/// Thread cap from `RWK_THREADS`; `None` means all cores.
pub fn thread_cap() -> Option<usize> {
    std::env::var("RWK_THREADS").ok()?.trim().parse::<usize>().ok().filter(|&k| k > 0)
}

/// Runs `f` on a rayon pool honouring `RWK_THREADS`.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R, AssembleError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_cap() {
        b = b.num_threads(k);
    }
    let pool = b.build().map_err(|e| AssembleError::Threads(e.to_string()))?;
    Ok(pool.install(f))
}
