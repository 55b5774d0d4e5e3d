//! Link-prediction ranking metrics.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeSplit};
use crate::model::{decode_pairs, GgtVae};
use crate::numerics::Tensor;

/// Scores with binary labels. Both classes must be present.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEdges {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredEdges {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape {
                op: "scored_edges",
                left: (scores.len(), 1),
                right: (labels.len(), 1),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "scored_edges" });
        }
        if !labels.iter().any(|l| *l) {
            return Err(Error::UndefinedMetric("no positive labels"));
        }
        if labels.iter().all(|l| *l) {
            return Err(Error::UndefinedMetric("no negative labels"));
        }
        Ok(Self { scores, labels })
    }

    /// Positives first, then negatives.
    pub fn from_pos_neg(pos: &[f64], neg: &[f64]) -> Result<Self> {
        let scores = pos.iter().chain(neg).copied().collect();
        let labels = std::iter::repeat_n(true, pos.len())
            .chain(std::iter::repeat_n(false, neg.len()))
            .collect();
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }
}

/// Mann-Whitney ROC-AUC. Tied scores share their average rank, which gives
/// a tied positive/negative pair half credit.
pub fn roc_auc(s: &ScoredEdges) -> f64 {
    let n = s.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| s.labels[k]).count() as f64;
        i = j + 1;
    }
    let p = s.positives() as f64;
    let q = (n - s.positives()) as f64;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * q)
}

/// `AP = Σ_k (R(k) − R(k−1))·P(k)` over scores sorted descending. Equal
/// scores keep their input order.
pub fn average_precision(s: &ScoredEdges) -> f64 {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].partial_cmp(&s.scores[a]).unwrap_or(Ordering::Equal));
    let p = s.positives() as f64;
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        if s.labels[idx] {
            hits += 1;
            ap += hits as f64 / (k + 1) as f64;
        }
    }
    ap / p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub ap: f64,
}

impl Metrics {
    pub fn compute(s: &ScoredEdges) -> Self {
        Self {
            auc: roc_auc(s),
            ap: average_precision(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Val,
    Test,
}

impl FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown partition '{other}', expected val or test"))),
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

impl EdgeSplit {
    pub fn partition(&self, which: Which) -> (&[Edge], &[Edge]) {
        match which {
            Which::Val => (&self.val_pos, &self.val_neg),
            Which::Test => (&self.test_pos, &self.test_neg),
        }
    }
}

/// Scores a stored positive/negative partition against fixed latents.
pub fn score_partition(z: &Tensor, pos: &[Edge], neg: &[Edge]) -> Result<Metrics> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InsufficientData("empty evaluation partition".into()));
    }
    let s = ScoredEdges::from_pos_neg(&decode_pairs(z, pos)?, &decode_pairs(z, neg)?)?;
    Ok(Metrics::compute(&s))
}

fn check_disjoint(split: &EdgeSplit) -> Result<()> {
    let val: HashSet<Edge> = split.val_pos.iter().chain(&split.val_neg).copied().collect();
    if let Some(e) = split.test_pos.iter().chain(&split.test_neg).find(|e| val.contains(e)) {
        return Err(Error::InvalidGraph(format!("edge {e:?} is in both val and test partitions")));
    }
    Ok(())
}

/// Deterministic encode (`Z = μ`) followed by scoring of the requested
/// partition.
pub fn evaluate_split(model: &GgtVae, features: &Tensor, pe: &Tensor, split: &EdgeSplit, which: Which) -> Result<Metrics> {
    check_disjoint(split)?;
    let out = model.encode(features, pe, false)?;
    let (pos, neg) = split.partition(which);
    score_partition(&out.z, pos, neg)
}
