use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{canonical, Edge, Graph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub val_frac: f64,
    pub test_frac: f64,
    /// Fraction of test positives (and matching negatives) actually scored.
    /// Dropped positives stay out of training. `None` scores all of them.
    pub eval_subsample: Option<f64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            val_frac: 0.05,
            test_frac: 0.10,
            eval_subsample: None,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..1.0).contains(&f);
        if !ok(self.val_frac) || !ok(self.test_frac) || self.val_frac + self.test_frac >= 1.0 {
            return Err(Error::Config(format!(
                "split fractions must be non-negative with val + test < 1 (got {} + {})",
                self.val_frac, self.test_frac
            )));
        }
        if let Some(s) = self.eval_subsample {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Config(format!("eval_subsample must be in (0, 1], got {s}")));
            }
        }
        Ok(())
    }
}

/// Held-out link-prediction protocol: disjoint positive partitions plus
/// balanced negatives for validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_hash: Option<String>,
    pub train_pos: Vec<Edge>,
    pub val_pos: Vec<Edge>,
    pub val_neg: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub test_neg: Vec<Edge>,
}

impl EdgeSplit {
    /// Checks the partition and negative-validity invariants against `g`.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGraph(m));
        let mut seen: HashSet<Edge> = HashSet::new();
        for (name, part) in [("train_pos", &self.train_pos), ("val_pos", &self.val_pos), ("test_pos", &self.test_pos)] {
            for &(u, v) in part {
                let e = canonical(u, v);
                if !g.has_edge(u, v) {
                    return bad(format!("{name} edge {e:?} is not in the graph"));
                }
                if !seen.insert(e) {
                    return bad(format!("{name} edge {e:?} appears in more than one partition"));
                }
            }
        }
        for (name, part) in [("val_neg", &self.val_neg), ("test_neg", &self.test_neg)] {
            for &(u, v) in part {
                if u == v || u >= g.node_count() || v >= g.node_count() {
                    return bad(format!("{name} pair ({u}, {v}) is invalid"));
                }
                if g.has_edge(u, v) {
                    return bad(format!("{name} pair ({u}, {v}) is a true edge"));
                }
            }
        }
        if self.val_neg.len() != self.val_pos.len() || self.test_neg.len() != self.test_pos.len() {
            return bad("negatives are not balanced with positives".into());
        }
        Ok(())
    }

    /// All held-out negatives, used to keep training negatives disjoint.
    pub fn held_out_negatives(&self) -> HashSet<Edge> {
        self.val_neg
            .iter()
            .chain(&self.test_neg)
            .map(|&(u, v)| canonical(u, v))
            .collect()
    }
}

/// Uniformly samples `count` distinct non-edges `(u, v)`, `u < v`, that are
/// not in `exclude`.
pub fn sample_negatives<R: Rng>(g: &Graph, count: usize, exclude: &HashSet<Edge>, rng: &mut R) -> Result<Vec<Edge>> {
    let n = g.node_count();
    let excluded_non_edges = exclude
        .iter()
        .filter(|&&(u, v)| u != v && u < n && v < n && !g.has_edge(u, v))
        .count();
    let available = g.non_edge_count() - excluded_non_edges;
    if count > available {
        return Err(Error::InfeasibleNegatives {
            requested: count,
            available,
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if count * 2 > available {
        let mut pool = Vec::with_capacity(available);
        for u in 0..n {
            for v in u + 1..n {
                if !g.has_edge(u, v) && !exclude.contains(&(u, v)) {
                    pool.push((u, v));
                }
            }
        }
        return Ok(pool.choose_multiple(rng, count).copied().collect());
    }
    let mut chosen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let e = canonical(u, v);
        if g.has_edge(u, v) || exclude.contains(&e) || !chosen.insert(e) {
            continue;
        }
        out.push(e);
    }
    Ok(out)
}

fn count_for(m: usize, frac: f64) -> usize {
    (m as f64 * frac + 1e-9).floor() as usize
}

/// Random partition of the edges into train/val/test positives with
/// balanced negatives. Pure function of `(g, config, seed)`.
pub fn split_edges(g: &Graph, config: &SplitConfig, seed: u64) -> Result<EdgeSplit> {
    config.validate()?;
    let m = g.edge_count();
    if m < 10 {
        return Err(Error::InsufficientData(format!("need at least 10 edges to split, got {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng);
    let n_val = count_for(m, config.val_frac);
    let n_test = count_for(m, config.test_frac);
    let mut val_pos = edges[..n_val].to_vec();
    let mut test_pos = edges[n_val..n_val + n_test].to_vec();
    let mut train_pos = edges[n_val + n_test..].to_vec();
    if let Some(f) = config.eval_subsample {
        let keep = ((test_pos.len() as f64 * f).ceil() as usize).clamp(1.min(test_pos.len()), test_pos.len());
        test_pos.truncate(keep);
    }

    let mut val_neg = sample_negatives(g, val_pos.len(), &HashSet::new(), &mut rng)?;
    let taken: HashSet<Edge> = val_neg.iter().copied().collect();
    let mut test_neg = sample_negatives(g, test_pos.len(), &taken, &mut rng)?;

    for part in [&mut train_pos, &mut val_pos, &mut val_neg, &mut test_pos, &mut test_neg] {
        part.sort_unstable();
    }
    Ok(EdgeSplit {
        seed,
        graph_hash: Some(g.content_hash()),
        train_pos,
        val_pos,
        val_neg,
        test_pos,
        test_neg,
    })
}
