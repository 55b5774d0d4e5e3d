//! Loss assembly, the full-batch training loop with early stopping, and the
//! multi-seed runner.

use std::collections::HashSet;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{score_partition, Metrics, Which};
use crate::graph::{sample_negatives, split_edges, Edge, EdgeSplit, Graph, SplitConfig, TrainAdjacency};
use crate::model::{check_pairs, ForwardOutput, GgtVae, ModelConfig, ModelParams};
use crate::numerics::{bce_logit, AdamW, AdamWConfig, Tape, Tensor, Var};
use crate::spectral::{laplacian_pe, PeCache};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// KL weight.
    pub beta: f64,
    pub patience: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-3,
            weight_decay: 5e-4,
            beta: 0.5e-3,
            patience: 50,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config("train.beta must be >= 0".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

fn check_balanced(pos: &[Edge], neg: &[Edge]) -> Result<()> {
    if pos.len() != neg.len() {
        return Err(Error::InsufficientData(format!(
            "unbalanced loss samples: {} positives vs {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    if pos.is_empty() {
        return Err(Error::InsufficientData("no positive training edges".into()));
    }
    Ok(())
}

/// Handles for the three loss terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// `recon + β·kl` on the tape. `recon` is the mean BCE of `σ(z_u·z_v)` over
/// positives (target 1) and negatives (target 0); `kl` is summed over
/// latent dimensions and averaged over nodes.
pub fn loss_on(tape: &mut Tape, mu: Var, logvar: Var, z: Var, pos: &[Edge], neg: &[Edge], beta: f64) -> Result<LossVars> {
    check_balanced(pos, neg)?;
    let n = tape.value(z).rows();
    check_pairs(n, pos)?;
    check_pairs(n, neg)?;
    let pairs: Vec<Edge> = pos.iter().chain(neg).copied().collect();
    let targets: Vec<f64> = pos.iter().map(|_| 1.0).chain(neg.iter().map(|_| 0.0)).collect();
    let logits = tape.pair_dot(z, &pairs)?;
    let recon = tape.bce_with_logits(logits, &targets)?;

    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(logvar)?;
    let t = tape.sub(logvar, mu2)?;
    let t = tape.sub(t, var)?;
    let t = tape.add_scalar(t, 1.0)?;
    let s = tape.sum(t)?;
    let kl = tape.scale(s, -0.5 / n as f64)?;

    let weighted = tape.scale(kl, beta)?;
    let total = tape.add(recon, weighted)?;
    Ok(LossVars { total, recon, kl })
}

/// Plain-value loss for a finished forward pass.
pub fn compute_loss(out: &ForwardOutput, pos: &[Edge], neg: &[Edge], beta: f64) -> Result<LossParts> {
    check_balanced(pos, neg)?;
    let z = &out.z;
    check_pairs(z.rows(), pos)?;
    check_pairs(z.rows(), neg)?;
    let bce = |u: usize, v: usize, target: f64| {
        let dot: f64 = z.row(u).iter().zip(z.row(v)).map(|(a, b)| a * b).sum();
        bce_logit(dot, target)
    };
    let recon = (pos.iter().map(|&(u, v)| bce(u, v, 1.0)).sum::<f64>()
        + neg.iter().map(|&(u, v)| bce(u, v, 0.0)).sum::<f64>())
        / (pos.len() + neg.len()) as f64;
    let kl = kl_divergence(&out.mu, &out.logvar)?;
    Ok(LossParts {
        total: recon + beta * kl,
        recon,
        kl,
    })
}

/// `(1/N)·Σᵢ −½·Σⱼ (1 + logvarᵢⱼ − μᵢⱼ² − exp(logvarᵢⱼ))`.
pub fn kl_divergence(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    if mu.shape() != logvar.shape() {
        return Err(Error::Shape {
            op: "kl_divergence",
            left: mu.shape(),
            right: logvar.shape(),
        });
    }
    let s: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum();
    Ok(-0.5 * s / mu.rows() as f64)
}

/// Everything one training run reads. `pe` must come from the training
/// adjacency only.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub graph: &'a Graph,
    pub split: &'a EdgeSplit,
    pub pe: &'a Tensor,
}

impl TrainData<'_> {
    /// Stored validation and test negatives, kept out of the training
    /// negatives. True edges are always excluded by the sampler.
    pub fn excluded_negatives(&self) -> HashSet<Edge> {
        self.split.held_out_negatives()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub recon: f64,
    pub kl: f64,
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// One full-batch step: sample noise and fresh negatives, forward over all
/// nodes, backward, one AdamW update.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut GgtVae,
    data: &TrainData,
    exclude: &HashSet<Edge>,
    optimizer: &mut AdamW,
    beta: f64,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochLoss> {
    let pos = &data.split.train_pos;
    let mut tape = Tape::new();
    let fwd = model
        .forward_train(&mut tape, data.graph.features(), data.pe, rng)
        .map_err(|e| diverged(epoch, e))?;
    let neg = sample_negatives(data.graph, pos.len(), exclude, rng)?;
    let loss = loss_on(&mut tape, fwd.mu, fwd.logvar, fwd.z, pos, &neg, beta).map_err(|e| diverged(epoch, e))?;
    let (total, recon, kl) = (tape.scalar(loss.total), tape.scalar(loss.recon), tape.scalar(loss.kl));
    if !(total.is_finite() && recon.is_finite() && kl.is_finite()) {
        return Err(Error::Diverged {
            epoch,
            detail: format!("recon={recon} kl={kl} total={total}"),
        });
    }
    if kl < -1e-9 {
        return Err(Error::Diverged {
            epoch,
            detail: format!("negative KL {kl}"),
        });
    }
    tape.backward(loss.total).map_err(|e| diverged(epoch, e))?;
    model.params.collect_grads(&tape, &fwd.bound);
    optimizer.step(model.params.named_mut())?;
    if !model.params.is_finite() {
        return Err(Error::Diverged {
            epoch,
            detail: format!("parameters became non-finite (recon={recon} kl={kl})"),
        });
    }
    Ok(EpochLoss { recon, kl })
}

/// Patience counter over validation evaluations. Only strict improvements
/// reset it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_epoch: usize,
    pub best: f64,
    pub since_best: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopStep {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_epoch: 0,
            best: f64::NEG_INFINITY,
            since_best: 0,
            evaluations: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopStep {
        self.evaluations += 1;
        let improved = metric > self.best;
        if improved {
            self.best = metric;
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopStep {
            improved,
            stop: self.since_best >= self.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    /// Present on epochs where validation ran.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_auc: f64,
    pub val_ap: f64,
    pub test_auc: f64,
    pub test_ap: f64,
    pub loss_curve: Vec<EpochRecord>,
}

/// Trains with early stopping on validation ROC-AUC (`Z = μ`) and restores
/// the best-epoch parameters before scoring the test partition.
pub fn fit(model: &mut GgtVae, data: &TrainData, config: &TrainConfig) -> Result<RunResult> {
    config.validate()?;
    data.split.validate(data.graph)?;
    // Stream 0 of the same seed initializes the model in `run_seed`.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut optimizer = AdamW::new(config.optimizer());
    let exclude = data.excluded_negatives();
    let features = data.graph.features();

    let mut curve = Vec::with_capacity(config.epochs);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<(Metrics, ModelParams)> = None;
    for epoch in 1..=config.epochs {
        let loss = train_epoch(model, data, &exclude, &mut optimizer, config.beta, epoch, &mut rng)?;
        let mut record = EpochRecord {
            epoch,
            recon: loss.recon,
            kl: loss.kl,
            val_auc: None,
        };
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let z = model.encode(features, data.pe, false).map_err(|e| diverged(epoch, e))?.z;
            let (pos, neg) = data.split.partition(Which::Val);
            let val = score_partition(&z, pos, neg)?;
            record.val_auc = Some(val.auc);
            debug!("epoch {epoch}: recon {:.5} kl {:.5} val_auc {:.4}", loss.recon, loss.kl, val.auc);
            let step = stopper.observe(epoch, val.auc);
            if step.improved {
                best = Some((val, model.params.clone()));
            }
            curve.push(record);
            if step.stop {
                info!("early stop at epoch {epoch}");
                break;
            }
        } else {
            curve.push(record);
        }
    }
    let (val, params) = best.expect("validation runs on the final epoch");
    let best_epoch = stopper.best_epoch;
    model.params = params;
    let z = model.encode(features, data.pe, false)?.z;
    let (pos, neg) = data.split.partition(Which::Test);
    let test = score_partition(&z, pos, neg)?;
    Ok(RunResult {
        seed: config.seed,
        best_epoch,
        epochs_run: curve.len(),
        val_auc: val.auc,
        val_ap: val.ap,
        test_auc: test.auc,
        test_ap: test.ap,
        loss_curve: curve,
    })
}

/// Positional encoding from the training adjacency of `split`.
pub fn train_pe(graph: &Graph, split: &EdgeSplit, k: usize, cache: Option<&PeCache>) -> Result<Tensor> {
    let adj = TrainAdjacency::from_edges(graph.node_count(), &split.train_pos)?;
    let pe = match cache {
        Some(c) => c.load_or_compute(&adj, k)?,
        None => laplacian_pe(&adj, k)?,
    };
    Ok(pe.matrix)
}

/// Output of [`run_seed`].
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub split: EdgeSplit,
    pub model: GgtVae,
    pub result: RunResult,
}

/// Split, initialize and fit for a single seed. The split, the model
/// initialization and the training stream are all derived from `seed`.
pub fn run_seed(
    graph: &Graph,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    split_config: &SplitConfig,
    seed: u64,
    cache: Option<&PeCache>,
) -> Result<SeedRun> {
    let mut split = split_edges(graph, split_config, seed)?;
    split.graph_hash = Some(graph.content_hash());
    let pe = train_pe(graph, &split, model_config.pe_dim, cache)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GgtVae::new(*model_config, graph.feature_dim(), &mut init_rng)?;
    let config = TrainConfig { seed, ..*train_config };
    let data = TrainData {
        graph,
        split: &split,
        pe: &pe,
    };
    let result = fit(&mut model, &data, &config)?;
    info!(
        "seed {seed}: best epoch {} val_auc {:.4} test_auc {:.4} test_ap {:.4}",
        result.best_epoch, result.val_auc, result.test_auc, result.test_ap
    );
    Ok(SeedRun { split, model, result })
}

/// Sample mean and standard deviation over seeds. `std_*` is `None` with
/// fewer than two runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_auc: f64,
    pub std_auc: Option<f64>,
    pub mean_ap: f64,
    pub std_ap: Option<f64>,
    pub n_seeds: usize,
}

fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() >= 2).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

impl Aggregate {
    /// Runs are sorted by seed first, so the result does not depend on the
    /// order they finished in.
    pub fn from_results(results: &[RunResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::InsufficientData("no runs to aggregate".into()));
        }
        let mut sorted: Vec<&RunResult> = results.iter().collect();
        sorted.sort_by_key(|r| r.seed);
        let aucs: Vec<f64> = sorted.iter().map(|r| r.test_auc).collect();
        let aps: Vec<f64> = sorted.iter().map(|r| r.test_ap).collect();
        let (mean_auc, std_auc) = mean_std(&aucs);
        let (mean_ap, std_ap) = mean_std(&aps);
        Ok(Self {
            mean_auc,
            std_auc,
            mean_ap,
            std_ap,
            n_seeds: results.len(),
        })
    }

    /// `AUC 92.04 ± 0.60 / AP 92.66 ± 0.80` in percent.
    pub fn summary(&self) -> String {
        let fmt = |m: f64, s: Option<f64>| match s {
            Some(s) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
            None => format!("{:.2}", 100.0 * m),
        };
        format!("AUC {} / AP {}", fmt(self.mean_auc, self.std_auc), fmt(self.mean_ap, self.std_ap))
    }
}

/// Independent [`run_seed`] per seed; the first failure aborts.
pub fn multi_seed(
    graph: &Graph,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    split_config: &SplitConfig,
    seeds: &[u64],
    cache: Option<&PeCache>,
) -> Result<(Vec<SeedRun>, Aggregate)> {
    let runs = seeds
        .iter()
        .map(|&s| run_seed(graph, model_config, train_config, split_config, s, cache))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<RunResult> = runs.iter().map(|r| r.result.clone()).collect();
    let agg = Aggregate::from_results(&results)?;
    Ok((runs, agg))
}

#[cfg(test)]
mod tests;
