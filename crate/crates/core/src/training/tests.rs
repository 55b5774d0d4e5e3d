use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::eval::evaluate_split;
use crate::graph::synthetic::{sbm, NodeFeatures};
use crate::model::{encoder, Mode};
use crate::numerics::grad_check;

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        hidden: 8,
        latent: 4,
        pe_dim: 4,
        ffn_mult: 2,
    }
}

fn output(mu: Tensor, logvar: Tensor) -> ForwardOutput {
    ForwardOutput {
        z: mu.clone(),
        mu,
        logvar,
        attention: None,
    }
}

#[test]
fn kl_matches_prior() {
    assert_eq!(kl_divergence(&Tensor::zeros(5, 3), &Tensor::zeros(5, 3)).unwrap(), 0.0);
}

#[test]
fn kl_unit_mean_shift() {
    let kl = kl_divergence(&Tensor::filled(4, 1, 1.0), &Tensor::zeros(4, 1)).unwrap();
    assert!((kl - 0.5).abs() < 1e-15);
}

/// `KL(N(μ, σ²) ‖ N(0, 1)) = ln(1/σ) + (σ² + μ²)/2 − ½` per coordinate.
fn gaussian_kl(mu: f64, sigma: f64) -> f64 {
    (1.0 / sigma).ln() + (sigma * sigma + mu * mu) / 2.0 - 0.5
}

#[test]
fn kl_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mu = Tensor::from_fn(6, 3, |_, _| rng.random_range(-2.0..2.0));
    let lv = Tensor::from_fn(6, 3, |_, _| rng.random_range(-3.0..3.0));
    let mut expect = 0.0;
    for i in 0..18 {
        expect += gaussian_kl(mu.data()[i], (0.5 * lv.data()[i]).exp());
    }
    expect /= 6.0;
    assert!((kl_divergence(&mu, &lv).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn perfect_decoder_recon_bounded_by_clamp() {
    let big = 20.0;
    let z = Tensor::from_rows(&[vec![big, 0.0], vec![big, 0.0], vec![0.0, big], vec![-big, 0.0]]).unwrap();
    let out = output(z, Tensor::zeros(4, 2));
    let loss = compute_loss(&out, &[(0, 1)], &[(0, 3)], 0.0).unwrap();
    assert!(loss.recon > 0.0 && loss.recon < 2e-7, "{}", loss.recon);
}

#[test]
fn unbalanced_samples_rejected() {
    let out = output(Tensor::zeros(4, 2), Tensor::zeros(4, 2));
    assert!(compute_loss(&out, &[(0, 1), (1, 2)], &[(0, 3)], 0.5).is_err());
    assert!(compute_loss(&out, &[], &[], 0.5).is_err());
    assert!(compute_loss(&out, &[(0, 0)], &[(0, 3)], 0.5).is_err());
}

#[test]
fn zero_beta_is_pure_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mu = Tensor::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
    let lv = Tensor::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
    let loss = compute_loss(&output(mu, lv), &[(0, 1), (2, 3)], &[(0, 4), (1, 3)], 0.0).unwrap();
    assert_eq!(loss.total, loss.recon);
    assert!(loss.kl > 0.0);
}

#[test]
fn tape_loss_matches_value_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu = Tensor::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
    let lv = Tensor::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
    let z = Tensor::from_fn(6, 3, |_, _| rng.random_range(-2.0..2.0));
    let pos = [(0, 1), (2, 3), (4, 5)];
    let neg = [(0, 5), (1, 4), (2, 5)];
    let mut tape = Tape::new();
    let (m, l, zv) = (tape.constant(mu.clone()), tape.constant(lv.clone()), tape.constant(z.clone()));
    let vars = loss_on(&mut tape, m, l, zv, &pos, &neg, 0.37).unwrap();
    let out = ForwardOutput {
        mu,
        logvar: lv,
        z,
        attention: None,
    };
    let value = compute_loss(&out, &pos, &neg, 0.37).unwrap();
    assert!((tape.scalar(vars.recon) - value.recon).abs() < 1e-12);
    assert!((tape.scalar(vars.kl) - value.kl).abs() < 1e-12);
    assert!((tape.scalar(vars.total) - value.total).abs() < 1e-12);
}

#[test]
fn full_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 8,
        latent: 3,
        pe_dim: 3,
        ffn_mult: 2,
    };
    let model = GgtVae::new(cfg, 4, &mut rng).unwrap();
    let x = Tensor::from_fn(7, 4, |_, _| rng.random_range(-1.0..1.0));
    let pe = Tensor::from_fn(7, 3, |_, _| rng.random_range(-0.5..0.5));
    let eps = crate::model::sample_noise(7, 3, &mut rng);
    let pos = [(0, 1), (1, 2), (3, 4), (5, 6)];
    let neg = [(0, 6), (2, 5), (1, 4), (0, 3)];
    let r = grad_check(&model.params.flat(), |t, vars| {
        let bound = model.params.rebuild(vars)?;
        let (xv, pv) = (t.constant(x.clone()), t.constant(pe.clone()));
        let enc = encoder::encode_on(t, xv, pv, &bound, false)?;
        let z = encoder::reparameterize_on(t, enc.mu, enc.logvar, eps.clone())?;
        Ok(loss_on(t, enc.mu, enc.logvar, z, &pos, &neg, 0.3)?.total)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

proptest! {
    #[test]
    fn kl_is_nonnegative(
        mu in proptest::collection::vec(-10.0f64..10.0, 12),
        lv in proptest::collection::vec(-20.0f64..10.0, 12),
    ) {
        let mu = Tensor::from_vec(4, 3, mu).unwrap();
        let lv = Tensor::from_vec(4, 3, lv).unwrap();
        prop_assert!(kl_divergence(&mu, &lv).unwrap() >= 0.0);
    }
}

#[test]
fn early_stopping_worsening_metric() {
    let mut s = EarlyStopping::new(1);
    assert_eq!(s.observe(1, 0.8), StopStep { improved: true, stop: false });
    assert_eq!(s.observe(2, 0.7), StopStep { improved: false, stop: true });
    assert_eq!(s.evaluations, 2);
    assert_eq!(s.best_epoch, 1);
}

#[test]
fn early_stopping_ties_do_not_reset() {
    let mut s = EarlyStopping::new(3);
    s.observe(1, 0.5);
    s.observe(2, 0.6);
    s.observe(3, 0.6);
    s.observe(4, 0.55);
    assert!(!s.observe(5, 0.6).improved);
    assert_eq!(s.since_best, 3);
    assert_eq!(s.best_epoch, 2);
}

fn probe_graph(seed: u64) -> Graph {
    sbm(&[25, 25], 0.3, 0.02, NodeFeatures::Gaussian(4), seed)
}

fn setup(graph: &Graph, seed: u64, cfg: ModelConfig) -> (EdgeSplit, Tensor, GgtVae) {
    let split = split_edges(graph, &SplitConfig::default(), seed).unwrap();
    let pe = train_pe(graph, &split, cfg.pe_dim, None).unwrap();
    let model = GgtVae::new(cfg, graph.feature_dim(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (split, pe, model)
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let g = probe_graph(5);
    let (split, pe, mut model) = setup(&g, 5, tiny_model_config());
    let before = model.params.clone();
    let data = TrainData {
        graph: &g,
        split: &split,
        pe: &pe,
    };
    let mut opt = AdamW::new(AdamWConfig {
        lr: 0.0,
        ..AdamWConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    train_epoch(&mut model, &data, &data.excluded_negatives(), &mut opt, 0.5e-3, 1, &mut rng).unwrap();
    for ((_, a), (_, b)) in before.named().into_iter().zip(model.params.named()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn reconstruction_loss_falls_over_20_epochs() {
    let g = probe_graph(6);
    let (split, pe, mut model) = setup(&g, 6, tiny_model_config());
    let data = TrainData {
        graph: &g,
        split: &split,
        pe: &pe,
    };
    let mut opt = AdamW::new(AdamWConfig {
        lr: 1e-2,
        ..AdamWConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let exclude = data.excluded_negatives();
    let losses: Vec<EpochLoss> = (1..=20)
        .map(|e| train_epoch(&mut model, &data, &exclude, &mut opt, 0.5e-3, e, &mut rng).unwrap())
        .collect();
    assert!(losses[19].recon < losses[0].recon, "{losses:?}");
}

fn short_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 15,
        lr: 1e-2,
        patience: 5,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn fit_is_deterministic_and_consistent() {
    let g = probe_graph(7);
    let (split, pe, model) = setup(&g, 7, tiny_model_config());
    let data = TrainData {
        graph: &g,
        split: &split,
        pe: &pe,
    };
    let mut a = model.clone();
    let mut b = model;
    let ra = fit(&mut a, &data, &short_config(7)).unwrap();
    let rb = fit(&mut b, &data, &short_config(7)).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);

    assert!(ra.best_epoch >= 1 && ra.best_epoch <= ra.epochs_run);
    let best = ra
        .loss_curve
        .iter()
        .filter_map(|r| r.val_auc.map(|v| (r.epoch, v)))
        .fold((0, f64::NEG_INFINITY), |acc, (e, v)| if v > acc.1 { (e, v) } else { acc });
    assert_eq!(best, (ra.best_epoch, ra.val_auc));

    let again = evaluate_split(&a, g.features(), &pe, &split, Which::Val).unwrap();
    assert_eq!(again.auc, ra.val_auc);
    let test = evaluate_split(&a, g.features(), &pe, &split, Which::Test).unwrap();
    assert_eq!((test.auc, test.ap), (ra.test_auc, ra.test_ap));
    for m in [ra.val_auc, ra.val_ap, ra.test_auc, ra.test_ap] {
        assert!((0.0..=1.0).contains(&m));
    }
}

#[test]
fn fit_stops_within_patience() {
    let g = probe_graph(8);
    let (split, pe, mut model) = setup(&g, 8, tiny_model_config());
    let data = TrainData {
        graph: &g,
        split: &split,
        pe: &pe,
    };
    let cfg = TrainConfig {
        epochs: 60,
        lr: 1e-6,
        patience: 2,
        ..short_config(8)
    };
    let r = fit(&mut model, &data, &cfg).unwrap();
    assert!(r.epochs_run <= r.best_epoch + 2);
    assert_eq!(r.loss_curve.len(), r.epochs_run);
}

#[test]
fn invalid_config_rejected() {
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn aggregate_matches_recomputation() {
    let runs: Vec<RunResult> = [(3, 0.9, 0.8), (1, 0.7, 0.75), (2, 0.8, 0.95)]
        .iter()
        .map(|&(seed, auc, ap)| RunResult {
            seed,
            best_epoch: 1,
            epochs_run: 1,
            val_auc: 0.5,
            val_ap: 0.5,
            test_auc: auc,
            test_ap: ap,
            loss_curve: vec![],
        })
        .collect();
    let agg = Aggregate::from_results(&runs).unwrap();
    assert!((agg.mean_auc - 0.8).abs() < 1e-12);
    assert!((agg.std_auc.unwrap() - 0.1).abs() < 1e-12);
    let mean_ap = (0.8 + 0.75 + 0.95) / 3.0;
    let var_ap = [0.8f64, 0.75, 0.95].iter().map(|x| (x - mean_ap).powi(2)).sum::<f64>() / 2.0;
    assert!((agg.std_ap.unwrap() - var_ap.sqrt()).abs() < 1e-12);
    let mut reversed = runs.clone();
    reversed.reverse();
    assert_eq!(Aggregate::from_results(&reversed).unwrap(), agg);
    assert_eq!(agg.n_seeds, 3);
    assert!(Aggregate::from_results(&runs[..1]).unwrap().std_auc.is_none());
    assert!(agg.summary().starts_with("AUC 80.00 ± 10.00 / AP"));
}

#[test]
fn repeated_seed_has_zero_spread() {
    let g = probe_graph(9);
    let cfg = TrainConfig {
        epochs: 3,
        ..short_config(0)
    };
    let (runs, agg) = multi_seed(&g, &tiny_model_config(), &cfg, &SplitConfig::default(), &[4, 4], None).unwrap();
    assert_eq!(runs[0].result, runs[1].result);
    assert_eq!(agg.std_auc, Some(0.0));
    assert_eq!(runs[0].split.graph_hash.as_deref(), Some(g.content_hash().as_str()));
}

#[test]
fn eval_mode_latent_is_mean() {
    let g = probe_graph(10);
    let (_, pe, model) = setup(&g, 10, tiny_model_config());
    let out = model.encode(g.features(), &pe, false).unwrap();
    let z = crate::model::reparameterize(&out.mu, &out.logvar, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(z, out.z);
}
