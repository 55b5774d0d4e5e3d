use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoder::{multi_head_attention_on, transformer_layer_on};
use super::*;
use crate::graph::synthetic::erdos_renyi;
use crate::graph::{normalized_laplacian, TrainAdjacency};
use crate::numerics::{grad_check, softmax_rows};
use crate::spectral::laplacian_pe;

fn small_config(layers: usize) -> ModelConfig {
    ModelConfig {
        layers,
        heads: 2,
        hidden: 8,
        latent: 3,
        pe_dim: 3,
        ffn_mult: 2,
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn zero_all(p: &mut ModelParams) {
    for (_, t) in p.named_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    let bad = ModelConfig {
        hidden: 10,
        heads: 4,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    let zero = ModelConfig {
        latent: 0,
        ..ModelConfig::default()
    };
    assert!(zero.validate().is_err());
    assert!(small_config(0).validate().is_ok());
}

#[test]
fn parameter_shapes_and_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = ModelConfig::default();
    let m = GgtVae::new(cfg, 10, &mut rng).unwrap();
    let named = m.params.named();
    assert!(named.windows(2).all(|w| w[0].0 < w[1].0));
    let get = |n: &str| named.iter().find(|(k, _)| k == n).unwrap().1.shape();
    assert_eq!(get("embed.w_x"), (10, 128));
    assert_eq!(get("embed.w_p"), (16, 128));
    assert_eq!(get("layer03.attn.head03.w_q"), (128, 32));
    assert_eq!(get("layer00.attn.w_o"), (128, 128));
    assert_eq!(get("layer00.ffn.w1"), (128, 256));
    assert_eq!(get("layer00.ffn.w2"), (256, 128));
    assert_eq!(get("mu.w"), (128, 32));
    assert_eq!(get("logvar.b"), (1, 32));
    assert!(m.params.is_finite());
    let ln = named.iter().find(|(k, _)| k == "layer01.norm2.gamma").unwrap().1;
    assert!(ln.data().iter().all(|v| *v == 1.0));
}

#[test]
fn embed_zero_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    let h = m.embed(&Tensor::zeros(5, 4), &Tensor::zeros(5, 3)).unwrap();
    assert!(h.data().iter().all(|v| *v == 0.0));
}

#[test]
fn embed_ignores_pe_when_projection_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    m.params.w_p = Tensor::zeros(3, 8);
    let x = rand_tensor(&mut rng, 5, 4);
    let h = m.embed(&x, &rand_tensor(&mut rng, 5, 3)).unwrap();
    assert_eq!(h, x.matmul(&m.params.w_x).unwrap());
}

#[test]
fn embed_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    let (x1, x2, p) = (rand_tensor(&mut rng, 6, 4), rand_tensor(&mut rng, 6, 4), rand_tensor(&mut rng, 6, 3));
    let sum = Tensor::from_vec(6, 4, x1.data().iter().zip(x2.data()).map(|(a, b)| a + b).collect()).unwrap();
    let lhs = m.embed(&sum, &p).unwrap();
    let a = m.embed(&x1, &p).unwrap();
    let b = m.embed(&x2, &Tensor::zeros(6, 3)).unwrap();
    for i in 0..lhs.len() {
        assert!((lhs.data()[i] - a.data()[i] - b.data()[i]).abs() < 1e-12);
    }
}

fn run_mha(layer: &LayerParams<Tensor>, input: &Tensor) -> (Tensor, Vec<Tensor>) {
    let mut tape = Tape::new();
    let bound = LayerParams {
        heads: layer
            .heads
            .iter()
            .map(|h| HeadParams {
                w_q: tape.constant(h.w_q.clone()),
                w_k: tape.constant(h.w_k.clone()),
                w_v: tape.constant(h.w_v.clone()),
            })
            .collect(),
        w_o: tape.constant(layer.w_o.clone()),
        norm1_gamma: tape.constant(layer.norm1_gamma.clone()),
        norm1_beta: tape.constant(layer.norm1_beta.clone()),
        ffn_w1: tape.constant(layer.ffn_w1.clone()),
        ffn_b1: tape.constant(layer.ffn_b1.clone()),
        ffn_w2: tape.constant(layer.ffn_w2.clone()),
        ffn_b2: tape.constant(layer.ffn_b2.clone()),
        norm2_gamma: tape.constant(layer.norm2_gamma.clone()),
        norm2_beta: tape.constant(layer.norm2_beta.clone()),
    };
    let h = tape.constant(input.clone());
    let mut attn = Vec::new();
    let out = multi_head_attention_on(&mut tape, h, &bound, Some(&mut attn)).unwrap();
    (tape.value(out).clone(), attn)
}

#[test]
fn zero_query_key_gives_uniform_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    for h in &mut m.params.layers[0].heads {
        h.w_q = Tensor::zeros(8, 4);
        h.w_k = Tensor::zeros(8, 4);
    }
    let (_, attn) = run_mha(&m.params.layers[0], &rand_tensor(&mut rng, 7, 8));
    for a in attn {
        assert!(a.data().iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
    }
}

#[test]
fn single_node_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    let layer = &m.params.layers[0];
    let x = rand_tensor(&mut rng, 1, 8);
    let (out, attn) = run_mha(layer, &x);
    assert!(attn.iter().all(|a| a.data() == [1.0]));
    let heads: Vec<f64> = layer
        .heads
        .iter()
        .flat_map(|h| x.matmul(&h.w_v).unwrap().into_data())
        .collect();
    let expect = Tensor::from_vec(1, 8, heads).unwrap().matmul(&layer.w_o).unwrap();
    assert!(out.max_abs_diff(&expect) < 1e-14);
}

/// Head-by-head attention with explicit loops.
fn naive_mha(layer: &LayerParams<Tensor>, x: &Tensor) -> (Tensor, Vec<Tensor>) {
    let n = x.rows();
    let d = x.cols();
    let mut concat = vec![vec![0.0; 0]; n];
    let mut attns = Vec::new();
    for head in &layer.heads {
        let dk = head.w_q.cols();
        let proj = |w: &Tensor| {
            let mut out = vec![vec![0.0; dk]; n];
            for i in 0..n {
                for j in 0..dk {
                    for k in 0..d {
                        out[i][j] += x.get(i, k) * w.get(k, j);
                    }
                }
            }
            out
        };
        let (q, k, v) = (proj(&head.w_q), proj(&head.w_k), proj(&head.w_v));
        let mut a = Tensor::zeros(n, n);
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for j in 0..n {
                for c in 0..dk {
                    logits[j] += q[i][c] * k[j][c];
                }
                logits[j] /= (dk as f64).sqrt();
            }
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for j in 0..n {
                a.set(i, j, (logits[j] - mx).exp() / z);
            }
        }
        for i in 0..n {
            for c in 0..dk {
                let mut s = 0.0;
                for j in 0..n {
                    s += a.get(i, j) * v[j][c];
                }
                concat[i].push(s);
            }
        }
        attns.push(a);
    }
    let mut out = Tensor::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += concat[i][k] * layer.w_o.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    (out, attns)
}

#[test]
fn attention_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, 6, 8);
    let (out, attn) = run_mha(&m.params.layers[0], &x);
    let (expect, expect_attn) = naive_mha(&m.params.layers[0], &x);
    assert!(out.max_abs_diff(&expect) < 1e-12);
    for (a, b) in attn.iter().zip(&expect_attn) {
        assert!(a.max_abs_diff(b) < 1e-12);
        for i in 0..6 {
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

fn layer_norm_rows(x: &Tensor) -> Tensor {
    let n = x.cols() as f64;
    Tensor::from_fn(x.rows(), x.cols(), |i, j| {
        let r = x.row(i);
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (x.get(i, j) - mean) / (var + encoder::LAYER_NORM_EPS).sqrt()
    })
}

#[test]
fn zero_weight_layer_collapses_to_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    zero_all(&mut m.params);
    let layer = &mut m.params.layers[0];
    layer.norm1_gamma = Tensor::filled(1, 8, 1.0);
    layer.norm2_gamma = Tensor::filled(1, 8, 1.0);
    let x = rand_tensor(&mut rng, 5, 8);
    let mut tape = Tape::new();
    let bound = m.params.map(|_, t| tape.constant(t.clone()));
    let h = tape.constant(x.clone());
    let out = transformer_layer_on(&mut tape, h, &bound.layers[0], None).unwrap();
    let expect = layer_norm_rows(&layer_norm_rows(&x));
    assert_eq!(tape.value(out).shape(), (5, 8));
    assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);
}

#[test]
fn transformer_layer_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, 8, 8);
    let w = rand_tensor(&mut rng, 8, 8);
    let flat = m.params.flat();
    let r = grad_check(&flat, |t, vars| {
        let bound = m.params.rebuild(vars)?;
        let h = t.constant(x.clone());
        let out = transformer_layer_on(t, h, &bound.layers[0], None)?;
        // Weighted sum: a plain sum of a LayerNorm output is constant.
        let w = t.constant(w.clone());
        let out = t.mul(out, w)?;
        t.sum(out)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

fn probe_inputs(n: usize, d: usize, k: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rand_tensor(&mut rng, n, d), rand_tensor(&mut rng, n, k))
}

#[test]
fn encode_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = GgtVae::new(small_config(2), 4, &mut rng).unwrap();
    let (x, p) = probe_inputs(7, 4, 3, 1);
    let a = m.encode(&x, &p, true).unwrap();
    let b = m.encode(&x, &p, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.z, a.mu);
}

#[test]
fn empty_stack_encodes_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = GgtVae::new(small_config(0), 4, &mut rng).unwrap();
    let (x, p) = probe_inputs(5, 4, 3, 2);
    let out = m.encode(&x, &p, false).unwrap();
    let h0 = m.embed(&x, &p).unwrap();
    assert!(out.mu.max_abs_diff(&h0.matmul(&m.params.w_mu).unwrap()) < 1e-14);
}

#[test]
fn captured_attention_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = GgtVae::new(small_config(3), 4, &mut rng).unwrap();
    let (x, p) = probe_inputs(9, 4, 3, 3);
    let rec = m.encode(&x, &p, true).unwrap().attention.unwrap();
    assert_eq!((rec.num_layers(), rec.num_heads()), (3, 2));
    assert!(rec.layers.iter().flatten().all(|a| a.shape() == (9, 9)));
    assert!(rec.max_row_sum_error() < 1e-6);
    assert!(m.encode(&x, &p, false).unwrap().attention.is_none());
}

#[test]
fn encode_rejects_bad_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = GgtVae::new(small_config(1), 4, &mut rng).unwrap();
    assert!(m.encode(&Tensor::zeros(5, 3), &Tensor::zeros(5, 3), false).is_err());
    assert!(m.encode(&Tensor::zeros(5, 4), &Tensor::zeros(4, 3), false).is_err());
}

#[test]
fn reparameterize_vanishing_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mu = rand_tensor(&mut rng, 4, 3);
    let lv = Tensor::filled(4, 3, -100.0);
    let z = reparameterize(&mu, &lv, Mode::Train, &mut rng).unwrap();
    assert!(z.max_abs_diff(&mu) < 1e-20);
}

#[test]
fn reparameterize_eval_mode_is_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mu = rand_tensor(&mut rng, 4, 3);
    let lv = rand_tensor(&mut rng, 4, 3);
    assert_eq!(reparameterize(&mu, &lv, Mode::Eval, &mut rng).unwrap(), mu);
}

#[test]
fn reparameterize_monte_carlo_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let n = 100_000;
    let z = reparameterize(&Tensor::zeros(n, 1), &Tensor::zeros(n, 1), Mode::Train, &mut rng).unwrap();
    let mean = z.data().iter().sum::<f64>() / n as f64;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 0.02, "{mean}");
    assert!((var - 1.0).abs() < 0.02, "{var}");
}

#[test]
fn decode_pairs_examples() {
    let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
    assert_eq!(decode_pairs(&z, &[(0, 1)]).unwrap(), vec![0.5]);
    let s = 2.1972_f64.sqrt() / 2.0_f64.sqrt();
    let z = Tensor::from_rows(&[vec![s, s], vec![s, s]]).unwrap();
    let p = decode_pairs(&z, &[(0, 1)]).unwrap()[0];
    assert!((p - 0.9).abs() < 1e-4, "{p}");
    assert!(decode_pairs(&z, &[(1, 1)]).is_err());
    assert!(decode_pairs(&z, &[(0, 2)]).is_err());
}

#[test]
fn decode_pairs_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let z = rand_tensor(&mut rng, 6, 4);
    for u in 0..6 {
        for v in 0..6 {
            if u != v {
                assert_eq!(decode_pairs(&z, &[(u, v)]).unwrap(), decode_pairs(&z, &[(v, u)]).unwrap());
            }
        }
    }
}

#[test]
fn decode_full_identity_latents() {
    let a = decode_full(&Tensor::identity(4));
    for u in 0..4 {
        for v in 0..4 {
            assert_eq!(a.get(u, v), if u == v { 0.0 } else { 0.5 });
        }
    }
}

#[test]
fn decode_full_matches_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let z = rand_tensor(&mut rng, 7, 3);
    let a = decode_full(&z);
    assert_eq!(a, a.transpose());
    for u in 0..7 {
        assert_eq!(a.get(u, u), 0.0);
        for v in 0..7 {
            if u != v {
                assert_eq!(a.get(u, v), decode_pairs(&z, &[(u, v)]).unwrap()[0]);
            }
        }
    }
}

#[test]
fn zero_latent_is_neutral() {
    let z = Tensor::zeros(5, 3);
    let a = decode_full(&z);
    for u in 0..5 {
        for v in 0..5 {
            if u != v {
                assert_eq!(a.get(u, v), 0.5);
            }
        }
    }
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    // row perm[i] of the output is row i of the input
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for (i, &pi) in perm.iter().enumerate() {
        out.row_mut(pi).copy_from_slice(t.row(i));
    }
    out
}

#[test]
fn encoder_is_permutation_equivariant() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let cfg = ModelConfig {
        pe_dim: 4,
        ..small_config(2)
    };
    let m = GgtVae::new(cfg, 3, &mut rng).unwrap();
    let mut checked = 0;
    for _ in 0..200 {
        if checked == 5 {
            break;
        }
        let g = erdos_renyi(8, 0.45, rng.random());
        let adj = TrainAdjacency::from_edges(8, g.edges()).unwrap();
        let spectrum = crate::spectral::eigh_symmetric(&normalized_laplacian(&adj)).unwrap().values;
        if adj.components().len() != 1 || spectrum.windows(2).any(|w| w[1] - w[0] < 1e-3) {
            continue;
        }
        let pe = laplacian_pe(&adj, 4).unwrap().matrix;
        let x = rand_tensor(&mut rng, 8, 3);
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut rng);
        let edges_p: Vec<_> = adj.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let pe_p = laplacian_pe(&TrainAdjacency::from_edges(8, &edges_p).unwrap(), 4).unwrap().matrix;

        // PE of the relabelled graph is the relabelled PE up to column sign.
        let moved_pe = permute_rows(&pe, &perm);
        for j in 0..4 {
            let dot: f64 = (0..8).map(|i| moved_pe.get(i, j) * pe_p.get(i, j)).sum();
            let s = dot.signum();
            for i in 0..8 {
                assert!((moved_pe.get(i, j) * s - pe_p.get(i, j)).abs() < 1e-8);
            }
        }

        let base = m.encode(&x, &pe, false).unwrap();
        let moved = m.encode(&permute_rows(&x, &perm), &moved_pe, false).unwrap();
        assert!(moved.mu.max_abs_diff(&permute_rows(&base.mu, &perm)) < 1e-6);
        assert!(moved.logvar.max_abs_diff(&permute_rows(&base.logvar, &perm)) < 1e-6);
        checked += 1;
    }
    assert_eq!(checked, 5, "too few probe graphs with simple spectra");
}

#[test]
fn attention_rows_stochastic_across_random_models() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let m = GgtVae::new(small_config(2), 4, &mut rng).unwrap();
        let (x, p) = probe_inputs(10, 4, 3, seed);
        let x = Tensor::from_vec(10, 4, x.data().iter().map(|v| v * 50.0).collect()).unwrap();
        let rec = m.encode(&x, &p, true).unwrap().attention.unwrap();
        assert!(rec.max_row_sum_error() < 1e-6);
    }
}

#[test]
fn softmax_helper_agrees_with_tape() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = rand_tensor(&mut rng, 3, 5);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.softmax_rows(v).unwrap();
    assert_eq!(tape.value(y), &softmax_rows(&x));
}
