use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub heads: Vec<HeadParams<T>>,
    pub w_o: T,
    pub norm1_gamma: T,
    pub norm1_beta: T,
    pub ffn_w1: T,
    pub ffn_b1: T,
    pub ffn_w2: T,
    pub ffn_b2: T,
    pub norm2_gamma: T,
    pub norm2_beta: T,
}

/// Every learnable matrix of the model. Instantiated with `Tensor` for
/// storage and with `Var` once bound to a [`Tape`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub w_x: T,
    pub w_p: T,
    pub layers: Vec<LayerParams<T>>,
    pub w_mu: T,
    pub b_mu: T,
    pub w_logvar: T,
    pub b_logvar: T,
}

pub type ModelParams = Params<Tensor>;
pub type BoundParams = Params<Var>;

impl<T> Params<T> {
    fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        f("embed.w_x".into(), &self.w_x);
        f("embed.w_p".into(), &self.w_p);
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                f(format!("layer{l:02}.attn.head{h:02}.w_q"), &head.w_q);
                f(format!("layer{l:02}.attn.head{h:02}.w_k"), &head.w_k);
                f(format!("layer{l:02}.attn.head{h:02}.w_v"), &head.w_v);
            }
            f(format!("layer{l:02}.attn.w_o"), &layer.w_o);
            f(format!("layer{l:02}.norm1.gamma"), &layer.norm1_gamma);
            f(format!("layer{l:02}.norm1.beta"), &layer.norm1_beta);
            f(format!("layer{l:02}.ffn.w1"), &layer.ffn_w1);
            f(format!("layer{l:02}.ffn.b1"), &layer.ffn_b1);
            f(format!("layer{l:02}.ffn.w2"), &layer.ffn_w2);
            f(format!("layer{l:02}.ffn.b2"), &layer.ffn_b2);
            f(format!("layer{l:02}.norm2.gamma"), &layer.norm2_gamma);
            f(format!("layer{l:02}.norm2.beta"), &layer.norm2_beta);
        }
        f("mu.w".into(), &self.w_mu);
        f("mu.b".into(), &self.b_mu);
        f("logvar.w".into(), &self.w_logvar);
        f("logvar.b".into(), &self.b_logvar);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut T)) {
        f("embed.w_x".into(), &mut self.w_x);
        f("embed.w_p".into(), &mut self.w_p);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (h, head) in layer.heads.iter_mut().enumerate() {
                f(format!("layer{l:02}.attn.head{h:02}.w_q"), &mut head.w_q);
                f(format!("layer{l:02}.attn.head{h:02}.w_k"), &mut head.w_k);
                f(format!("layer{l:02}.attn.head{h:02}.w_v"), &mut head.w_v);
            }
            f(format!("layer{l:02}.attn.w_o"), &mut layer.w_o);
            f(format!("layer{l:02}.norm1.gamma"), &mut layer.norm1_gamma);
            f(format!("layer{l:02}.norm1.beta"), &mut layer.norm1_beta);
            f(format!("layer{l:02}.ffn.w1"), &mut layer.ffn_w1);
            f(format!("layer{l:02}.ffn.b1"), &mut layer.ffn_b1);
            f(format!("layer{l:02}.ffn.w2"), &mut layer.ffn_w2);
            f(format!("layer{l:02}.ffn.b2"), &mut layer.ffn_b2);
            f(format!("layer{l:02}.norm2.gamma"), &mut layer.norm2_gamma);
            f(format!("layer{l:02}.norm2.beta"), &mut layer.norm2_beta);
        }
        f("mu.w".into(), &mut self.w_mu);
        f("mu.b".into(), &mut self.b_mu);
        f("logvar.w".into(), &mut self.w_logvar);
        f("logvar.b".into(), &mut self.b_logvar);
    }

    /// Parameters sorted alphabetically by path. This is the checkpoint order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n, t)));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |n, t| out.push((n, t)));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Structure-preserving map. `f` sees parameters in field order.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Params<U> {
        let mut vals = Vec::new();
        self.visit(&mut |n, t| vals.push(f(&n, t)));
        let mut it = vals.into_iter();
        let mut next = || it.next().unwrap();
        let w_x = next();
        let w_p = next();
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                let heads = layer
                    .heads
                    .iter()
                    .map(|_| HeadParams {
                        w_q: next(),
                        w_k: next(),
                        w_v: next(),
                    })
                    .collect();
                LayerParams {
                    heads,
                    w_o: next(),
                    norm1_gamma: next(),
                    norm1_beta: next(),
                    ffn_w1: next(),
                    ffn_b1: next(),
                    ffn_w2: next(),
                    ffn_b2: next(),
                    norm2_gamma: next(),
                    norm2_beta: next(),
                }
            })
            .collect();
        Params {
            w_x,
            w_p,
            layers,
            w_mu: next(),
            b_mu: next(),
            w_logvar: next(),
            b_logvar: next(),
        }
    }
}

impl<T: Clone> Params<T> {
    /// Values in field order (the order `map` visits).
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t.clone()));
        out
    }

    /// Inverse of [`Params::flat`]: same structure, values taken in field order.
    pub fn rebuild<U: Clone>(&self, values: &[U]) -> Result<Params<U>> {
        let mut count = 0;
        self.visit(&mut |_, _| count += 1);
        if values.len() != count {
            return Err(Error::Shape {
                op: "params.rebuild",
                left: (values.len(), 1),
                right: (count, 1),
            });
        }
        let mut i = 0;
        Ok(self.map(|_, _| {
            i += 1;
            values[i - 1].clone()
        }))
    }
}

impl ModelParams {
    /// Xavier-uniform projections, zero biases, unit LayerNorm scale.
    pub fn init<R: Rng>(config: &ModelConfig, feature_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let dk = d / config.heads;
        let inner = config.ffn_mult * d;
        let mut xavier = |r: usize, c: usize| {
            let a = (6.0 / (r + c) as f64).sqrt();
            Tensor::from_fn(r, c, |_, _| rng.random_range(-a..=a))
        };
        let w_x = xavier(feature_dim, d);
        let w_p = xavier(config.pe_dim, d);
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let heads = (0..config.heads)
                .map(|_| HeadParams {
                    w_q: xavier(d, dk),
                    w_k: xavier(d, dk),
                    w_v: xavier(d, dk),
                })
                .collect();
            layers.push(LayerParams {
                heads,
                w_o: xavier(d, d),
                norm1_gamma: Tensor::filled(1, d, 1.0),
                norm1_beta: Tensor::zeros(1, d),
                ffn_w1: xavier(d, inner),
                ffn_b1: Tensor::zeros(1, inner),
                ffn_w2: xavier(inner, d),
                ffn_b2: Tensor::zeros(1, d),
                norm2_gamma: Tensor::filled(1, d, 1.0),
                norm2_beta: Tensor::zeros(1, d),
            });
        }
        Ok(Self {
            w_x,
            w_p,
            layers,
            w_mu: xavier(d, config.latent),
            b_mu: Tensor::zeros(1, config.latent),
            w_logvar: xavier(d, config.latent),
            b_logvar: Tensor::zeros(1, config.latent),
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.map(|_, t| tape.param(t))
    }

    /// Copies gradients from `tape` into each parameter's `grad` buffer.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &BoundParams) {
        let vars: Vec<Var> = bound.named().into_iter().map(|(_, v)| *v).collect();
        for ((_, p), v) in self.named_mut().into_iter().zip(vars) {
            p.grad = Some(tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec));
        }
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}
