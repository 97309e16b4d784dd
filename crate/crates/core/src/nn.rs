//! Layer building blocks shared by the generator and discriminator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier_with, Bound, ParamId, ParameterStore};
use crate::tensor::Tensor;

/// Forward-pass mode. Dropout only fires in training.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

impl Mode<'_> {
    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train { dropout, rng } => {
                let p = *dropout;
                if p <= 0.0 {
                    return Ok(x);
                }
                let keep = 1.0 / (1.0 - p);
                let mask = (0..g.value(x).len())
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                g.mul_const(x, mask)
            }
        }
    }
}

/// Weight `in × out` and bias `out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), xavier_with(&[fan_in, fan_out], rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.w), p.var(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gain), p.var(self.bias))
    }
}

/// Sinusoidal position table, `len × dim`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / libm::pow(10000.0, 2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            };
        }
    }
    Tensor::matrix(len.max(1), dim, data).unwrap_or_else(|_| Tensor::zeros(&[1, dim]))
}

/// Additive attention bias: 0 where attention is allowed, −∞ where masked.
pub fn mask_bias(rows: usize, cols: usize, allowed: impl Fn(usize, usize) -> bool) -> Tensor {
    let mut data = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            if !allowed(i, j) {
                data[i * cols + j] = f64::NEG_INFINITY;
            }
        }
    }
    Tensor::matrix(rows, cols, data).expect("positive mask shape")
}

/// Single-head scaled dot-product attention. Returns `(output, weights)`.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    bias: &Tensor,
) -> Result<(Var, Var)> {
    let dk = g.value(q).cols();
    if g.value(k).cols() != dk {
        return Err(Error::Shape {
            op: "attention",
            left: g.value(q).shape().to_vec(),
            right: g.value(k).shape().to_vec(),
        });
    }
    let (nq, nk) = (g.value(q).rows(), g.value(k).rows());
    if bias.shape() != [nq, nk] {
        return Err(Error::contract(format!(
            "attention mask is {:?} but scores are {nq}x{nk}",
            bias.shape()
        )));
    }
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / libm::sqrt(dk as f64));
    let s = g.add_const(s, bias)?;
    let w = g.softmax(s, 1)?;
    let out = g.matmul(w, v)?;
    Ok((out, w))
}

/// Multi-head attention with query/key/value/output projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        query: Var,
        memory: Var,
        bias: &Tensor,
    ) -> Result<Var> {
        let q = self.q.forward(g, p, query)?;
        let k = self.k.forward(g, p, memory)?;
        let v = self.v.forward(g, p, memory)?;
        let dim = g.value(q).cols();
        let dh = dim / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = if self.heads == 1 { q } else { g.slice_cols(q, a, b)? };
            let kh = if self.heads == 1 { k } else { g.slice_cols(k, a, b)? };
            let vh = if self.heads == 1 { v } else { g.slice_cols(v, a, b)? };
            outs.push(scaled_dot_attention(g, qh, kh, vh, bias)?.0);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.o.forward(g, p, joined)
    }
}

/// Position-wise `relu(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.relu(h);
        self.down.forward(g, p, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn three_position_weights_match_hand_oracle() {
        let q = m(1, 2, &[0.5, -1.0]);
        let k = m(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let v = m(3, 1, &[1.0, 2.0, 3.0]);
        let mut g = Graph::new();
        let (vq, vk, vv) = (g.constant(q), g.constant(k), g.constant(v));
        let (out, w) = scaled_dot_attention(&mut g, vq, vk, vv, &Tensor::zeros(&[1, 3])).unwrap();
        let s = [0.5, -1.0, -0.5].map(|x: f64| (x / 2f64.sqrt()).exp());
        let z: f64 = s.iter().sum();
        let want = s.map(|e| e / z);
        for (a, b) in g.value(w).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-10);
        }
        let expect_out = want[0] + 2.0 * want[1] + 3.0 * want[2];
        assert!((g.value(out).item() - expect_out).abs() < 1e-10);
    }

    #[test]
    fn masked_row_puts_all_weight_on_self() {
        let mut g = Graph::new();
        let x = g.constant(m(3, 2, &[0.3, 0.1, -2.0, 0.4, 1.0, 1.0]));
        let bias = mask_bias(3, 3, |i, j| i == j);
        let (_, w) = scaled_dot_attention(&mut g, x, x, x, &bias).unwrap();
        let w = g.value(w);
        for i in 0..3 {
            assert_eq!(w.get2(i, i), 1.0);
        }
    }

    #[test]
    fn single_position_returns_projected_value() {
        let mut store = ParameterStore::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(m(1, 4, &[0.2, -0.3, 0.9, 1.1]));
        let y = mha.forward(&mut g, &p, x, x, &Tensor::zeros(&[1, 1])).unwrap();
        // softmax over one key is 1, so the output is V-projection followed by O-projection
        let v = mha.v.forward(&mut g, &p, x).unwrap();
        let want = mha.o.forward(&mut g, &p, v).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(want).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_shape_mismatch_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 2]));
        assert!(scaled_dot_attention(&mut g, x, x, x, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn positional_encoding_first_row() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get2(1, 0) - 1f64.sin()).abs() < 1e-15);
    }
}
