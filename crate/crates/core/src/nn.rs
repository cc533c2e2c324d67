//! Parameterized building blocks shared by the networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Session, Tensor, Var};
use crate::error::{Error, Result};

/// Additive mask value for disallowed attention entries; `exp` of it
/// underflows to exactly zero.
const MASKED: f64 = -1e9;

/// Allocates parameters with deterministic initialization.
pub struct Init<'a> {
    pub params: &'a mut ParamSet,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.params
            .add(name, Tensor::new(shape.to_vec(), data).expect("init shape"))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.params.add(name, Tensor::full(shape, value))
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        let std = 1.0 / (d_in as f64).sqrt();
        Linear {
            w: self.normal(&format!("{name}.w"), &[d_in, d_out], std),
            b: Some(self.constant(&format!("{name}.b"), &[d_out], 0.0)),
        }
    }

    pub fn linear_no_bias(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        let std = 1.0 / (d_in as f64).sqrt();
        Linear {
            w: self.normal(&format!("{name}.w"), &[d_in, d_out], std),
            b: None,
        }
    }

    pub fn linear_zero(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear {
            w: self.constant(&format!("{name}.w"), &[d_in, d_out], 0.0),
            b: Some(self.constant(&format!("{name}.b"), &[d_out], 0.0)),
        }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gain: self.constant(&format!("{name}.gain"), &[d], 1.0),
            bias: self.constant(&format!("{name}.bias"), &[d], 0.0),
        }
    }

    /// Linear layers of the given widths with ReLU between them.
    pub fn mlp(&mut self, name: &str, widths: &[usize]) -> Mlp {
        Mlp {
            layers: widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| self.linear(&format!("{name}.{i}"), w[0], w[1]))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.p(self.w);
        let y = s.tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = s.p(b);
                s.tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gain), s.p(self.bias));
        s.tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn forward(&self, s: &mut Session, mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(s, x)?;
            if i < last {
                x = s.tape.relu(x);
            }
        }
        Ok(x)
    }
}

/// Pre-norm multi-head attention with a residual connection:
/// `out = q + W_o · concat_h softmax(Q_h K_hᵀ / √d_h + mask) V_h`
/// where `Q = LN_q(q) W_q`, `K = LN_kv(kv) W_k`, `V = LN_kv(kv) W_v`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Attention {
    pub heads: usize,
    pub d_model: usize,
    pub norm_q: LayerNorm,
    pub norm_kv: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

/// Attention output plus the per-head weight matrices (`[n_q × n_k]` each).
pub struct Attended {
    pub out: Var,
    pub weights: Vec<Tensor>,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} not divisible into {heads} heads"
            )));
        }
        Ok(Attention {
            heads,
            d_model,
            norm_q: init.layer_norm(&format!("{name}.norm_q"), d_model),
            norm_kv: init.layer_norm(&format!("{name}.norm_kv"), d_model),
            wq: init.linear_no_bias(&format!("{name}.wq"), d_model, d_model),
            wk: init.linear_no_bias(&format!("{name}.wk"), d_model, d_model),
            wv: init.linear_no_bias(&format!("{name}.wv"), d_model, d_model),
            wo: init.linear_no_bias(&format!("{name}.wo"), d_model, d_model),
        })
    }

    /// `allowed[i][j]` says whether query `i` may attend to key `j`. Rows
    /// that allow no key are passed through unchanged.
    pub fn forward(
        &self,
        s: &mut Session,
        q: Var,
        kv: Var,
        allowed: Option<&[Vec<bool>]>,
    ) -> Result<Attended> {
        let nq = s.value(q).shape()[0];
        let nk = s.value(kv).shape()[0];
        let mut empty = vec![false; nq];
        let mask = match allowed {
            Some(a) => {
                if a.len() != nq || a.iter().any(|r| r.len() != nk) {
                    return Err(Error::Shape(format!("attention mask must be {nq}×{nk}")));
                }
                let mut data = Vec::with_capacity(nq * nk);
                for (i, r) in a.iter().enumerate() {
                    empty[i] = !r.iter().any(|&b| b);
                    data.extend(r.iter().map(|&ok| if ok || empty[i] { 0.0 } else { MASKED }));
                }
                if empty.iter().all(|&e| e) {
                    return Ok(Attended {
                        out: q,
                        weights: vec![],
                    });
                }
                Some(s.constant(Tensor::new(vec![nq, nk], data)?))
            }
            None => None,
        };

        let qn = self.norm_q.forward(s, q)?;
        let kvn = self.norm_kv.forward(s, kv)?;
        let qp = self.wq.forward(s, qn)?;
        let kp = self.wk.forward(s, kvn)?;
        let vp = self.wv.forward(s, kvn)?;
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = s.tape.slice(qp, 1, h * dh, dh)?;
            let kh = s.tape.slice(kp, 1, h * dh, dh)?;
            let vh = s.tape.slice(vp, 1, h * dh, dh)?;
            let kt = s.tape.transpose(kh)?;
            let scores = s.tape.matmul(qh, kt)?;
            let mut scores = s.tape.scale(scores, scale);
            if let Some(m) = mask {
                scores = s.tape.add(scores, m)?;
            }
            let w = s.tape.softmax(scores, 1)?;
            weights.push(s.value(w).clone());
            heads.push(s.tape.matmul(w, vh)?);
        }
        let cat = s.tape.concat(&heads, 1)?;
        let proj = self.wo.forward(s, cat)?;
        let keep: Vec<bool> = empty.iter().map(|e| !e).collect();
        let proj = zero_rows(s, proj, &keep)?;
        let out = s.tape.add(q, proj)?;
        Ok(Attended { out, weights })
    }
}

/// Masked mean over rows: `Σ_i m_i x_i / max(1, Σ_i m_i)` as a `[1 × d]` row.
pub fn masked_mean_rows(s: &mut Session, x: Var, mask: &[bool]) -> Result<Var> {
    let n = s.value(x).shape()[0];
    if mask.len() != n {
        return Err(Error::Shape(format!("mask of {} for {n} rows", mask.len())));
    }
    let count = mask.iter().filter(|&&m| m).count().max(1) as f64;
    let weights = Tensor::new(
        vec![1, n],
        mask.iter().map(|&m| if m { 1.0 / count } else { 0.0 }).collect(),
    )?;
    let w = s.constant(weights);
    s.tape.matmul(w, x)
}

/// Multiplies each row of `x` by 0 or 1.
pub fn zero_rows(s: &mut Session, x: Var, keep: &[bool]) -> Result<Var> {
    let shape = s.value(x).shape().to_vec();
    let cols = shape[1];
    if keep.iter().all(|&k| k) {
        return Ok(x);
    }
    let data = keep
        .iter()
        .flat_map(|&k| std::iter::repeat(if k { 1.0 } else { 0.0 }).take(cols))
        .collect();
    let m = s.constant(Tensor::new(shape, data)?);
    s.tape.mul(x, m)
}

/// Mean of the flagged rows within consecutive blocks of `block` rows:
/// `[n·block × d] → [n × d]`. A block with no flagged row maps to zeros.
pub fn block_masked_mean(s: &mut Session, x: Var, block: usize, mask: &[bool]) -> Result<Var> {
    let m = s.value(x).shape()[0];
    if mask.len() != m || block == 0 || m % block != 0 {
        return Err(Error::Shape(format!("mask of {} for {m} rows in blocks of {block}", mask.len())));
    }
    let n = m / block;
    let mut w = vec![0.0; n * m];
    for i in 0..n {
        let span = &mask[i * block..(i + 1) * block];
        let count = span.iter().filter(|&&v| v).count();
        for (k, &v) in span.iter().enumerate() {
            if v {
                w[i * m + i * block + k] = 1.0 / count as f64;
            }
        }
    }
    let wv = s.constant(Tensor::new(vec![n, m], w)?);
    s.tape.matmul(wv, x)
}
