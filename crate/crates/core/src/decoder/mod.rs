//! Multimodal trajectory decoder: mode tokens, GRU recurrence and a
//! displacement head (linear, MLP or KAN), plus a confidence head.

mod gru;
mod kan;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gru::Gru;
pub use kan::{KanGrid, KanLayer};

use crate::autodiff::{ParamId, ParamSet, Session, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Mlp};
use crate::scene::{DT, V_MAX};

/// Largest per-step displacement the head can emit, meters.
pub const MAX_STEP: f64 = V_MAX * DT;

/// Family of the per-step displacement head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "layers", rename_all = "snake_case")]
pub enum HeadKind {
    /// A single linear map from the hidden state.
    Linear,
    /// Hidden ReLU layers (count given) followed by a linear output.
    Mlp(usize),
    /// Stacked KAN layers (count given).
    Kan(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub d_hidden: usize,
    pub modes: usize,
    pub t_fut: usize,
    pub head: HeadKind,
    pub use_gru: bool,
    pub kan_grid: KanGrid,
    /// Width between stacked KAN layers.
    pub kan_hidden: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || self.t_fut == 0 || self.d_hidden == 0 || self.d_model == 0 {
            return Err(Error::Config(
                "decoder needs at least one mode, one future step and nonzero widths".into(),
            ));
        }
        match self.head {
            HeadKind::Mlp(0) | HeadKind::Kan(0) => {
                Err(Error::Config("head layer count must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Head {
    Linear(Linear),
    Mlp(Mlp),
    Kan(Vec<KanLayer>),
}

impl Head {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        match self {
            Head::Linear(l) => l.forward(s, x),
            Head::Mlp(m) => m.forward(s, x),
            Head::Kan(layers) => {
                let mut h = x;
                for l in layers {
                    h = l.forward(s, h)?;
                }
                Ok(h)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Recurrence {
    Gru(Gru),
    /// Without recurrence each step is `tanh(W x + e_t)`.
    Direct { input: Linear, time_embed: ParamId },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decoder {
    pub config: DecoderConfig,
    mode_tokens: ParamId,
    init_state: Linear,
    recurrence: Recurrence,
    head: Head,
    confidence: Mlp,
}

/// Raw decoder output on the tape.
///
/// Rows are indexed `r = k·A + a` (mode-major). `positions` is
/// `[T_fut × 2R]` with column `2r + c` holding coordinate `c` of row `r`.
pub struct DecoderOutput {
    pub positions: Var,
    pub probs: Var,
    pub modes: usize,
    pub agents: usize,
    pub t_fut: usize,
}

/// K candidate joint futures for the predicted agents of one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub agent_ids: Vec<u64>,
    /// `[mode][agent][step] = [x, y]`.
    pub trajectories: Vec<Vec<Vec<[f64; 2]>>>,
    pub confidences: Vec<f64>,
}

impl PredictionSet {
    pub fn modes(&self) -> usize {
        self.trajectories.len()
    }

    pub fn agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn t_fut(&self) -> usize {
        self.trajectories
            .first()
            .and_then(|m| m.first())
            .map_or(0, Vec::len)
    }

    /// Checks shapes, finiteness and normalization.
    pub fn validate(&self) -> Result<()> {
        let (k, a, t) = (self.modes(), self.agents(), self.t_fut());
        if self.confidences.len() != k {
            return Err(Error::Shape(format!("{} confidences for {k} modes", self.confidences.len())));
        }
        for m in &self.trajectories {
            if m.len() != a || m.iter().any(|tr| tr.len() != t) {
                return Err(Error::Shape("ragged trajectories".into()));
            }
        }
        if self.trajectories.iter().flatten().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Metric("non-finite predicted position".into()));
        }
        let sum: f64 = self.confidences.iter().sum();
        if self.confidences.iter().any(|&c| c < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Metric(format!("confidences sum to {sum}")));
        }
        Ok(())
    }
}

impl DecoderOutput {
    pub fn to_prediction_set(&self, s: &Session, agent_ids: &[u64]) -> PredictionSet {
        let pos = s.value(self.positions);
        let r_total = self.modes * self.agents;
        let trajectories = (0..self.modes)
            .map(|k| {
                (0..self.agents)
                    .map(|a| {
                        let r = k * self.agents + a;
                        (0..self.t_fut)
                            .map(|t| {
                                let base = t * 2 * r_total + 2 * r;
                                [pos.data()[base], pos.data()[base + 1]]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        PredictionSet {
            agent_ids: agent_ids.to_vec(),
            trajectories,
            confidences: s.value(self.probs).data().to_vec(),
        }
    }
}

impl Decoder {
    pub fn new(params: &mut ParamSet, rng: &mut ChaCha8Rng, config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init { params, rng };
        let (d, h) = (config.d_model, config.d_hidden);
        let x_dim = 2 * d;
        let recurrence = if config.use_gru {
            Recurrence::Gru(Gru::new(&mut init, "decoder.gru", x_dim, h))
        } else {
            Recurrence::Direct {
                input: init.linear("decoder.direct", x_dim, h),
                time_embed: init.normal("decoder.time_embed", &[config.t_fut, h], 0.5),
            }
        };
        let head = match config.head {
            HeadKind::Linear => Head::Linear(init.linear_zero("decoder.head", h, 2)),
            HeadKind::Mlp(n) => {
                let mut layers: Vec<Linear> = (0..n)
                    .map(|i| init.linear(&format!("decoder.head.{i}"), h, h))
                    .collect();
                layers.push(init.linear_zero(&format!("decoder.head.{n}"), h, 2));
                Head::Mlp(Mlp { layers })
            }
            HeadKind::Kan(n) => Head::Kan(
                (0..n)
                    .map(|i| {
                        let d_in = if i == 0 { h } else { config.kan_hidden };
                        let d_out = if i + 1 == n { 2 } else { config.kan_hidden };
                        KanLayer::new(
                            &mut init,
                            &format!("decoder.kan.{i}"),
                            d_in,
                            d_out,
                            config.kan_grid,
                            i + 1 == n,
                        )
                    })
                    .collect(),
            ),
        };
        let mut confidence = init.mlp("decoder.confidence", &[x_dim, d, 1]);
        let last = confidence.layers.len() - 1;
        confidence.layers[last] = init.linear_zero("decoder.confidence.out", d, 1);
        Ok(Decoder {
            mode_tokens: init.normal("decoder.mode_tokens", &[config.modes, d], 1.0),
            init_state: init.linear("decoder.init_state", x_dim, h),
            recurrence,
            head,
            confidence,
            config,
        })
    }

    /// Decodes `[A × d_model]` contexts into K joint futures starting from
    /// each agent's last observed position.
    pub fn decode(&self, s: &mut Session, context: Var, last_positions: &[[f64; 2]]) -> Result<DecoderOutput> {
        let c = &self.config;
        let ctx_shape = s.value(context).shape().to_vec();
        let a = last_positions.len();
        if ctx_shape != [a, c.d_model] {
            return Err(Error::Shape(format!(
                "context {ctx_shape:?} for {a} agents × {}",
                c.d_model
            )));
        }
        let (k, t_fut) = (c.modes, c.t_fut);
        let r_total = k * a;
        let agent_of: Vec<usize> = (0..r_total).map(|r| r % a).collect();
        let mode_of: Vec<usize> = (0..r_total).map(|r| r / a).collect();
        let tokens = s.p(self.mode_tokens);
        let ctx_rows = s.tape.gather(context, &agent_of)?;
        let tok_rows = s.tape.gather(tokens, &mode_of)?;
        let x = s.tape.concat(&[ctx_rows, tok_rows], 1)?;

        let h0 = self.init_state.forward(s, x)?;
        let mut h = s.tape.tanh(h0);
        let mut states = Vec::with_capacity(t_fut);
        match &self.recurrence {
            Recurrence::Gru(g) => {
                let xp = g.project_input(s, x)?;
                for _ in 0..t_fut {
                    h = g.step_projected(s, h, xp)?;
                    states.push(h);
                }
            }
            Recurrence::Direct { input, time_embed } => {
                let base = input.forward(s, x)?;
                let table = s.p(*time_embed);
                for t in 0..t_fut {
                    let e = s.tape.gather(table, &vec![t; r_total])?;
                    let pre = s.tape.add(base, e)?;
                    states.push(s.tape.tanh(pre));
                }
            }
        }
        // Time-major stack: row t·R + r.
        let stacked = s.tape.concat(&states, 0)?;
        let raw = self.head.forward(s, stacked)?;
        let bounded = s.tape.tanh(raw);
        let disp = s.tape.scale(bounded, MAX_STEP);
        let disp = s.tape.reshape(disp, &[t_fut, 2 * r_total])?;
        let mut tri = vec![0.0; t_fut * t_fut];
        for i in 0..t_fut {
            for j in 0..=i {
                tri[i * t_fut + j] = 1.0;
            }
        }
        let tri = s.constant(Tensor::new(vec![t_fut, t_fut], tri)?);
        let cum = s.tape.matmul(tri, disp)?;
        let origin: Vec<f64> = (0..r_total).flat_map(|r| last_positions[agent_of[r]]).collect();
        let origin = s.constant(Tensor::vector(origin));
        let positions = s.tape.add_bias(cum, origin)?;

        let mean_ctx = s.tape.mean_axis(context, 0)?;
        let mean_ctx = s.tape.gather(mean_ctx, &vec![0; k])?;
        let cin = s.tape.concat(&[mean_ctx, tokens], 1)?;
        let logits = self.confidence.forward(s, cin)?;
        let logits = s.tape.reshape(logits, &[1, k])?;
        let probs = s.tape.softmax(logits, 1)?;
        Ok(DecoderOutput {
            positions,
            probs,
            modes: k,
            agents: a,
            t_fut,
        })
    }
}
