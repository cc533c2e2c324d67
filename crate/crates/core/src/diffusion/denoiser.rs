use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Session, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::STATE_FEATURES;
use crate::nn::{Init, LayerNorm, Linear, Mlp};

/// Sizes of the noise-prediction network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d_latent: usize,
    pub d_hidden: usize,
    pub d_cond: usize,
    pub blocks: usize,
    pub t_obs: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ResBlock {
    norm: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Predicts the injected noise for every agent row jointly. Each row sees
/// its own latent and history condition plus scene means of both, so the
/// network is equivariant to agent order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    time_embed: ParamId,
    cond: Mlp,
    input: Linear,
    blocks: Vec<ResBlock>,
    out: Linear,
}

impl Denoiser {
    pub fn new(params: &mut ParamSet, rng: &mut ChaCha8Rng, config: DenoiserConfig) -> Self {
        let mut init = Init { params, rng };
        let h = config.d_hidden;
        let hist = config.t_obs * STATE_FEATURES;
        Denoiser {
            time_embed: init.normal("diffusion.time_embed", &[config.steps, h], 0.1),
            cond: init.mlp("diffusion.cond", &[hist, h, config.d_cond]),
            input: init.linear("diffusion.input", 2 * config.d_latent + 2 * config.d_cond, h),
            blocks: (0..config.blocks)
                .map(|i| ResBlock {
                    norm: init.layer_norm(&format!("diffusion.block{i}.norm"), h),
                    fc1: init.linear(&format!("diffusion.block{i}.fc1"), h, h),
                    fc2: init.linear(&format!("diffusion.block{i}.fc2"), h, h),
                })
                .collect(),
            out: init.linear_zero("diffusion.out", h, config.d_latent),
            config,
        }
    }

    /// `ε̂(x_t, t, history)` with `x_t: [n × d_latent]` and `history:
    /// [n × t_obs·7]`.
    pub fn predict_noise(&self, s: &mut Session, x_t: Var, t: usize, history: &Tensor) -> Result<Var> {
        let n = s.value(x_t).shape()[0];
        if s.value(x_t).shape()[1] != self.config.d_latent {
            return Err(Error::Shape(format!(
                "latent width {} differs from {}",
                s.value(x_t).shape()[1],
                self.config.d_latent
            )));
        }
        if history.shape() != [n, self.config.t_obs * STATE_FEATURES] {
            return Err(Error::Shape(format!(
                "condition shape {:?} does not match {n} agents",
                history.shape()
            )));
        }
        if t == 0 || t > self.config.steps {
            return Err(Error::Index(format!("diffusion step {t} outside 1..={}", self.config.steps)));
        }
        let hv = s.constant(history.clone());
        let cond = self.cond.forward(s, hv)?;
        let rows = vec![0; n];
        let cond_mean = s.tape.mean_axis(cond, 0)?;
        let cond_mean = s.tape.gather(cond_mean, &rows)?;
        let x_mean = s.tape.mean_axis(x_t, 0)?;
        let x_mean = s.tape.gather(x_mean, &rows)?;
        let inp = s.tape.concat(&[x_t, cond, cond_mean, x_mean], 1)?;
        let h = self.input.forward(s, inp)?;
        let table = s.p(self.time_embed);
        let temb = s.tape.gather(table, &vec![t - 1; n])?;
        let h = s.tape.add(h, temb)?;
        let mut h = s.tape.relu(h);
        for b in &self.blocks {
            let u = b.norm.forward(s, h)?;
            let u = b.fc1.forward(s, u)?;
            let u = s.tape.relu(u);
            let u = b.fc2.forward(s, u)?;
            h = s.tape.add(h, u)?;
        }
        self.out.forward(s, h)
    }
}
