//! Scene encoder: per-step agent embeddings fused with the scenario latent,
//! cross-attention formers over neighbors, map and traffic signals, and the
//! temporal-spatial fusion attention (TSFA) layer.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Session, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{state_features, POSITION_SCALE, STATE_FEATURES};
use crate::nn::{block_masked_mean, zero_rows, Attention, Init, Linear, Mlp};
use crate::scene::{AgentType, MapPolyline, Scene, SignalState, TrafficSignal};

/// Which encoder components run; a disabled component is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderMask {
    pub spatial_temporal_attention: bool,
    pub social_former: bool,
    pub map_former: bool,
    pub sign_former: bool,
}

impl EncoderMask {
    pub const FULL: EncoderMask = EncoderMask {
        spatial_temporal_attention: true,
        social_former: true,
        map_former: true,
        sign_former: true,
    };
}

impl Default for EncoderMask {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub t_obs: usize,
    pub d_latent: usize,
    /// Points resampled along each map polyline.
    pub map_points: usize,
    pub mask: EncoderMask,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    step_mlp: Mlp,
    type_embed: ParamId,
    latent_proj: Linear,
    social: Attention,
    map_mlp: Mlp,
    map: Attention,
    sign_mlp: Mlp,
    sign: Attention,
    latent_fuse: Linear,
    temporal: Attention,
    spatial: Attention,
    head: Mlp,
}

/// Context sources that were empty for a scene, so their former passed
/// the embeddings through.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoContext {
    pub social: bool,
    pub map: bool,
    pub sign: bool,
}

/// Encoder output for the predicted agents, in `predict_ids` order.
pub struct SceneEncoding {
    /// `[num_predicted × d_model]`.
    pub context: Var,
    /// Per-head attention weights by component name.
    pub attention: Vec<(&'static str, Vec<Tensor>)>,
    pub no_context: NoContext,
}

/// Arc-length resampling of a polyline to `n` points.
pub fn resample_polyline(points: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    let total = *cum.last().unwrap();
    (0..n)
        .map(|k| {
            let s = if n > 1 { total * k as f64 / (n - 1) as f64 } else { 0.0 };
            let i = cum.partition_point(|&c| c <= s).clamp(1, points.len() - 1) - 1;
            let seg = cum[i + 1] - cum[i];
            let u = if seg > 0.0 { ((s - cum[i]) / seg).clamp(0.0, 1.0) } else { 0.0 };
            let (a, b) = (points[i], points[i + 1]);
            [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
        })
        .collect()
}

fn map_token_features(p: &MapPolyline, n: usize) -> Vec<f64> {
    let mut f: Vec<f64> = resample_polyline(&p.points, n)
        .into_iter()
        .flat_map(|q| [q[0] / POSITION_SCALE, q[1] / POSITION_SCALE])
        .collect();
    let mut one_hot = [0.0; 3];
    one_hot[p.polyline_type.index()] = 1.0;
    f.extend(one_hot);
    f
}

fn sign_token_features(sig: &TrafficSignal, t_obs: usize) -> Vec<f64> {
    let mut f = vec![sig.position[0] / POSITION_SCALE, sig.position[1] / POSITION_SCALE];
    for t in 0..t_obs {
        let mut one_hot = [0.0; 4];
        let state = sig.state_per_step.get(t).copied().unwrap_or(SignalState::Unknown);
        one_hot[state.index()] = 1.0;
        f.extend(one_hot);
    }
    f
}

/// Output row `k` is row `index[k]` of `x`.
fn rows(s: &mut Session, x: Var, index: &[usize]) -> Result<Var> {
    s.tape.gather(x, index)
}

impl Encoder {
    pub fn new(params: &mut ParamSet, rng: &mut ChaCha8Rng, config: EncoderConfig) -> Result<Self> {
        let mut init = Init { params, rng };
        let d = config.d_model;
        let map_in = 2 * config.map_points + 3;
        let sign_in = 2 + 4 * config.t_obs;
        Ok(Encoder {
            step_mlp: init.mlp("encoder.step", &[STATE_FEATURES, d, d]),
            type_embed: init.normal("encoder.type_embed", &[AgentType::ALL.len(), d], 0.1),
            latent_proj: init.linear_no_bias("encoder.latent_proj", config.d_latent, d),
            social: Attention::new(&mut init, "encoder.social", d, config.heads)?,
            map_mlp: init.mlp("encoder.map_token", &[map_in, d, d]),
            map: Attention::new(&mut init, "encoder.map", d, config.heads)?,
            sign_mlp: init.mlp("encoder.sign_token", &[sign_in, d, d]),
            sign: Attention::new(&mut init, "encoder.sign", d, config.heads)?,
            latent_fuse: init.linear_no_bias("encoder.latent_fuse", config.d_latent, d),
            temporal: Attention::new(&mut init, "encoder.temporal", d, config.heads)?,
            spatial: Attention::new(&mut init, "encoder.spatial", d, config.heads)?,
            head: init.mlp("encoder.head", &[d, d, d]),
            config,
        })
    }

    fn check(&self, scene: &Scene, latents: &Tensor) -> Result<()> {
        if latents.shape() != [scene.tracks.len(), self.config.d_latent] {
            return Err(Error::Shape(format!(
                "latent shape {:?} does not match {} tracks × {}",
                latents.shape(),
                scene.tracks.len(),
                self.config.d_latent
            )));
        }
        if scene.t_obs != self.config.t_obs {
            return Err(Error::Shape(format!(
                "scene observes {} steps, encoder expects {}",
                scene.t_obs, self.config.t_obs
            )));
        }
        Ok(())
    }

    /// Per-step embeddings of every track, `[n_tracks·t_obs × d_model]`
    /// agent-major, zero at invalid steps.
    pub fn embed_agents(&self, s: &mut Session, scene: &Scene, latents: &Tensor) -> Result<Var> {
        self.check(scene, latents)?;
        let t_obs = scene.t_obs;
        let n = scene.tracks.len();
        let mut feats = Vec::with_capacity(n * t_obs * STATE_FEATURES);
        let mut valid = Vec::with_capacity(n * t_obs);
        let mut types = Vec::with_capacity(n * t_obs);
        let mut owner = Vec::with_capacity(n * t_obs);
        for (i, tr) in scene.tracks.iter().enumerate() {
            for st in &tr.states[..t_obs] {
                feats.extend(state_features(st));
                valid.push(st.valid);
                types.push(tr.agent_type.index());
                owner.push(i);
            }
        }
        let fv = s.constant(Tensor::new(vec![n * t_obs, STATE_FEATURES], feats)?);
        let base = self.step_mlp.forward(s, fv)?;
        let table = s.p(self.type_embed);
        let typ = rows(s, table, &types)?;
        let lv = s.constant(latents.clone());
        let lat = self.latent_proj.forward(s, lv)?;
        let lat = rows(s, lat, &owner)?;
        let e = s.tape.add(base, typ)?;
        let e = s.tape.add(e, lat)?;
        zero_rows(s, e, &valid)
    }

    /// Full pipeline: embed → social → map → sign → TSFA.
    pub fn encode_scene(&self, s: &mut Session, scene: &Scene, latents: &Tensor) -> Result<SceneEncoding> {
        let mask = self.config.mask;
        let t_obs = scene.t_obs;
        let n = scene.tracks.len();
        let pred = scene.predicted_indices();
        if pred.is_empty() {
            return Err(Error::Input("scene has no predicted agent".into()));
        }
        let all = self.embed_agents(s, scene, latents)?;
        let valid_of = |i: usize| -> Vec<bool> {
            scene.tracks[i].states[..t_obs].iter().map(|st| st.valid).collect()
        };
        let q_rows: Vec<usize> = pred.iter().flat_map(|&i| (i * t_obs)..((i + 1) * t_obs)).collect();
        let q_valid: Vec<bool> = pred.iter().flat_map(|&i| valid_of(i)).collect();
        let mut q = rows(s, all, &q_rows)?;
        let mut attention = Vec::new();
        let mut no_context = NoContext::default();

        if mask.social_former {
            let keyed: Vec<usize> = (0..n).filter(|&j| valid_of(j).iter().any(|&v| v)).collect();
            let all_valid: Vec<bool> = (0..n).flat_map(valid_of).collect();
            let tokens = block_masked_mean(s, all, t_obs, &all_valid)?;
            let allowed: Vec<Vec<bool>> = pred
                .iter()
                .flat_map(|&i| {
                    let row: Vec<bool> = keyed.iter().map(|&j| j != i).collect();
                    std::iter::repeat(row).take(t_obs)
                })
                .collect();
            if allowed.iter().all(|r| !r.iter().any(|&b| b)) {
                no_context.social = true;
            } else {
                let kv = rows(s, tokens, &keyed)?;
                let a = self.social.forward(s, q, kv, Some(&allowed))?;
                q = zero_rows(s, a.out, &q_valid)?;
                attention.push(("social", a.weights));
            }
        }

        if mask.map_former {
            if scene.map.is_empty() {
                no_context.map = true;
            } else {
                let p = self.config.map_points;
                let data: Vec<f64> = scene.map.iter().flat_map(|m| map_token_features(m, p)).collect();
                let mv = s.constant(Tensor::new(vec![scene.map.len(), 2 * p + 3], data)?);
                let kv = self.map_mlp.forward(s, mv)?;
                let a = self.map.forward(s, q, kv, None)?;
                q = zero_rows(s, a.out, &q_valid)?;
                attention.push(("map", a.weights));
            }
        }

        if mask.sign_former {
            if scene.signals.is_empty() {
                no_context.sign = true;
            } else {
                let width = 2 + 4 * t_obs;
                let data: Vec<f64> = scene
                    .signals
                    .iter()
                    .flat_map(|g| sign_token_features(g, t_obs))
                    .collect();
                let sv = s.constant(Tensor::new(vec![scene.signals.len(), width], data)?);
                let kv = self.sign_mlp.forward(s, sv)?;
                let a = self.sign.forward(s, q, kv, None)?;
                q = zero_rows(s, a.out, &q_valid)?;
                attention.push(("sign", a.weights));
            }
        }

        let pred_latents = Tensor::from_rows(&pred.iter().map(|&i| latents.row(i).to_vec()).collect::<Vec<_>>())?;
        let context = self.tsfa(s, q, &pred_latents, &q_valid, t_obs, &mut attention)?;
        Ok(SceneEncoding {
            context,
            attention,
            no_context,
        })
    }

    /// Fuses the latent, attends over time within each agent and over agents
    /// within each step, then pools valid steps into one vector per agent.
    /// `x` is `[a·t_obs × d_model]` agent-major with validity `valid`.
    pub fn tsfa(
        &self,
        s: &mut Session,
        x: Var,
        latents: &Tensor,
        valid: &[bool],
        t_obs: usize,
        attention: &mut Vec<(&'static str, Vec<Tensor>)>,
    ) -> Result<Var> {
        let a = latents.shape()[0];
        if valid.len() != a * t_obs {
            return Err(Error::Shape(format!(
                "{} validity flags for {a} agents × {t_obs} steps",
                valid.len()
            )));
        }
        let lv = s.constant(latents.clone());
        let lat = self.latent_fuse.forward(s, lv)?;
        let owner: Vec<usize> = (0..a * t_obs).map(|r| r / t_obs).collect();
        let lat = rows(s, lat, &owner)?;
        let fused = s.tape.add(x, lat)?;
        let mut h = zero_rows(s, fused, valid)?;

        if self.config.mask.spatial_temporal_attention {
            let m = a * t_obs;
            let temporal: Vec<Vec<bool>> = (0..m)
                .map(|r| (0..m).map(|c| r / t_obs == c / t_obs && valid[c]).collect())
                .collect();
            let out = self.temporal.forward(s, h, h, Some(&temporal))?;
            h = zero_rows(s, out.out, valid)?;
            attention.push(("temporal", out.weights));
            let spatial: Vec<Vec<bool>> = (0..m)
                .map(|r| (0..m).map(|c| r % t_obs == c % t_obs && (valid[c] || r == c)).collect())
                .collect();
            let out = self.spatial.forward(s, h, h, Some(&spatial))?;
            h = zero_rows(s, out.out, valid)?;
            attention.push(("spatial", out.weights));
        }

        let pooled = block_masked_mean(s, h, t_obs, valid)?;
        self.head.forward(s, pooled)
    }
}
