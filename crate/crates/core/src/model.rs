//! The full prediction model: diffusion prior, scene encoder and decoder
//! sharing one parameter set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Session, Tensor};
use crate::decoder::{Decoder, DecoderConfig, DecoderOutput, HeadKind, KanGrid, PredictionSet};
use crate::diffusion::{sample_latent, Denoiser, DenoiserConfig, LatentCodec, NoiseSchedule};
use crate::encoder::{Encoder, EncoderConfig, EncoderMask};
use crate::error::{Error, Result};
use crate::features::history_matrix;
use crate::scene::{Scene, DEFAULT_T_FUT, DEFAULT_T_OBS};

/// Which architectural components are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationMask {
    pub encoder: EncoderMask,
    pub head: HeadKind,
    pub use_gru: bool,
}

impl Default for AblationMask {
    fn default() -> Self {
        AblationMask {
            encoder: EncoderMask::FULL,
            head: HeadKind::Kan(2),
            use_gru: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub t_obs: usize,
    pub t_fut: usize,
    /// Number of predicted modes.
    pub modes: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_latent: usize,
    pub map_points: usize,
    pub decoder_hidden: usize,
    pub kan_grid: KanGrid,
    pub kan_hidden: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub denoiser_hidden: usize,
    pub denoiser_cond: usize,
    pub denoiser_blocks: usize,
    pub mask: AblationMask,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_obs: DEFAULT_T_OBS,
            t_fut: DEFAULT_T_FUT,
            modes: 6,
            d_model: 32,
            heads: 2,
            d_latent: 8,
            map_points: 8,
            decoder_hidden: 32,
            kan_grid: KanGrid::default(),
            kan_hidden: 8,
            diffusion_steps: 50,
            beta_start: 1e-4,
            beta_end: 0.2,
            denoiser_hidden: 64,
            denoiser_cond: 16,
            denoiser_blocks: 2,
            mask: AblationMask::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("t_obs", self.t_obs),
            ("t_fut", self.t_fut),
            ("modes", self.modes),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_latent", self.d_latent),
            ("map_points", self.map_points),
            ("decoder_hidden", self.decoder_hidden),
            ("kan_hidden", self.kan_hidden),
            ("diffusion_steps", self.diffusion_steps),
            ("denoiser_hidden", self.denoiser_hidden),
            ("denoiser_cond", self.denoiser_cond),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_latent % 2 != 0 {
            return Err(Error::Config(format!("d_latent must be even, got {}", self.d_latent)));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub denoiser: Denoiser,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub schedule: NoiseSchedule,
    pub codec: LatentCodec,
}

/// Everything the decoder needs from a scene besides the latents.
pub struct SceneInputs {
    pub history: Tensor,
    pub last_positions: Vec<[f64; 2]>,
    pub agent_ids: Vec<u64>,
}

impl Model {
    /// Builds a freshly initialized model; identical configs give identical
    /// parameters.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let denoiser = Denoiser::new(
            &mut params,
            &mut rng,
            DenoiserConfig {
                d_latent: config.d_latent,
                d_hidden: config.denoiser_hidden,
                d_cond: config.denoiser_cond,
                blocks: config.denoiser_blocks,
                t_obs: config.t_obs,
                steps: config.diffusion_steps,
            },
        );
        let encoder = Encoder::new(
            &mut params,
            &mut rng,
            EncoderConfig {
                d_model: config.d_model,
                heads: config.heads,
                t_obs: config.t_obs,
                d_latent: config.d_latent,
                map_points: config.map_points,
                mask: config.mask.encoder,
            },
        )?;
        let decoder = Decoder::new(
            &mut params,
            &mut rng,
            DecoderConfig {
                d_model: config.d_model,
                d_hidden: config.decoder_hidden,
                modes: config.modes,
                t_fut: config.t_fut,
                head: config.mask.head,
                use_gru: config.mask.use_gru,
                kan_grid: config.kan_grid,
                kan_hidden: config.kan_hidden,
            },
        )?;
        let schedule = NoiseSchedule::linear(config.diffusion_steps, config.beta_start, config.beta_end)?;
        let codec = LatentCodec::new(config.d_latent, config.t_fut)?;
        Ok(Model {
            config,
            params,
            denoiser,
            encoder,
            decoder,
            schedule,
            codec,
        })
    }

    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.t_obs != self.config.t_obs || scene.t_fut != self.config.t_fut {
            return Err(Error::Shape(format!(
                "scene `{}` has horizons {}+{}, model expects {}+{}",
                scene.scene_id, scene.t_obs, scene.t_fut, self.config.t_obs, self.config.t_fut
            )));
        }
        Ok(())
    }

    pub fn inputs(&self, scene: &Scene) -> Result<SceneInputs> {
        self.check_scene(scene)?;
        let pred = scene.predicted_indices();
        Ok(SceneInputs {
            history: history_matrix(&scene.tracks, scene.t_obs),
            last_positions: pred
                .iter()
                .map(|&i| scene.last_observed(&scene.tracks[i]).position())
                .collect(),
            agent_ids: pred.iter().map(|&i| scene.tracks[i].agent_id).collect(),
        })
    }

    /// Scene latent drawn by ancestral sampling, one row per track.
    pub fn sample_latents(&self, history: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if history.shape()[0] == 0 {
            return Ok(Tensor::zeros(&[0, self.config.d_latent]));
        }
        sample_latent(&self.denoiser, &self.params, &self.schedule, history, rng)
    }

    /// Encoder and decoder on the tape for given latents.
    pub fn forward(
        &self,
        s: &mut Session,
        scene: &Scene,
        inputs: &SceneInputs,
        latents: &Tensor,
    ) -> Result<DecoderOutput> {
        let enc = self.encoder.encode_scene(s, scene, latents)?;
        self.decoder.decode(s, enc.context, &inputs.last_positions)
    }

    /// Samples a latent with `seed`, then decodes K joint futures.
    pub fn predict(&self, scene: &Scene, seed: u64) -> Result<PredictionSet> {
        let inputs = self.inputs(scene)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latents = self.sample_latents(&inputs.history, &mut rng)?;
        let mut s = Session::inference(&self.params);
        let out = self.forward(&mut s, scene, &inputs, &latents)?;
        Ok(out.to_prediction_set(&s, &inputs.agent_ids))
    }
}
