//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Values come from three layers, later layers winning: built-in defaults,
//! the `--config` file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use trajex::decoder::{HeadKind, KanGrid};
use trajex::encoder::EncoderMask;
use trajex::explain::{ErrorMetric, ImportanceConfig};
use trajex::metrics::MISS_THRESHOLD;
use trajex::model::{AblationMask, ModelConfig};
use trajex::scene::{GeneratorConfig, ScenarioFamily};
use trajex::trainer::TrainConfig;

use crate::CliError;

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "base seed for generation, initialization, training and sampling"),
    ("families", "comma-separated scenario families, or `all`"),
    ("count", "number of generated scenes"),
    ("num_agents", "agents per generated scene"),
    ("num_predicted", "jointly predicted agents per generated scene"),
    ("t_obs", "observed steps per generated scene"),
    ("t_fut", "future steps per generated scene"),
    ("lane_width", "lane width in meters"),
    ("lane_length", "minimum lane length in meters"),
    ("cruise_speed", "nominal vehicle speed in m/s"),
    ("speed_jitter", "relative spread of vehicle speeds"),
    ("modes", "number of predicted modes"),
    ("d_model", "encoder width"),
    ("heads", "attention heads"),
    ("d_latent", "latent size per agent (even)"),
    ("map_points", "points resampled per map polyline"),
    ("decoder_hidden", "decoder recurrent state size"),
    ("kan_hidden", "hidden width of the spline head"),
    ("kan_intervals", "spline grid intervals"),
    ("kan_order", "spline order"),
    ("kan_lo", "spline grid lower bound"),
    ("kan_hi", "spline grid upper bound"),
    ("diffusion_steps", "number of diffusion steps"),
    ("beta_start", "first noise variance"),
    ("beta_end", "last noise variance"),
    ("denoiser_hidden", "denoiser hidden width"),
    ("denoiser_cond", "denoiser condition width"),
    ("denoiser_blocks", "denoiser residual blocks"),
    ("head", "decoder head: linear, mlp1, mlp2, kan1 or kan2"),
    ("gru", "use the recurrent decoder (true/false)"),
    ("tsfa", "enable spatial-temporal attention (true/false)"),
    ("social_former", "enable agent-agent attention (true/false)"),
    ("map_former", "enable agent-map attention (true/false)"),
    ("sign_former", "enable agent-signal attention (true/false)"),
    ("learning_rate", "Adam step size"),
    ("batch_size", "scenes per optimizer step"),
    ("epochs", "training epochs"),
    ("lambda_kin", "kinematic penalty weight"),
    ("lambda_conf", "confidence loss weight"),
    ("grad_clip", "global gradient-norm clip"),
    ("freeze_diffusion", "keep the denoiser fixed (true/false)"),
    ("eval_every", "validation interval in epochs, 0 disables"),
    ("miss_threshold", "miss threshold in meters"),
    ("metric", "attribution error metric: minSADE or minSFDE"),
    ("shapley_seeds", "sampling seeds averaged per explained scene"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown key `{key}`")).into())
    }
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected `key = value`", i + 1)).into());
            };
            let (k, v) = (k.trim(), v.trim());
            check_key(k).with_context(|| format!("line {}", i + 1))?;
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", i + 1)).into());
            }
        }
        Ok(Settings { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let text = trajex::fsutil::read_to_string(p)?;
                Settings::parse(&text).with_context(|| format!("in config file {}", p.display()))
            }
        }
    }

    /// Sets `key` when a flag supplied a value.
    pub fn set<T: Display>(&mut self, key: &str, value: Option<T>) {
        debug_assert!(check_key(key).is_ok(), "{key}");
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("invalid value `{v}` for `{key}`: {e}")).into()),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.values.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(CliError::Config(format!("invalid boolean `{v}` for `{key}`")).into()),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.or("seed", 0)
    }

    pub fn families(&self) -> Result<Vec<ScenarioFamily>> {
        match self.values.get("families").map(String::as_str) {
            None | Some("all") => Ok(ScenarioFamily::ALL.to_vec()),
            Some(list) => list
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<ScenarioFamily>()
                        .map_err(|e| CliError::Config(e.to_string()).into())
                })
                .collect(),
        }
    }

    pub fn generator(&self) -> Result<GeneratorConfig> {
        let d = GeneratorConfig::default();
        let g = GeneratorConfig {
            num_agents: self.or("num_agents", d.num_agents)?,
            num_predicted: self.or("num_predicted", d.num_predicted)?,
            t_obs: self.or("t_obs", d.t_obs)?,
            t_fut: self.or("t_fut", d.t_fut)?,
            lane_width: self.or("lane_width", d.lane_width)?,
            lane_length: self.or("lane_length", d.lane_length)?,
            cruise_speed: self.or("cruise_speed", d.cruise_speed)?,
            speed_jitter: self.or("speed_jitter", d.speed_jitter)?,
        };
        g.validate()?;
        Ok(g)
    }

    fn head(&self, default: HeadKind) -> Result<HeadKind> {
        let Some(v) = self.values.get("head") else {
            return Ok(default);
        };
        Ok(match v.as_str() {
            "linear" => HeadKind::Linear,
            "mlp1" => HeadKind::Mlp(1),
            "mlp2" => HeadKind::Mlp(2),
            "kan1" => HeadKind::Kan(1),
            "kan2" => HeadKind::Kan(2),
            _ => return Err(CliError::Config(format!("unknown head `{v}`")).into()),
        })
    }

    pub fn mask(&self) -> Result<AblationMask> {
        let d = AblationMask::default();
        Ok(AblationMask {
            encoder: EncoderMask {
                spatial_temporal_attention: self.flag("tsfa", d.encoder.spatial_temporal_attention)?,
                social_former: self.flag("social_former", d.encoder.social_former)?,
                map_former: self.flag("map_former", d.encoder.map_former)?,
                sign_former: self.flag("sign_former", d.encoder.sign_former)?,
            },
            head: self.head(d.head)?,
            use_gru: self.flag("gru", d.use_gru)?,
        })
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let g = KanGrid::default();
        let m = ModelConfig {
            t_obs: self.or("t_obs", d.t_obs)?,
            t_fut: self.or("t_fut", d.t_fut)?,
            modes: self.or("modes", d.modes)?,
            d_model: self.or("d_model", d.d_model)?,
            heads: self.or("heads", d.heads)?,
            d_latent: self.or("d_latent", d.d_latent)?,
            map_points: self.or("map_points", d.map_points)?,
            decoder_hidden: self.or("decoder_hidden", d.decoder_hidden)?,
            kan_grid: KanGrid {
                lo: self.or("kan_lo", g.lo)?,
                hi: self.or("kan_hi", g.hi)?,
                intervals: self.or("kan_intervals", g.intervals)?,
                order: self.or("kan_order", g.order)?,
            },
            kan_hidden: self.or("kan_hidden", d.kan_hidden)?,
            diffusion_steps: self.or("diffusion_steps", d.diffusion_steps)?,
            beta_start: self.or("beta_start", d.beta_start)?,
            beta_end: self.or("beta_end", d.beta_end)?,
            denoiser_hidden: self.or("denoiser_hidden", d.denoiser_hidden)?,
            denoiser_cond: self.or("denoiser_cond", d.denoiser_cond)?,
            denoiser_blocks: self.or("denoiser_blocks", d.denoiser_blocks)?,
            mask: self.mask()?,
            seed: self.seed()?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let t = TrainConfig {
            model: self.model()?,
            learning_rate: self.or("learning_rate", d.learning_rate)?,
            batch_size: self.or("batch_size", d.batch_size)?,
            epochs: self.or("epochs", d.epochs)?,
            lambda_kin: self.or("lambda_kin", d.lambda_kin)?,
            lambda_conf: self.or("lambda_conf", d.lambda_conf)?,
            grad_clip: self.or("grad_clip", d.grad_clip)?,
            freeze_diffusion: self.flag("freeze_diffusion", d.freeze_diffusion)?,
            eval_every: self.or("eval_every", d.eval_every)?,
            seed: self.seed()?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn importance(&self) -> Result<ImportanceConfig> {
        let d = ImportanceConfig::default();
        Ok(ImportanceConfig {
            metric: match self.values.get("metric") {
                Some(m) => ErrorMetric::parse(m)?,
                None => d.metric,
            },
            seeds: self.or("shapley_seeds", d.seeds)?,
            seed: self.seed()?,
        })
    }

    pub fn miss_threshold(&self) -> Result<f64> {
        self.or("miss_threshold", MISS_THRESHOLD)
    }
}
