//! End-to-end training: loss assembly, optimizer, checkpoints and the
//! ablation grids.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Session, Tensor, Var};
use crate::decoder::{DecoderOutput, HeadKind};
use crate::diffusion::ddpm_loss;
use crate::encoder::EncoderMask;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::metrics::{self, MetricReport, MISS_THRESHOLD};
use crate::model::{AblationMask, Model, ModelConfig};
use crate::scene::{AgentState, Scene};
use crate::seeding::derive_seed;

pub const CHECKPOINT_MAGIC: &str = "TRAJEX-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_kin: f64,
    pub lambda_conf: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Keeps the denoiser fixed while the encoder and decoder train.
    pub freeze_diffusion: bool,
    /// Validation every this many epochs; 0 disables it.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 10,
            lambda_kin: 0.1,
            lambda_conf: 0.5,
            grad_clip: 1.0,
            freeze_diffusion: false,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("learning_rate and grad_clip must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lambda_kin >= 0.0) || !(self.lambda_conf >= 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

const SHUFFLE_STREAM: u64 = 1;
const STEP_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

/// Loss values of one scene or the mean over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub ddpm: f64,
    pub traj: f64,
    pub conf: f64,
}

/// Winner-takes-all regression and confidence terms.
pub struct TrajTerms {
    pub traj: Var,
    pub conf: Var,
    pub best_mode: usize,
    pub mode_ade: Vec<f64>,
}

/// Mean displacement of every mode against `gt` on the tape, the best mode's
/// value and the negative log of its confidence. Scenes without a valid
/// future step give zero for both terms.
pub fn trajectory_terms(s: &mut Session, out: &DecoderOutput, gt: &[Vec<AgentState>]) -> Result<TrajTerms> {
    let (k, a, t_fut) = (out.modes, out.agents, out.t_fut);
    if gt.len() != a || gt.iter().any(|g| g.len() != t_fut) {
        return Err(Error::Shape(format!(
            "ground truth for {} agents does not match {a} agents × {t_fut} steps",
            gt.len()
        )));
    }
    let r_total = k * a;
    let n_valid = gt.iter().flatten().filter(|st| st.valid).count();
    if n_valid == 0 {
        let zero = s.constant(Tensor::scalar(0.0));
        return Ok(TrajTerms {
            traj: zero,
            conf: zero,
            best_mode: 0,
            mode_ade: vec![0.0; k],
        });
    }
    let mut target = vec![0.0; t_fut * 2 * r_total];
    let mut weight = vec![0.0; t_fut * r_total];
    for r in 0..r_total {
        let g = &gt[r % a];
        for t in 0..t_fut {
            if g[t].valid {
                target[t * 2 * r_total + 2 * r] = g[t].x;
                target[t * 2 * r_total + 2 * r + 1] = g[t].y;
                weight[t * r_total + r] = 1.0 / n_valid as f64;
            }
        }
    }
    let mut pair_sum = vec![0.0; 2 * r_total * r_total];
    for r in 0..r_total {
        pair_sum[2 * r * r_total + r] = 1.0;
        pair_sum[(2 * r + 1) * r_total + r] = 1.0;
    }
    let mut mode_sum = vec![0.0; r_total * k];
    for r in 0..r_total {
        mode_sum[r * k + r / a] = 1.0;
    }
    let target = s.constant(Tensor::new(vec![t_fut, 2 * r_total], target)?);
    let weight = s.constant(Tensor::new(vec![t_fut, r_total], weight)?);
    let pair_sum = s.constant(Tensor::new(vec![2 * r_total, r_total], pair_sum)?);
    let mode_sum = s.constant(Tensor::new(vec![r_total, k], mode_sum)?);

    let diff = s.tape.sub(out.positions, target)?;
    let sq = s.tape.square(diff)?;
    let sq = s.tape.matmul(sq, pair_sum)?;
    let dist = s.tape.sqrt(sq)?;
    let dist = s.tape.mul(dist, weight)?;
    let per_row = s.tape.sum_axis(dist, 0)?;
    let per_mode = s.tape.matmul(per_row, mode_sum)?;
    let mode_ade = s.value(per_mode).data().to_vec();
    let best_mode = metrics::argmin(&mode_ade);
    let traj = s.tape.slice(per_mode, 1, best_mode, 1)?;
    let traj = s.tape.reshape(traj, &[1])?;
    let p = s.tape.slice(out.probs, 1, best_mode, 1)?;
    let logp = s.tape.log(p)?;
    let conf = s.tape.scale(logp, -1.0);
    let conf = s.tape.reshape(conf, &[1])?;
    Ok(TrajTerms {
        traj,
        conf,
        best_mode,
        mode_ade,
    })
}

/// `L = L_ddpm + L_traj + λ_conf·L_conf` from already-built terms.
pub fn combine_loss(s: &mut Session, ddpm: Var, traj: &TrajTerms, lambda_conf: f64) -> Result<(Var, LossTerms)> {
    let wc = s.tape.scale(traj.conf, lambda_conf);
    let l = s.tape.add(ddpm, traj.traj)?;
    let total = s.tape.add(l, wc)?;
    let terms = LossTerms {
        total: s.value(total).item(),
        ddpm: s.value(ddpm).item(),
        traj: s.value(traj.traj).item(),
        conf: s.value(traj.conf).item(),
    };
    Ok((total, terms))
}

fn check_finite(terms: &LossTerms, step: usize) -> Result<()> {
    for (name, v) in [
        ("ddpm", terms.ddpm),
        ("trajectory", terms.traj),
        ("confidence", terms.conf),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                component: name.into(),
                step,
            });
        }
    }
    Ok(())
}

/// Full training loss of one scene on the tape. The encoder sees a latent
/// drawn from the current prior without a gradient path.
pub fn scene_loss(
    model: &Model,
    s: &mut Session,
    scene: &Scene,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, LossTerms)> {
    let inputs = model.inputs(scene)?;
    let latents = model.sample_latents(&inputs.history, rng)?;
    scene_loss_with_latents(model, s, scene, &latents, config, rng)
}

/// [`scene_loss`] for a given scene latent.
pub fn scene_loss_with_latents(
    model: &Model,
    s: &mut Session,
    scene: &Scene,
    latents: &Tensor,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, LossTerms)> {
    let inputs = model.inputs(scene)?;
    let x0 = model.codec.encode_scene(scene)?;
    let ddpm = ddpm_loss(
        s,
        &model.denoiser,
        &model.schedule,
        &model.codec,
        &x0,
        &inputs.history,
        config.lambda_kin,
        rng,
    )?;
    let out = model.forward(s, scene, &inputs, latents)?;
    let traj = trajectory_terms(s, &out, &metrics::ground_truth(scene))?;
    combine_loss(s, ddpm.loss, &traj, config.lambda_conf)
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }
    norm
}

/// One row of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ddpm: f64,
    pub l_traj: f64,
    pub l_conf: f64,
    pub min_sade_val: Option<f64>,
    pub min_sfde_val: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut s = String::from("epoch,L_ddpm,L_traj,L_conf,minSADE_val,minSFDE_val\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.l_ddpm,
            r.l_traj,
            r.l_conf,
            opt(r.min_sade_val),
            opt(r.min_sfde_val)
        ));
    }
    s
}

/// Predictions for every scene with per-scene seeds derived from `seed`.
pub fn predict_all(model: &Model, scenes: &[Scene], seed: u64) -> Result<Vec<metrics::ScenePrediction>> {
    scenes
        .par_iter()
        .enumerate()
        .map(|(i, sc)| {
            Ok(metrics::ScenePrediction {
                scene_id: sc.scene_id.clone(),
                prediction: model.predict(sc, derive_seed(seed, &[EVAL_STREAM, i as u64]))?,
            })
        })
        .collect()
}

/// Predicts and scores `scenes`.
pub fn evaluate_model(model: &Model, scenes: &[Scene], seed: u64, threshold: f64) -> Result<MetricReport> {
    let preds = predict_all(model, scenes, seed)?;
    let pairs: Vec<_> = scenes.iter().zip(&preds).map(|(s, p)| (s, &p.prediction)).collect();
    metrics::evaluate(&pairs, threshold)
}

/// Mutable training state.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub step: usize,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    frozen: Vec<bool>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone())?;
        Ok(Self::from_model(config, model))
    }

    fn from_model(config: TrainConfig, model: Model) -> Self {
        let frozen = model
            .params
            .ids()
            .map(|id| config.freeze_diffusion && model.params.name(id).starts_with("diffusion."))
            .collect();
        Trainer {
            adam: Adam::new(&model.params, config.learning_rate),
            config,
            model,
            step: 0,
            epoch: 0,
            history: Vec::new(),
            frozen,
        }
    }

    /// One optimizer step on the scenes at `indices` of `scenes`. Scene
    /// gradients are computed in parallel and summed in index order.
    pub fn train_step(&mut self, scenes: &[Scene], indices: &[usize]) -> Result<LossTerms> {
        if indices.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let step = self.step;
        let model = &self.model;
        let config = &self.config;
        let results: Vec<Result<(Vec<Tensor>, LossTerms)>> = indices
            .par_iter()
            .map(|&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    &[STEP_STREAM, step as u64, i as u64],
                ));
                let mut s = Session::new(&model.params);
                let (loss, terms) = scene_loss(model, &mut s, &scenes[i], config, &mut rng)?;
                check_finite(&terms, step)?;
                let grads = s.tape.backward(loss)?;
                Ok((s.param_grads(&grads), terms))
            })
            .collect();
        let n = indices.len() as f64;
        let mut sum = self.model.params.zeros_like();
        let mut mean = LossTerms::default();
        for r in results {
            let (g, t) = r?;
            for (acc, gi) in sum.iter_mut().zip(&g) {
                for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                    *a += b;
                }
            }
            mean.total += t.total / n;
            mean.ddpm += t.ddpm / n;
            mean.traj += t.traj / n;
            mean.conf += t.conf / n;
        }
        for (g, &frozen) in sum.iter_mut().zip(&self.frozen) {
            for v in g.data_mut() {
                *v = if frozen { 0.0 } else { *v / n };
            }
        }
        if sum.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                component: "gradient".into(),
                step,
            });
        }
        clip_global_norm(&mut sum, self.config.grad_clip);
        self.adam.step(&mut self.model.params, &sum);
        if !self.model.params.all_finite() {
            return Err(Error::NonFinite {
                component: "parameters".into(),
                step,
            });
        }
        self.step += 1;
        Ok(mean)
    }

    /// One pass over `train` in a seeded shuffled order, followed by
    /// validation when due.
    pub fn run_epoch(&mut self, train: &[Scene], val: Option<&[Scene]>) -> Result<EpochRecord> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[SHUFFLE_STREAM, self.epoch as u64],
        ));
        order.shuffle(&mut rng);
        let mut acc = LossTerms::default();
        let mut batches = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let t = self.train_step(train, batch)?;
            acc.ddpm += t.ddpm;
            acc.traj += t.traj;
            acc.conf += t.conf;
            batches += 1.0;
        }
        self.epoch += 1;
        let (mut sade, mut sfde) = (None, None);
        let due = self.config.eval_every > 0 && self.epoch % self.config.eval_every == 0;
        if let (true, Some(v)) = (due, val) {
            let r = evaluate_model(&self.model, v, self.config.seed, MISS_THRESHOLD)?;
            sade = Some(r.min_sade);
            sfde = Some(r.min_sfde);
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            l_ddpm: acc.ddpm / batches,
            l_traj: acc.traj / batches,
            l_conf: acc.conf / batches,
            min_sade_val: sade,
            min_sfde_val: sfde,
        };
        log::info!(
            "epoch {} L_ddpm {:.4} L_traj {:.4} L_conf {:.4}{}",
            rec.epoch,
            rec.l_ddpm,
            rec.l_traj,
            rec.l_conf,
            sade.map_or(String::new(), |v| format!(" minSADE_val {v:.4}"))
        );
        self.history.push(rec.clone());
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            magic: CHECKPOINT_MAGIC.into(),
            schema_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            params: self.model.params.clone(),
        }
    }
}

/// Trains for `config.epochs` epochs. Validation uses `val` when given and
/// the training scenes otherwise.
pub fn train(config: &TrainConfig, train: &[Scene], val: Option<&[Scene]>) -> Result<Checkpoint> {
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut trainer = Trainer::new(config.clone())?;
    for sc in train {
        trainer.model.check_scene(sc)?;
    }
    let val = val.unwrap_or(train);
    for _ in 0..config.epochs {
        trainer.run_epoch(train, Some(val))?;
    }
    Ok(trainer.checkpoint())
}

/// Serialized model parameters with their training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub schema_version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: ParamSet,
}

impl Checkpoint {
    /// Rebuilds the model and loads the stored parameters into it.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.model.clone())?;
        model.params.assign_from(&self.params)?;
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if !ckpt.params.all_finite() {
        return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
    }
    fsutil::write_json(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fsutil::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    match value.get("magic").and_then(|m| m.as_str()) {
        Some(CHECKPOINT_MAGIC) => {}
        _ => {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint (missing magic `{CHECKPOINT_MAGIC}`)",
                path.display()
            )))
        }
    }
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        other => {
            return Err(Error::Schema(format!(
                "checkpoint schema_version {other:?}, expected {CHECKPOINT_VERSION}"
            )))
        }
    }
    let ckpt: Checkpoint = serde_path_to_error::deserialize(value).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    if !ckpt.params.all_finite() {
        return Err(Error::Checkpoint("checkpoint holds non-finite parameters".into()));
    }
    ckpt.model()?;
    Ok(ckpt)
}

/// Loads a checkpoint for use under `requested`; the stored mask always
/// wins. Returns whether the two differed.
pub fn load_checkpoint_with_mask(path: &Path, requested: &AblationMask) -> Result<(Checkpoint, bool)> {
    let ckpt = load_checkpoint(path)?;
    let differs = ckpt.config.model.mask != *requested;
    if differs {
        log::warn!(
            "checkpoint {} was trained with ablation mask {:?}; using it instead of the requested {:?}",
            path.display(),
            ckpt.config.model.mask,
            requested
        );
    }
    Ok((ckpt, differs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationGrid {
    /// Full encoder and one row per removed encoder component.
    Encoder,
    /// Decoder head and recurrence variants.
    Decoder,
}

/// Named masks of a grid, derived from `base`.
pub fn grid_masks(grid: AblationGrid, base: &AblationMask) -> Vec<(&'static str, AblationMask)> {
    match grid {
        AblationGrid::Encoder => {
            let with = |f: fn(&mut EncoderMask)| {
                let mut m = *base;
                m.encoder = EncoderMask::FULL;
                f(&mut m.encoder);
                m
            };
            vec![
                ("no_tsfa", with(|e| e.spatial_temporal_attention = false)),
                ("no_social_former", with(|e| e.social_former = false)),
                ("no_map_former", with(|e| e.map_former = false)),
                ("no_sign_former", with(|e| e.sign_former = false)),
                ("full", with(|_| {})),
            ]
        }
        AblationGrid::Decoder => {
            let with = |head, use_gru| AblationMask {
                head,
                use_gru,
                ..*base
            };
            vec![
                ("gru_linear", with(HeadKind::Linear, true)),
                ("kan2_no_gru", with(HeadKind::Kan(2), false)),
                ("mlp1_gru", with(HeadKind::Mlp(1), true)),
                ("mlp2_gru", with(HeadKind::Mlp(2), true)),
                ("kan1_gru", with(HeadKind::Kan(1), true)),
                ("kan2_gru", with(HeadKind::Kan(2), true)),
            ]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub mask: AblationMask,
    pub final_loss: LossTerms,
    pub report: MetricReport,
}

/// Trains and evaluates every configuration of `grid`.
pub fn run_ablation(
    base: &TrainConfig,
    grid: AblationGrid,
    train_set: &[Scene],
    val: &[Scene],
) -> Result<Vec<AblationRow>> {
    grid_masks(grid, &base.model.mask)
        .into_iter()
        .map(|(name, mask)| {
            let mut config = base.clone();
            config.model.mask = mask;
            config.eval_every = 0;
            log::info!("ablation row {name}");
            let ckpt = train(&config, train_set, None)?;
            let model = ckpt.model()?;
            let report = evaluate_model(&model, val, config.seed, MISS_THRESHOLD)?;
            let last = ckpt.history.last().cloned();
            Ok(AblationRow {
                name: name.into(),
                mask,
                final_loss: last.map_or(LossTerms::default(), |r| LossTerms {
                    total: r.l_ddpm + r.l_traj + config.lambda_conf * r.l_conf,
                    ddpm: r.l_ddpm,
                    traj: r.l_traj,
                    conf: r.l_conf,
                }),
                report,
            })
        })
        .collect()
}

fn head_label(h: HeadKind) -> String {
    match h {
        HeadKind::Linear => "linear".into(),
        HeadKind::Mlp(n) => format!("mlp{n}"),
        HeadKind::Kan(n) => format!("kan{n}"),
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "config,tsfa,social_former,map_former,sign_former,head,gru,final_loss,min_sade,min_sfde,smr,map_score\n",
    );
    for r in rows {
        let e = &r.mask.encoder;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.name,
            e.spatial_temporal_attention as u8,
            e.social_former as u8,
            e.map_former as u8,
            e.sign_former as u8,
            head_label(r.mask.head),
            r.mask.use_gru as u8,
            r.final_loss.total,
            r.report.min_sade,
            r.report.min_sfde,
            r.report.smr,
            r.report.map_score
        ));
    }
    s
}

#[cfg(test)]
mod tests;
