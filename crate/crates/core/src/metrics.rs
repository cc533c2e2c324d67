//! Scene-level joint prediction metrics: minSADE, minSFDE, sMR and mAP.

use serde::{Deserialize, Serialize};

use crate::decoder::PredictionSet;
use crate::error::{Error, Result};
use crate::scene::{AgentState, Scene};

/// Default final-displacement miss threshold, meters.
pub const MISS_THRESHOLD: f64 = 2.0;

/// Future states of the predicted agents, in `predict_ids` order.
pub fn ground_truth(scene: &Scene) -> Vec<Vec<AgentState>> {
    scene
        .predicted_indices()
        .into_iter()
        .map(|i| scene.tracks[i].states[scene.t_obs..].to_vec())
        .collect()
}

/// Per-mode errors of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeErrors {
    /// Mean displacement over every (agent, valid step) pair.
    pub ade: Vec<f64>,
    /// Mean over agents of the displacement at their final valid step.
    pub fde: Vec<f64>,
    /// Max over agents of the displacement at their final valid step.
    pub final_max: Vec<f64>,
}

impl ModeErrors {
    pub fn best_ade_mode(&self) -> usize {
        argmin(&self.ade)
    }

    pub fn best_final_mode(&self) -> usize {
        argmin(&self.final_max)
    }
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

fn dist(p: [f64; 2], s: &AgentState) -> f64 {
    (p[0] - s.x).hypot(p[1] - s.y)
}

pub fn mode_errors(pred: &PredictionSet, gt: &[Vec<AgentState>]) -> Result<ModeErrors> {
    if pred.agents() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predicted agents vs {} ground-truth tracks",
            pred.agents(),
            gt.len()
        )));
    }
    if pred.modes() == 0 {
        return Err(Error::Metric("prediction has no modes".into()));
    }
    let t_fut = pred.t_fut();
    if let Some(g) = gt.iter().find(|g| g.len() != t_fut) {
        return Err(Error::Shape(format!(
            "ground truth has {} future steps, prediction {t_fut}",
            g.len()
        )));
    }
    let finals: Vec<Option<usize>> = gt.iter().map(|g| g.iter().rposition(|s| s.valid)).collect();
    let n_valid: usize = gt.iter().map(|g| g.iter().filter(|s| s.valid).count()).sum();
    let n_agents = finals.iter().filter(|f| f.is_some()).count();
    if n_valid == 0 {
        return Err(Error::Metric("no valid future step".into()));
    }
    let mut out = ModeErrors {
        ade: Vec::with_capacity(pred.modes()),
        fde: Vec::with_capacity(pred.modes()),
        final_max: Vec::with_capacity(pred.modes()),
    };
    for mode in &pred.trajectories {
        let mut sum = 0.0;
        let mut fsum = 0.0;
        let mut fmax = 0.0f64;
        for (a, g) in gt.iter().enumerate() {
            for (t, s) in g.iter().enumerate() {
                if s.valid {
                    sum += dist(mode[a][t], s);
                }
            }
            if let Some(f) = finals[a] {
                let d = dist(mode[a][f], &g[f]);
                fsum += d;
                fmax = fmax.max(d);
            }
        }
        out.ade.push(sum / n_valid as f64);
        out.fde.push(fsum / n_agents as f64);
        out.final_max.push(fmax);
    }
    Ok(out)
}

pub fn min_sade(pred: &PredictionSet, gt: &[Vec<AgentState>]) -> Result<f64> {
    let e = mode_errors(pred, gt)?;
    Ok(e.ade[e.best_ade_mode()])
}

pub fn min_sfde(pred: &PredictionSet, gt: &[Vec<AgentState>]) -> Result<f64> {
    let e = mode_errors(pred, gt)?;
    Ok(e.fde.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Whether even the best mode ends farther than `threshold` from the ground
/// truth for some agent.
pub fn is_miss(pred: &PredictionSet, gt: &[Vec<AgentState>], threshold: f64) -> Result<bool> {
    let e = mode_errors(pred, gt)?;
    Ok(e.final_max[e.best_final_mode()] > threshold)
}

/// Fraction of missed scenes.
pub fn smr(misses: &[bool]) -> Result<f64> {
    if misses.is_empty() {
        return Err(Error::Metric("no scenes to score".into()));
    }
    Ok(misses.iter().filter(|&&m| m).count() as f64 / misses.len() as f64)
}

/// Hit flags per mode: only the best mode can be a hit, and only when it
/// lies within `threshold`.
pub fn hit_flags(errors: &ModeErrors, threshold: f64) -> Vec<bool> {
    let best = errors.best_final_mode();
    (0..errors.final_max.len())
        .map(|k| k == best && errors.final_max[k] <= threshold)
        .collect()
}

/// Average precision over modes pooled from all scenes.
///
/// Items are ranked by confidence (descending, ties in scene then mode
/// order); recall is relative to the number of scenes; precision is
/// interpolated as the maximum precision at any higher recall.
pub fn map_metric(scenes: &[(Vec<f64>, Vec<bool>)]) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::Metric("mAP of no scenes".into()));
    }
    let mut items: Vec<(f64, bool)> = Vec::new();
    for (conf, hits) in scenes {
        if conf.len() != hits.len() {
            return Err(Error::Shape(format!("{} confidences vs {} hit flags", conf.len(), hits.len())));
        }
        items.extend(conf.iter().copied().zip(hits.iter().copied()));
    }
    // Stable sort keeps scene/mode order among equal confidences.
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total = scenes.len() as f64;
    let mut tp = 0usize;
    let mut points = Vec::new();
    for (i, &(_, hit)) in items.iter().enumerate() {
        if hit {
            tp += 1;
            points.push((tp as f64 / total, tp as f64 / (i + 1) as f64));
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let interp = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (points[i].0 - prev_recall) * interp;
        prev_recall = points[i].0;
    }
    Ok(ap)
}

/// A prediction tagged with the scene it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub scene_id: String,
    pub prediction: PredictionSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub min_sade: f64,
    pub min_sfde: f64,
    pub miss: bool,
    pub best_mode: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub min_sade: f64,
    pub min_sfde: f64,
    pub smr: f64,
    pub map_score: f64,
    pub miss_threshold: f64,
    pub scenes_evaluated: usize,
    /// Scenes without any valid future step.
    pub scenes_excluded: usize,
    pub per_scene: Vec<SceneMetrics>,
}

impl MetricReport {
    /// Single-row summary table.
    pub fn summary_csv(&self) -> String {
        format!(
            "min_sade,min_sfde,smr,map_score,miss_threshold,scenes_evaluated,scenes_excluded\n{},{},{},{},{},{},{}\n",
            self.min_sade,
            self.min_sfde,
            self.smr,
            self.map_score,
            self.miss_threshold,
            self.scenes_evaluated,
            self.scenes_excluded
        )
    }

    pub fn per_scene_csv(&self) -> String {
        let mut s = String::from("scene_id,min_sade,min_sfde,miss,best_mode\n");
        for r in &self.per_scene {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scene_id, r.min_sade, r.min_sfde, r.miss as u8, r.best_mode
            ));
        }
        s
    }
}

/// Scores predictions against their scenes in order.
pub fn evaluate(pairs: &[(&Scene, &PredictionSet)], threshold: f64) -> Result<MetricReport> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("miss threshold must be positive, got {threshold}")));
    }
    let mut per_scene = Vec::new();
    let mut ranked = Vec::new();
    let mut excluded = 0;
    for (scene, pred) in pairs {
        pred.validate()?;
        let gt = ground_truth(scene);
        let e = match mode_errors(pred, &gt) {
            Ok(e) => e,
            Err(Error::Metric(_)) => {
                excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let best_final = e.best_final_mode();
        per_scene.push(SceneMetrics {
            scene_id: scene.scene_id.clone(),
            min_sade: e.ade[e.best_ade_mode()],
            min_sfde: e.fde.iter().copied().fold(f64::INFINITY, f64::min),
            miss: e.final_max[best_final] > threshold,
            best_mode: e.best_ade_mode(),
        });
        ranked.push((pred.confidences.clone(), hit_flags(&e, threshold)));
    }
    if per_scene.is_empty() {
        return Err(Error::Metric(format!(
            "no scene has a valid future ({excluded} excluded)"
        )));
    }
    let n = per_scene.len() as f64;
    let misses: Vec<bool> = per_scene.iter().map(|r| r.miss).collect();
    Ok(MetricReport {
        min_sade: per_scene.iter().map(|r| r.min_sade).sum::<f64>() / n,
        min_sfde: per_scene.iter().map(|r| r.min_sfde).sum::<f64>() / n,
        smr: smr(&misses)?,
        map_score: map_metric(&ranked)?,
        miss_threshold: threshold,
        scenes_evaluated: per_scene.len(),
        scenes_excluded: excluded,
        per_scene,
    })
}
