//! Hand-built reference predictors with known input dependence.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::decoder::PredictionSet;
use crate::error::{Error, Result};
use crate::scene::kinematics::{rollout, Path, SpeedPlan, START_ACCEL};
use crate::scene::{wrap_angle, AgentType, PolylineType, Scene, SignalState, STOP_GAP, STOP_LINE_OFFSET};

/// Speed below which an agent counts as stationary, m/s.
const STATIONARY: f64 = 0.1;
/// Lateral tolerance for "on the path ahead", meters.
const ON_PATH: f64 = 1.0;

/// Rule-based single-mode predictor.
///
/// Each predicted agent follows the nearest same-direction lane centerline
/// when a map is present, otherwise a straight ray along its heading. It
/// keeps its observed speed, or `nominal_speed` when observed stationary,
/// and brakes to stop before a red or yellow signal on its path or behind a
/// stopped non-predicted vehicle on its path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePredictor {
    pub nominal_speed: f64,
    /// Largest lateral offset at which an agent is matched to a lane.
    pub lane_capture: f64,
}

impl Default for OraclePredictor {
    fn default() -> Self {
        OraclePredictor {
            nominal_speed: 10.0,
            lane_capture: 2.0,
        }
    }
}

impl OraclePredictor {
    fn path_for(&self, scene: &Scene, pos: [f64; 2], heading: f64) -> (Path, f64) {
        let mut best: Option<(f64, Path, f64)> = None;
        for m in scene.map.iter().filter(|m| m.polyline_type == PolylineType::LaneCenter) {
            let Some(path) = Path::new(&m.points) else { continue };
            let pr = path.project(pos);
            if pr.lateral > self.lane_capture || wrap_angle(pr.heading - heading).abs() >= FRAC_PI_2 {
                continue;
            }
            if best.as_ref().is_none_or(|b| pr.lateral < b.0) {
                best = Some((pr.lateral, path, pr.s));
            }
        }
        match best {
            Some((_, path, s)) => (path, s),
            None => (Path::ray(pos, heading), 0.0),
        }
    }

    /// Nearest stop position ahead of `s0`, if any.
    fn stop_target(&self, scene: &Scene, path: &Path, s0: f64) -> Option<f64> {
        let last = scene.t_obs - 1;
        let signals = scene.signals.iter().filter_map(|g| {
            let state = g.state_per_step.get(last).or(g.state_per_step.last())?;
            if !matches!(state, SignalState::Red | SignalState::Yellow) {
                return None;
            }
            let pr = path.project(g.position);
            (pr.lateral < ON_PATH && pr.s > s0).then_some(pr.s - STOP_LINE_OFFSET)
        });
        let stopped = scene
            .tracks
            .iter()
            .filter(|t| !scene.is_predicted(t.agent_id) && t.agent_type == AgentType::Vehicle)
            .filter_map(|t| {
                let st = scene.last_observed(t);
                if !st.valid || st.speed() >= STATIONARY {
                    return None;
                }
                let pr = path.project(st.position());
                (pr.lateral < ON_PATH && pr.s > s0).then_some(pr.s - STOP_GAP)
            });
        signals.chain(stopped).map(|s| s.max(s0)).reduce(f64::min)
    }
}

impl Predictor for OraclePredictor {
    fn predict(&self, scene: &Scene, _seed: u64) -> Result<PredictionSet> {
        let pred = scene.predicted_indices();
        if pred.is_empty() {
            return Err(Error::Input("scene has no predicted agent".into()));
        }
        let mut agents = Vec::with_capacity(pred.len());
        for &i in &pred {
            let st = scene.last_observed(&scene.tracks[i]);
            let speed = st.speed();
            let v0 = if speed < STATIONARY { self.nominal_speed } else { speed };
            let (path, s0) = self.path_for(scene, st.position(), st.heading);
            let plan = match self.stop_target(scene, &path, s0) {
                Some(s_stop) => SpeedPlan::StopAt { s_stop },
                None => SpeedPlan::Cruise {
                    target: v0,
                    accel: START_ACCEL,
                },
            };
            agents.push(
                rollout(&path, s0, v0, plan, scene.t_fut)
                    .iter()
                    .map(|s| s.position())
                    .collect(),
            );
        }
        Ok(PredictionSet {
            agent_ids: pred.iter().map(|&i| scene.tracks[i].agent_id).collect(),
            trajectories: vec![agents],
            confidences: vec![1.0],
        })
    }
}

/// Predicts every agent standing at a fixed point, whatever the input.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantPredictor {
    pub point: [f64; 2],
}

impl Predictor for ConstantPredictor {
    fn predict(&self, scene: &Scene, _seed: u64) -> Result<PredictionSet> {
        Ok(PredictionSet {
            agent_ids: scene.predict_ids.clone(),
            trajectories: vec![vec![vec![self.point; scene.t_fut]; scene.predict_ids.len()]],
            confidences: vec![1.0],
        })
    }
}
