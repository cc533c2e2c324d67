//! Traffic scene types, synthetic scenario generation and JSON persistence.

mod generator;
mod io;
pub mod kinematics;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generator::{generate_dataset, generate_scene, GeneratorConfig, STOP_GAP, STOP_LINE_OFFSET};
pub use io::{load_dataset, scene_from_json, scene_to_json, MANIFEST_FILE, load_scene, save_dataset, save_scene, DatasetManifest, SCHEMA_VERSION};

/// Sampling period of all tracks (10 Hz).
pub const DT: f64 = 0.1;
/// Speed bound used by the per-step displacement invariant, m/s.
pub const V_MAX: f64 = 40.0;
pub const DEFAULT_T_OBS: usize = 10;
pub const DEFAULT_T_FUT: usize = 80;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub valid: bool,
}

impl AgentState {
    pub const INVALID: AgentState = AgentState {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
        vx: 0.0,
        vy: 0.0,
        valid: false,
    };

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Bicycle,
    Pedestrian,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Vehicle, AgentType::Bicycle, AgentType::Pedestrian];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u64,
    pub agent_type: AgentType,
    pub states: Vec<AgentState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineType {
    LaneCenter,
    RoadEdge,
    Crosswalk,
}

impl PolylineType {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPolyline {
    pub polyline_type: PolylineType,
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Red,
    Yellow,
    Green,
    Unknown,
}

impl SignalState {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSignal {
    pub position: [f64; 2],
    pub state_per_step: Vec<SignalState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    LaneKeep,
    StopStart,
    Turn,
    Interaction,
    Irregular,
}

impl ScenarioFamily {
    pub const ALL: [ScenarioFamily; 5] = [
        ScenarioFamily::LaneKeep,
        ScenarioFamily::StopStart,
        ScenarioFamily::Turn,
        ScenarioFamily::Interaction,
        ScenarioFamily::Irregular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioFamily::LaneKeep => "lane_keep",
            ScenarioFamily::StopStart => "stop_start",
            ScenarioFamily::Turn => "turn",
            ScenarioFamily::Interaction => "interaction",
            ScenarioFamily::Irregular => "irregular",
        }
    }
}

impl fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScenarioFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown scenario family `{s}`")))
    }
}

/// One traffic scenario: observed and future states of every agent, the map
/// and traffic signal records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub t_obs: usize,
    pub t_fut: usize,
    pub tracks: Vec<AgentTrack>,
    pub map: Vec<MapPolyline>,
    pub signals: Vec<TrafficSignal>,
    pub predict_ids: Vec<u64>,
    pub family: ScenarioFamily,
}

/// Borrowed history/future views of every track, in track order.
#[derive(Debug)]
pub struct SplitView<'a> {
    pub history: Vec<&'a [AgentState]>,
    pub future: Vec<&'a [AgentState]>,
}

impl Scene {
    pub fn track(&self, id: u64) -> Option<&AgentTrack> {
        self.tracks.iter().find(|t| t.agent_id == id)
    }

    pub fn is_predicted(&self, id: u64) -> bool {
        self.predict_ids.contains(&id)
    }

    /// Indices into `tracks` of the predicted agents, in `predict_ids` order.
    pub fn predicted_indices(&self) -> Vec<usize> {
        self.predict_ids
            .iter()
            .filter_map(|id| self.tracks.iter().position(|t| t.agent_id == *id))
            .collect()
    }

    pub fn last_observed(&self, track: &AgentTrack) -> AgentState {
        track.states[self.t_obs - 1]
    }

    /// History covers steps `[0, t_obs)`, future `[t_obs, t_obs + t_fut)`.
    pub fn split_history_future(&self) -> SplitView<'_> {
        let (history, future) = self
            .tracks
            .iter()
            .map(|t| t.states.split_at(self.t_obs.min(t.states.len())))
            .unzip();
        SplitView { history, future }
    }

    /// Checks every structural invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let parse = |path: String, msg: String| Error::Parse { path, msg };
        if self.t_obs == 0 {
            return Err(parse("t_obs".into(), "must be at least 1".into()));
        }
        let len = self.t_obs + self.t_fut;
        let mut ids = HashSet::new();
        for (i, t) in self.tracks.iter().enumerate() {
            if !ids.insert(t.agent_id) {
                return Err(parse(
                    format!("tracks[{i}].agent_id"),
                    format!("duplicate agent id {}", t.agent_id),
                ));
            }
            if t.states.len() != len {
                return Err(parse(
                    format!("tracks[{i}].states"),
                    format!(
                        "track {} has {} states, expected t_obs + t_fut = {len}",
                        t.agent_id,
                        t.states.len()
                    ),
                ));
            }
            for (k, s) in t.states.iter().enumerate() {
                if s.valid && ![s.x, s.y, s.heading, s.vx, s.vy].iter().all(|v| v.is_finite()) {
                    return Err(parse(
                        format!("tracks[{i}].states[{k}]"),
                        "valid state with non-finite value".into(),
                    ));
                }
            }
            for (k, w) in t.states.windows(2).enumerate() {
                if w[0].valid && w[1].valid {
                    let step = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
                    if step > V_MAX * DT + 1e-9 {
                        return Err(parse(
                            format!("tracks[{i}].states[{}]", k + 1),
                            format!("displacement {step:.3} m exceeds {} m per step", V_MAX * DT),
                        ));
                    }
                }
            }
        }
        for (i, p) in self.map.iter().enumerate() {
            if p.points.len() < 2 {
                return Err(parse(format!("map[{i}].points"), "needs at least 2 points".into()));
            }
            if p.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(parse(format!("map[{i}].points"), "non-finite point".into()));
            }
            if p.points.windows(2).any(|w| w[0] == w[1]) {
                return Err(parse(
                    format!("map[{i}].points"),
                    "duplicated consecutive point".into(),
                ));
            }
        }
        for (i, s) in self.signals.iter().enumerate() {
            if s.state_per_step.len() != self.t_obs {
                return Err(parse(
                    format!("signals[{i}].state_per_step"),
                    format!("{} states, expected t_obs = {}", s.state_per_step.len(), self.t_obs),
                ));
            }
        }
        if self.predict_ids.is_empty() {
            return Err(parse("predict_ids".into(), "must not be empty".into()));
        }
        for (i, id) in self.predict_ids.iter().enumerate() {
            let Some(t) = self.track(*id) else {
                return Err(parse(
                    format!("predict_ids[{i}]"),
                    format!("unknown agent id {id}"),
                ));
            };
            if !t.states[self.t_obs - 1].valid {
                return Err(parse(
                    format!("predict_ids[{i}]"),
                    format!("agent {id} is not valid at the last observed step"),
                ));
            }
        }
        if self.predict_ids.iter().collect::<HashSet<_>>().len() != self.predict_ids.len() {
            return Err(parse("predict_ids".into(), "duplicate id".into()));
        }
        Ok(())
    }
}
