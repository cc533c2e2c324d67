//! Deterministic synthetic scenarios for the five scenario families.
//!
//! Each family lays out a small road network in a fixed frame, places a few
//! "structured" agents whose futures follow the shared kinematic rules in
//! [`super::kinematics`], then pads the scene with background agents
//! (pedestrians, cyclists, oncoming traffic) up to the requested count.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kinematics::{state_on, Path, SpeedPlan, START_ACCEL};
use super::{
    AgentState, AgentTrack, AgentType, MapPolyline, PolylineType, ScenarioFamily, Scene,
    SignalState, TrafficSignal, DEFAULT_T_FUT, DEFAULT_T_OBS, DT, V_MAX,
};
use crate::error::{Error, Result};

/// Gap kept behind a stopped vehicle, meters.
pub const STOP_GAP: f64 = 8.0;
/// Distance before a signal at which vehicles come to rest, meters.
pub const STOP_LINE_OFFSET: f64 = 1.0;

const POINT_SPACING: f64 = 2.0;
const PEDESTRIAN_SPEED: f64 = 1.4;
const BICYCLE_SPEED: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Total agents per scene (structured agents first, then background).
    pub num_agents: usize,
    /// Upper bound on jointly predicted agents; families cap it further.
    pub num_predicted: usize,
    pub t_obs: usize,
    pub t_fut: usize,
    pub lane_width: f64,
    /// Minimum lane length; lanes are extended to cover the horizon.
    pub lane_length: f64,
    /// Nominal vehicle speed, m/s.
    pub cruise_speed: f64,
    /// Relative spread of per-agent speeds around the nominal speed.
    pub speed_jitter: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_agents: 4,
            num_predicted: 2,
            t_obs: DEFAULT_T_OBS,
            t_fut: DEFAULT_T_FUT,
            lane_width: 3.5,
            lane_length: 200.0,
            cruise_speed: 10.0,
            speed_jitter: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_agents == 0 {
            return bad("num_agents must be at least 1".into());
        }
        if self.num_predicted == 0 || self.num_predicted > self.num_agents {
            return bad(format!(
                "num_predicted must be in 1..={}, got {}",
                self.num_agents, self.num_predicted
            ));
        }
        if self.t_obs < 3 {
            return bad(format!("t_obs must be at least 3, got {}", self.t_obs));
        }
        if !(self.lane_width.is_finite() && self.lane_width > 0.5) {
            return bad(format!("degenerate lane width {}", self.lane_width));
        }
        if !(self.lane_length.is_finite() && self.lane_length > 10.0) {
            return bad(format!("degenerate lane length {}", self.lane_length));
        }
        if !(0.0..0.5).contains(&self.speed_jitter) {
            return bad(format!("speed_jitter must be in [0, 0.5), got {}", self.speed_jitter));
        }
        if !(self.cruise_speed > 0.5 && self.cruise_speed * 1.5 < V_MAX) {
            return bad(format!("cruise_speed out of range: {}", self.cruise_speed));
        }
        Ok(())
    }

    fn horizon_s(&self) -> f64 {
        (self.t_obs + self.t_fut) as f64 * DT
    }
}

/// Samples a polyline by integrating `(length, curvature)` segments exactly.
fn build_polyline(start: [f64; 2], heading: f64, segments: &[(f64, f64)]) -> Vec<[f64; 2]> {
    let mut pts = vec![start];
    let (mut x, mut y, mut h) = (start[0], start[1], heading);
    for &(len, k) in segments {
        let n = (len / POINT_SPACING).ceil().max(1.0) as usize;
        let ds = len / n as f64;
        for _ in 0..n {
            if k.abs() < 1e-12 {
                x += ds * h.cos();
                y += ds * h.sin();
            } else {
                let h2 = h + k * ds;
                x += (h2.sin() - h.sin()) / k;
                y -= (h2.cos() - h.cos()) / k;
                h = h2;
            }
            pts.push([x, y]);
        }
    }
    pts
}

/// Offsets a polyline along its left normal.
fn offset_polyline(points: &[[f64; 2]], offset: f64) -> Vec<[f64; 2]> {
    let n = points.len();
    let seg_h = |i: usize| {
        let (a, b) = (points[i], points[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    };
    (0..n)
        .map(|i| {
            let h = if i == 0 {
                seg_h(0)
            } else if i == n - 1 {
                seg_h(n - 2)
            } else {
                let (a, b) = (seg_h(i - 1), seg_h(i));
                a + super::wrap_angle(b - a) / 2.0
            };
            [points[i][0] - offset * h.sin(), points[i][1] + offset * h.cos()]
        })
        .collect()
}

fn reversed(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    points.iter().rev().copied().collect()
}

fn line(a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    build_polyline(a, (b[1] - a[1]).atan2(b[0] - a[0]), &[(len, 0.0)])
}

/// An agent moving along a path: constant speed before the anchor step
/// (the last observed step), then `plan` from the anchor on.
struct Mover {
    agent_type: AgentType,
    path: Path,
    s_anchor: f64,
    v_anchor: f64,
    plan: SpeedPlan,
}

impl Mover {
    fn constant(agent_type: AgentType, path: Path, s_anchor: f64, v: f64) -> Self {
        Mover {
            agent_type,
            path,
            s_anchor,
            v_anchor: v,
            plan: SpeedPlan::Cruise {
                target: v,
                accel: START_ACCEL,
            },
        }
    }

    fn realize(&self, t_obs: usize, t_fut: usize) -> Vec<AgentState> {
        let anchor = t_obs - 1;
        (0..t_obs + t_fut)
            .map(|t| {
                if t < anchor {
                    let back = (anchor - t) as f64 * DT;
                    state_on(&self.path, self.s_anchor - self.v_anchor * back, self.v_anchor)
                } else {
                    let tau = (t - anchor) as f64 * DT;
                    let (s, v) = self.plan.eval(self.s_anchor, self.v_anchor, tau);
                    state_on(&self.path, s, v)
                }
            })
            .collect()
    }
}

struct Layout {
    map: Vec<MapPolyline>,
    signals: Vec<TrafficSignal>,
    /// Agents in priority order; truncated to the requested agent count.
    structured: Vec<Mover>,
    /// How many leading structured agents may be predicted.
    predictable: usize,
    /// Paths for background agents with their type and speed.
    background: Vec<(AgentType, Vec<[f64; 2]>, f64)>,
}

struct Ctx<'a> {
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
}

impl Ctx<'_> {
    fn speed(&mut self) -> f64 {
        let j = self.cfg.speed_jitter;
        let u = if j > 0.0 { self.rng.gen_range(-j..=j) } else { 0.0 };
        self.cfg.cruise_speed * (1.0 + u)
    }

    /// Distance a vehicle can cover during the whole horizon, plus margin.
    fn reach(&self) -> f64 {
        self.cfg.cruise_speed * (1.0 + self.cfg.speed_jitter) * self.cfg.horizon_s() + 40.0
    }

    fn lane_len(&self) -> f64 {
        self.cfg.lane_length.max(2.0 * self.reach())
    }

    fn path(points: &[[f64; 2]]) -> Path {
        Path::new(points).expect("generated polyline has distinct points")
    }

    fn polyline(kind: PolylineType, points: Vec<[f64; 2]>) -> MapPolyline {
        MapPolyline {
            polyline_type: kind,
            points,
        }
    }

    /// Straight two-way road along the x axis through the origin, with an
    /// optional gap `[-gap, gap]` for an intersection.
    fn lane_keep(&mut self) -> Layout {
        let w = self.cfg.lane_width;
        let reach = self.reach();
        let curvature = if self.rng.gen_bool(0.3) {
            0.0
        } else {
            let r = self.rng.gen_range(150.0..600.0);
            if self.rng.gen_bool(0.5) {
                1.0 / r
            } else {
                -1.0 / r
            }
        };
        let total = self.lane_len();
        let back = reach;
        let center = build_polyline([-back, 0.0], 0.0, &[(total, curvature)]);
        let left = offset_polyline(&center, w);
        let right = offset_polyline(&center, -w);
        let mut map = vec![
            Self::polyline(PolylineType::LaneCenter, center.clone()),
            Self::polyline(PolylineType::LaneCenter, left.clone()),
            Self::polyline(PolylineType::LaneCenter, right.clone()),
            Self::polyline(PolylineType::RoadEdge, offset_polyline(&center, 1.5 * w)),
            Self::polyline(PolylineType::RoadEdge, offset_polyline(&center, -1.5 * w)),
        ];
        map.retain(|p| p.points.len() >= 2);

        let s_a = back;
        let v0 = self.speed();
        let mut structured = vec![Mover::constant(AgentType::Vehicle, Self::path(&center), s_a, v0)];
        for lane in [&left, &right] {
            let ds = self.rng.gen_range(-25.0..25.0);
            let v = self.speed();
            structured.push(Mover::constant(AgentType::Vehicle, Self::path(lane), s_a + ds, v));
        }
        let background = vec![
            (AgentType::Pedestrian, offset_polyline(&center, 1.5 * w + 2.0), PEDESTRIAN_SPEED),
            (AgentType::Bicycle, offset_polyline(&center, -1.5 * w + 0.8), BICYCLE_SPEED),
            (AgentType::Pedestrian, reversed(&offset_polyline(&center, -1.5 * w - 2.0)), PEDESTRIAN_SPEED),
        ];
        Layout {
            map,
            signals: vec![],
            structured,
            predictable: 3,
            background,
        }
    }

    /// Four-way intersection at the origin with right-hand traffic.
    fn crossroads(&self, map: &mut Vec<MapPolyline>, skip_eastbound: bool) -> [Vec<[f64; 2]>; 4] {
        let w = self.cfg.lane_width;
        let l = self.lane_len() / 2.0;
        let east = line([-l, -w / 2.0], [l, -w / 2.0]);
        let west = line([l, w / 2.0], [-l, w / 2.0]);
        let north = line([w / 2.0, -l], [w / 2.0, l]);
        let south = line([-w / 2.0, l], [-w / 2.0, -l]);
        for (i, lane) in [&east, &west, &north, &south].into_iter().enumerate() {
            if !(skip_eastbound && i == 0) {
                map.push(Self::polyline(PolylineType::LaneCenter, lane.clone()));
            }
        }
        for (a, b) in [
            ([-l, -w], [-w, -w]),
            ([w, -w], [l, -w]),
            ([-l, w], [-w, w]),
            ([w, w], [l, w]),
            ([-w, -l], [-w, -w]),
            ([-w, w], [-w, l]),
            ([w, -l], [w, -w]),
            ([w, w], [w, l]),
        ] {
            map.push(Self::polyline(PolylineType::RoadEdge, line(a, b)));
        }
        let c = 1.5 * w;
        for (a, b) in [
            ([-c, -w], [-c, w]),
            ([c, -w], [c, w]),
            ([-w, -c], [w, -c]),
            ([-w, c], [w, c]),
        ] {
            map.push(Self::polyline(PolylineType::Crosswalk, line(a, b)));
        }
        [east, west, north, south]
    }

    fn corner_pedestrians(&self) -> Vec<(AgentType, Vec<[f64; 2]>, f64)> {
        let c = 2.0 * self.cfg.lane_width;
        [[-c, -c], [c, c], [c, -c], [-c, c]]
            .into_iter()
            .map(|p| (AgentType::Pedestrian, line(p, [p[0] + 1.0, p[1]]), 0.0))
            .collect()
    }

    fn stop_start(&mut self) -> Layout {
        let w = self.cfg.lane_width;
        let t_obs = self.cfg.t_obs;
        let mut map = vec![];
        let [east, west, north, _south] = self.crossroads(&mut map, false);
        let stop = 2.0 * w;

        // Ego waits at a red light that turns green at the last observed step.
        let ego_path = Self::path(&east);
        let ego_sig = [-stop, -w / 2.0];
        let s_ego = ego_path.project(ego_sig).s - STOP_LINE_OFFSET;
        let v_ego = self.speed();
        let ego = Mover {
            agent_type: AgentType::Vehicle,
            path: ego_path,
            s_anchor: s_ego,
            v_anchor: 0.0,
            plan: SpeedPlan::Cruise {
                target: v_ego,
                accel: START_ACCEL,
            },
        };
        let mut ego_states = vec![SignalState::Red; t_obs];
        ego_states[t_obs - 1] = SignalState::Green;

        // Crossing traffic sees green → yellow → red and brakes for its line.
        let cross_path = Self::path(&north);
        let cross_sig = [w / 2.0, -stop];
        let s_stop = cross_path.project(cross_sig).s - STOP_LINE_OFFSET;
        let v_cross = self.speed();
        let decel = self.rng.gen_range(2.5..3.5);
        let cross = Mover {
            agent_type: AgentType::Vehicle,
            path: cross_path,
            s_anchor: s_stop - v_cross * v_cross / (2.0 * decel),
            v_anchor: v_cross,
            plan: SpeedPlan::StopAt { s_stop },
        };
        let (g, y) = (t_obs / 3, 2 * t_obs / 3);
        let cross_states: Vec<_> = (0..t_obs)
            .map(|t| {
                if t < g.max(1) {
                    SignalState::Green
                } else if t < y.max(2) {
                    SignalState::Yellow
                } else {
                    SignalState::Red
                }
            })
            .collect();

        let signals = vec![
            TrafficSignal {
                position: ego_sig,
                state_per_step: ego_states.clone(),
            },
            TrafficSignal {
                position: [stop, w / 2.0],
                state_per_step: ego_states,
            },
            TrafficSignal {
                position: cross_sig,
                state_per_step: cross_states.clone(),
            },
            TrafficSignal {
                position: [-w / 2.0, stop],
                state_per_step: cross_states,
            },
        ];

        let v_on = self.speed();
        let oncoming_path = Self::path(&west);
        let s_on = oncoming_path.project([stop + 5.0, w / 2.0]).s;
        let oncoming = Mover::constant(AgentType::Vehicle, oncoming_path, s_on, v_on);
        Layout {
            map,
            signals,
            structured: vec![ego, cross, oncoming],
            predictable: 2,
            background: self.corner_pedestrians(),
        }
    }

    fn turn(&mut self) -> Layout {
        let w = self.cfg.lane_width;
        let mut map = vec![];
        let [_east, west, _north, _south] = self.crossroads(&mut map, true);
        let left = self.rng.gen_bool(0.5);
        let v = 0.7 * self.speed();
        let d_fut = v * self.cfg.t_fut as f64 * DT;
        let off = self.rng.gen_range(0.0..3.0);
        let r_nominal: f64 = self.rng.gen_range(8.0..20.0);
        let radius = r_nominal.min(((0.9 * d_fut - off) * 2.0 / PI).max(1.0));
        let x_turn = if left { w / 2.0 - radius } else { -w / 2.0 - radius };
        let back = self.reach();
        let start = [x_turn - back, -w / 2.0];
        let k = if left { 1.0 / radius } else { -1.0 / radius };
        let exit = self.reach();
        let turn_lane = build_polyline(start, 0.0, &[(back, 0.0), (FRAC_PI_2 * radius, k), (exit, 0.0)]);
        map.push(Self::polyline(PolylineType::LaneCenter, turn_lane.clone()));
        let ego = Mover::constant(AgentType::Vehicle, Self::path(&turn_lane), back - off, v);

        let oncoming_path = Self::path(&west);
        let s_on = oncoming_path.project([self.rng.gen_range(10.0..30.0), w / 2.0]).s;
        let v_on = self.speed();
        let oncoming = Mover::constant(AgentType::Vehicle, oncoming_path, s_on, v_on);
        let stop = 2.0 * w;
        let signals = vec![TrafficSignal {
            position: [-stop, -w / 2.0],
            state_per_step: vec![SignalState::Green; self.cfg.t_obs],
        }];
        Layout {
            map,
            signals,
            structured: vec![ego, oncoming],
            predictable: 2,
            background: self.corner_pedestrians(),
        }
    }

    fn interaction(&mut self, n_agents: usize) -> Layout {
        let w = self.cfg.lane_width;
        let back = self.reach();
        let total = self.lane_len();
        let lane0 = build_polyline([-back, 0.0], 0.0, &[(total, 0.0)]);
        let lane1 = offset_polyline(&lane0, w);
        let map = vec![
            Self::polyline(PolylineType::LaneCenter, lane0.clone()),
            Self::polyline(PolylineType::LaneCenter, lane1.clone()),
            Self::polyline(PolylineType::RoadEdge, offset_polyline(&lane0, -w / 2.0)),
            Self::polyline(PolylineType::RoadEdge, offset_polyline(&lane0, 1.5 * w)),
        ];
        let v = self.speed();
        let s_a = back;
        let decel = self.rng.gen_range(2.5..4.0);
        let s_obstacle = s_a + STOP_GAP + v * v / (2.0 * decel);
        let has_obstacle = n_agents >= 3;
        let ego_plan = if has_obstacle {
            SpeedPlan::StopAt {
                s_stop: s_obstacle - STOP_GAP,
            }
        } else {
            SpeedPlan::Cruise {
                target: v,
                accel: START_ACCEL,
            }
        };
        let ego = Mover {
            agent_type: AgentType::Vehicle,
            path: Self::path(&lane0),
            s_anchor: s_a,
            v_anchor: v,
            plan: ego_plan,
        };
        let adj = Mover::constant(
            AgentType::Vehicle,
            Self::path(&lane1),
            s_a + self.rng.gen_range(-15.0..15.0),
            self.speed(),
        );
        let obstacle = Mover::constant(AgentType::Vehicle, Self::path(&lane0), s_obstacle, 0.0);
        Layout {
            map,
            signals: vec![],
            structured: vec![ego, adj, obstacle],
            predictable: 2,
            background: vec![
                (AgentType::Pedestrian, offset_polyline(&lane0, -w / 2.0 - 2.0), PEDESTRIAN_SPEED),
                (AgentType::Bicycle, offset_polyline(&lane0, -w / 2.0 + 0.5), BICYCLE_SPEED),
            ],
        }
    }

    fn irregular(&mut self) -> Layout {
        let w = self.cfg.lane_width;
        let back = self.reach();
        let total = self.lane_len();
        let mut segments = vec![];
        let mut len = 0.0;
        while len < total {
            let l = self.rng.gen_range(10.0..25.0);
            let k = self.rng.gen_range(-1.0 / 30.0..1.0 / 30.0);
            segments.push((l, k));
            len += l;
        }
        let heading = self.rng.gen_range(-PI..PI);
        let start = [-back * heading.cos(), -back * heading.sin()];
        let center = build_polyline(start, heading, &segments);
        let path = Self::path(&center);
        let s_a = path.project([0.0, 0.0]).s.max(back * 0.5);
        let v = self.speed();
        let ego = Mover::constant(AgentType::Vehicle, path.clone(), s_a, v);
        let follower = Mover::constant(
            AgentType::Vehicle,
            path.clone(),
            s_a - self.rng.gen_range(15.0..30.0),
            v,
        );
        let leader = Mover::constant(
            AgentType::Vehicle,
            path,
            s_a + self.rng.gen_range(15.0..30.0),
            v,
        );
        let map = vec![
            Self::polyline(PolylineType::LaneCenter, center.clone()),
            Self::polyline(PolylineType::RoadEdge, offset_polyline(&center, w / 2.0 + 1.0)),
            Self::polyline(PolylineType::RoadEdge, offset_polyline(&center, -w / 2.0 - 1.0)),
        ];
        Layout {
            map,
            signals: vec![],
            structured: vec![ego, follower, leader],
            predictable: 3,
            background: vec![
                (AgentType::Pedestrian, offset_polyline(&center, w / 2.0 + 2.5), PEDESTRIAN_SPEED),
                (AgentType::Bicycle, offset_polyline(&center, -w / 2.0 - 0.5), BICYCLE_SPEED),
            ],
        }
    }
}

fn family_salt(family: ScenarioFamily) -> u64 {
    (family as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds one scene; identical `(family, seed, config)` give identical scenes.
pub fn generate_scene(family: ScenarioFamily, seed: u64, config: &GeneratorConfig) -> Result<Scene> {
    config.validate()?;
    let mut ctx = Ctx {
        cfg: config,
        rng: ChaCha8Rng::seed_from_u64(seed ^ family_salt(family)),
    };
    let n = config.num_agents;
    let mut layout = match family {
        ScenarioFamily::LaneKeep => ctx.lane_keep(),
        ScenarioFamily::StopStart => ctx.stop_start(),
        ScenarioFamily::Turn => ctx.turn(),
        ScenarioFamily::Interaction => ctx.interaction(n),
        ScenarioFamily::Irregular => ctx.irregular(),
    };
    layout.structured.truncate(n);
    let n_structured = layout.structured.len();
    let mut movers = layout.structured;
    for i in 0..n - n_structured {
        let (kind, points, speed) = &layout.background[i % layout.background.len()];
        let path = Ctx::path(points);
        let lap = (i / layout.background.len()) as f64;
        let s = ctx.rng.gen_range(0.2..0.8) * path.length() * 0.5 + 6.0 * lap;
        movers.push(Mover::constant(*kind, path, s, *speed));
    }

    let tracks = movers
        .iter()
        .enumerate()
        .map(|(i, m)| AgentTrack {
            agent_id: i as u64 + 1,
            agent_type: m.agent_type,
            states: m.realize(config.t_obs, config.t_fut),
        })
        .collect();
    let n_pred = config.num_predicted.min(layout.predictable).min(n_structured).max(1);
    let scene = Scene {
        scene_id: format!("{}-{seed}", family.name()),
        t_obs: config.t_obs,
        t_fut: config.t_fut,
        tracks,
        map: layout.map,
        signals: layout.signals,
        predict_ids: (1..=n_pred as u64).collect(),
        family,
    };
    scene.validate()?;
    Ok(scene)
}

/// `count` scenes cycling through `families`, seeds `seed, seed + 1, …`.
pub fn generate_dataset(
    families: &[ScenarioFamily],
    count: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<Vec<Scene>> {
    if families.is_empty() {
        return Err(Error::Config("no scenario families given".into()));
    }
    (0..count)
        .map(|i| generate_scene(families[i % families.len()], seed + i as u64, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::wrap_angle;

    #[test]
    fn deterministic_output() {
        let cfg = GeneratorConfig::default();
        let a = generate_scene(ScenarioFamily::LaneKeep, 7, &cfg).unwrap();
        let b = generate_scene(ScenarioFamily::LaneKeep, 7, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = generate_scene(ScenarioFamily::LaneKeep, 8, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn turn_changes_heading_by_sixty_degrees() {
        let cfg = GeneratorConfig::default();
        let s = generate_scene(ScenarioFamily::Turn, 1, &cfg).unwrap();
        let ego = &s.tracks[0];
        let h0 = ego.states[cfg.t_obs - 1].heading;
        let h1 = ego.states.last().unwrap().heading;
        assert!(wrap_angle(h1 - h0).abs() >= PI / 3.0);
    }

    #[test]
    fn stop_start_has_red_then_green() {
        let cfg = GeneratorConfig::default();
        let s = generate_scene(ScenarioFamily::StopStart, 3, &cfg).unwrap();
        let found = s.signals.iter().any(|sig| {
            let st = &sig.state_per_step;
            st.iter().enumerate().any(|(i, &a)| {
                a == SignalState::Red && st[i + 1..].contains(&SignalState::Green)
            })
        });
        assert!(found);
    }

    #[test]
    fn lane_keep_future_stays_on_a_lane() {
        let cfg = GeneratorConfig::default();
        for seed in 0..10 {
            let s = generate_scene(ScenarioFamily::LaneKeep, seed, &cfg).unwrap();
            let lanes: Vec<Path> = s
                .map
                .iter()
                .filter(|p| p.polyline_type == PolylineType::LaneCenter)
                .map(|p| Path::new(&p.points).unwrap())
                .collect();
            for id in &s.predict_ids {
                let t = s.track(*id).unwrap();
                let lateral = lanes
                    .iter()
                    .map(|l| {
                        t.states[cfg.t_obs..]
                            .iter()
                            .map(|st| l.project(st.position()).lateral)
                            .fold(0.0, f64::max)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(lateral <= 0.5, "seed {seed} agent {id}: {lateral}");
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = GeneratorConfig::default();
        for cfg in [
            GeneratorConfig { num_agents: 0, ..base.clone() },
            GeneratorConfig { lane_width: 0.0, ..base.clone() },
            GeneratorConfig { lane_length: -1.0, ..base.clone() },
            GeneratorConfig { num_predicted: 9, ..base.clone() },
            GeneratorConfig { t_obs: 1, ..base.clone() },
        ] {
            assert!(matches!(
                generate_scene(ScenarioFamily::Turn, 0, &cfg),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn small_agent_counts() {
        for family in ScenarioFamily::ALL {
            let cfg = GeneratorConfig {
                num_agents: 1,
                num_predicted: 1,
                ..GeneratorConfig::default()
            };
            let s = generate_scene(family, 4, &cfg).unwrap();
            assert_eq!(s.tracks.len(), 1);
            assert_eq!(s.predict_ids, vec![1]);
        }
    }

    #[test]
    fn many_background_agents() {
        let cfg = GeneratorConfig {
            num_agents: 12,
            ..GeneratorConfig::default()
        };
        for family in ScenarioFamily::ALL {
            let s = generate_scene(family, 9, &cfg).unwrap();
            assert_eq!(s.tracks.len(), 12);
        }
    }
}
