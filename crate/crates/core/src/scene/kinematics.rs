//! Path-following kinematics shared by the scenario generator and the
//! rule-based reference predictor.
//!
//! Motion is described along a polyline by an arc-length position and a
//! closed-form speed plan, so identical inputs give identical positions.

use super::{wrap_angle, AgentState, DT};

/// Comfortable longitudinal acceleration used when (re)starting, m/s².
pub const START_ACCEL: f64 = 2.0;

/// Arc-length parameterized polyline, extended linearly past both ends.
#[derive(Clone, Debug)]
pub struct Path {
    points: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct Projection {
    /// Arc length of the closest point (may be negative or past the end).
    pub s: f64,
    /// Unsigned distance to the (extended) path.
    pub lateral: f64,
    pub heading: f64,
}

impl Path {
    /// `None` when fewer than two distinct points are given.
    pub fn new(points: &[[f64; 2]]) -> Option<Self> {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q| (p[0] - q[0]).hypot(p[1] - q[1]) > 1e-9) {
                pts.push(*p);
            }
        }
        if pts.len() < 2 {
            return None;
        }
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            cum.push(cum.last().unwrap() + d);
        }
        Some(Path { points: pts, cum })
    }

    /// Straight ray from `origin` along `heading`.
    pub fn ray(origin: [f64; 2], heading: f64) -> Self {
        let end = [origin[0] + heading.cos(), origin[1] + heading.sin()];
        Path::new(&[origin, end]).expect("distinct points")
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    fn segment(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        if s <= 0.0 {
            return 0;
        }
        match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => (i - 1).min(n - 1),
        }
    }

    fn seg_heading(&self, i: usize) -> f64 {
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Position and tangent heading at arc length `s`.
    pub fn pose_at(&self, s: f64) -> ([f64; 2], f64) {
        let i = self.segment(s);
        let h = self.seg_heading(i);
        let a = self.points[i];
        let ds = s - self.cum[i];
        ([a[0] + ds * h.cos(), a[1] + ds * h.sin()], h)
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        let n = self.points.len() - 1;
        let mut best = Projection {
            s: 0.0,
            lateral: f64::INFINITY,
            heading: 0.0,
        };
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = self.cum[i + 1] - self.cum[i];
            let mut u = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (len * len);
            if i > 0 {
                u = u.max(0.0);
            }
            if i < n - 1 {
                u = u.min(1.0);
            }
            let q = [a[0] + u * dx, a[1] + u * dy];
            let d = (p[0] - q[0]).hypot(p[1] - q[1]);
            if d < best.lateral {
                best = Projection {
                    s: self.cum[i] + u * len,
                    lateral: d,
                    heading: dy.atan2(dx),
                };
            }
        }
        best
    }
}

/// Longitudinal behaviour from a starting arc position and speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpeedPlan {
    /// Change speed at `accel` until `target`, then hold it.
    Cruise { target: f64, accel: f64 },
    /// Constant deceleration that comes to rest exactly at `s_stop`.
    StopAt { s_stop: f64 },
}

impl SpeedPlan {
    /// Arc position and speed `tau` seconds after starting at `(s0, v0)`.
    pub fn eval(&self, s0: f64, v0: f64, tau: f64) -> (f64, f64) {
        match *self {
            SpeedPlan::Cruise { target, accel } => {
                let a = if target >= v0 { accel } else { -accel };
                let t1 = if accel > 0.0 { (target - v0) / a } else { 0.0 };
                if tau <= t1 {
                    (s0 + v0 * tau + 0.5 * a * tau * tau, v0 + a * tau)
                } else {
                    let s1 = s0 + v0 * t1 + 0.5 * a * t1 * t1;
                    (s1 + target * (tau - t1), target)
                }
            }
            SpeedPlan::StopAt { s_stop } => {
                let d = s_stop - s0;
                if d <= 1e-9 || v0 <= 1e-9 {
                    return (s0, 0.0);
                }
                let a = v0 * v0 / (2.0 * d);
                let t_stop = v0 / a;
                if tau >= t_stop {
                    (s_stop, 0.0)
                } else {
                    (s0 + v0 * tau - 0.5 * a * tau * tau, v0 - a * tau)
                }
            }
        }
    }
}

pub fn state_on(path: &Path, s: f64, v: f64) -> AgentState {
    let (p, h) = path.pose_at(s);
    AgentState {
        x: p[0],
        y: p[1],
        heading: wrap_angle(h),
        vx: v * h.cos(),
        vy: v * h.sin(),
        valid: true,
    }
}

/// States at steps `1..=steps` after `(s0, v0)` under `plan`.
pub fn rollout(path: &Path, s0: f64, v0: f64, plan: SpeedPlan, steps: usize) -> Vec<AgentState> {
    (1..=steps)
        .map(|k| {
            let (s, v) = plan.eval(s0, v0, k as f64 * DT);
            state_on(path, s, v)
        })
        .collect()
}
