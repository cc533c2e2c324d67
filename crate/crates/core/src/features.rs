//! Per-step numeric features shared by the networks.

use crate::autodiff::Tensor;
use crate::scene::{AgentState, AgentTrack};

/// Length of [`state_features`].
pub const STATE_FEATURES: usize = 7;
/// Divisor applied to positions.
pub const POSITION_SCALE: f64 = 50.0;
/// Divisor applied to velocities.
pub const VELOCITY_SCALE: f64 = 10.0;

/// `[x, y, cos h, sin h, vx, vy, valid]` normalized; all zero when invalid.
pub fn state_features(s: &AgentState) -> [f64; STATE_FEATURES] {
    if !s.valid {
        return [0.0; STATE_FEATURES];
    }
    [
        s.x / POSITION_SCALE,
        s.y / POSITION_SCALE,
        s.heading.cos(),
        s.heading.sin(),
        s.vx / VELOCITY_SCALE,
        s.vy / VELOCITY_SCALE,
        1.0,
    ]
}

/// One row per track: the flattened features of its first `t_obs` states.
pub fn history_matrix(tracks: &[AgentTrack], t_obs: usize) -> Tensor {
    let width = t_obs * STATE_FEATURES;
    let mut data = Vec::with_capacity(tracks.len() * width);
    for t in tracks {
        for s in &t.states[..t_obs] {
            data.extend_from_slice(&state_features(s));
        }
    }
    Tensor::new(vec![tracks.len(), width], data).expect("at least one track")
}
