use serde::{Deserialize, Serialize};

use crate::autodiff::{Session, Var};
use crate::error::Result;
use crate::nn::{Init, Linear};

/// Gated recurrent unit. The input projections of all three gates are
/// fused in `input` (`[in × 3h]`, gate order z, r, candidate); `hidden_zr`
/// and `hidden_h` act on the state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Gru {
    pub hidden: usize,
    pub input: Linear,
    pub hidden_zr: Linear,
    pub hidden_h: Linear,
}

impl Gru {
    pub fn new(init: &mut Init, name: &str, d_in: usize, hidden: usize) -> Self {
        Gru {
            hidden,
            input: init.linear(&format!("{name}.input"), d_in, 3 * hidden),
            hidden_zr: init.linear_no_bias(&format!("{name}.hidden_zr"), hidden, 2 * hidden),
            hidden_h: init.linear_no_bias(&format!("{name}.hidden_h"), hidden, hidden),
        }
    }

    /// Input projection `x·W_x + b`, reusable across steps with constant input.
    pub fn project_input(&self, s: &mut Session, x: Var) -> Result<Var> {
        self.input.forward(s, x)
    }

    /// `z = σ(W_z[x,h])`, `r = σ(W_r[x,h])`, `h̃ = tanh(W_h[x, r⊙h])`,
    /// `h' = (1−z)⊙h + z⊙h̃`, given the projected input.
    pub fn step_projected(&self, s: &mut Session, h: Var, xp: Var) -> Result<Var> {
        let hd = self.hidden;
        let hzr = self.hidden_zr.forward(s, h)?;
        let xz = s.tape.slice(xp, 1, 0, hd)?;
        let xr = s.tape.slice(xp, 1, hd, hd)?;
        let xh = s.tape.slice(xp, 1, 2 * hd, hd)?;
        let hz = s.tape.slice(hzr, 1, 0, hd)?;
        let hr = s.tape.slice(hzr, 1, hd, hd)?;
        let z = s.tape.add(xz, hz)?;
        let z = s.tape.sigmoid(z);
        let r = s.tape.add(xr, hr)?;
        let r = s.tape.sigmoid(r);
        let rh = s.tape.mul(r, h)?;
        let hh = self.hidden_h.forward(s, rh)?;
        let cand = s.tape.add(xh, hh)?;
        let cand = s.tape.tanh(cand);
        let delta = s.tape.sub(cand, h)?;
        let gated = s.tape.mul(z, delta)?;
        s.tape.add(h, gated)
    }

    pub fn step(&self, s: &mut Session, h: Var, x: Var) -> Result<Var> {
        let xp = self.project_input(s, x)?;
        self.step_projected(s, h, xp)
    }
}
