//! Scenario latent encoding: per agent, a truncated cosine spectrum of its
//! future displacement from the last observed position, scaled so every
//! coefficient is of order one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scene::{AgentState, Scene, DT};

/// Cosine-basis codec between latent rows and future displacement curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCodec {
    pub d_latent: usize,
    pub t_fut: usize,
    /// Physical size of one latent unit per frequency.
    scale: Vec<f64>,
}

impl LatentCodec {
    pub fn new(d_latent: usize, t_fut: usize) -> Result<Self> {
        if d_latent < 2 || d_latent % 2 != 0 {
            return Err(Error::Config(format!(
                "latent dimension must be even and at least 2, got {d_latent}"
            )));
        }
        let base = 5.0 * DT * (t_fut.max(1) as f64).powf(1.5);
        let scale = (0..d_latent / 2)
            .map(|j| base / (1.0 + (j * j) as f64))
            .collect();
        Ok(LatentCodec {
            d_latent,
            t_fut,
            scale,
        })
    }

    pub fn n_freq(&self) -> usize {
        self.d_latent / 2
    }

    /// Orthonormal DCT-II basis value for frequency `j` at step `n`; zero
    /// for frequencies the horizon cannot represent.
    fn basis(&self, j: usize, n: usize) -> f64 {
        let t = self.t_fut;
        if j >= t {
            return 0.0;
        }
        let c = if j == 0 { (1.0 / t as f64).sqrt() } else { (2.0 / t as f64).sqrt() };
        c * (PI * (n as f64 + 0.5) * j as f64 / t as f64).cos()
    }

    /// Latent row for one agent; invalid future steps hold the last valid position.
    pub fn encode(&self, last: [f64; 2], future: &[AgentState]) -> Vec<f64> {
        let f = self.n_freq();
        let mut held = last;
        let disp: Vec<[f64; 2]> = future
            .iter()
            .take(self.t_fut)
            .map(|s| {
                if s.valid {
                    held = s.position();
                }
                [held[0] - last[0], held[1] - last[1]]
            })
            .collect();
        let mut out = vec![0.0; self.d_latent];
        for j in 0..f {
            for (n, d) in disp.iter().enumerate() {
                let b = self.basis(j, n);
                out[j] += b * d[0];
                out[f + j] += b * d[1];
            }
            out[j] /= self.scale[j];
            out[f + j] /= self.scale[j];
        }
        out
    }

    /// One latent row per track, in track order.
    pub fn encode_scene(&self, scene: &Scene) -> Result<Tensor> {
        if scene.t_fut != self.t_fut {
            return Err(Error::Shape(format!(
                "scene horizon {} differs from latent horizon {}",
                scene.t_fut, self.t_fut
            )));
        }
        let mut data = Vec::with_capacity(scene.tracks.len() * self.d_latent);
        for t in &scene.tracks {
            let (hist, fut) = t.states.split_at(scene.t_obs);
            let last = hist.iter().rev().find(|s| s.valid).map_or([0.0, 0.0], |s| s.position());
            data.extend(self.encode(last, fut));
        }
        Tensor::new(vec![scene.tracks.len(), self.d_latent], data)
    }

    /// Displacements `[T_fut × 2]` relative to the last observed position.
    pub fn decode(&self, row: &[f64]) -> Vec<[f64; 2]> {
        let f = self.n_freq();
        (0..self.t_fut)
            .map(|n| {
                let mut d = [0.0, 0.0];
                for j in 0..f {
                    let b = self.basis(j, n) * self.scale[j];
                    d[0] += b * row[j];
                    d[1] += b * row[f + j];
                }
                d
            })
            .collect()
    }

    /// Linear map from a latent row to per-step accelerations, laid out as
    /// `[a_x(1..T−1), a_y(1..T−1)]` by second differences with zero
    /// displacement at the last observed step. `None` when `T_fut < 2`.
    pub fn accel_matrix(&self) -> Option<Tensor> {
        let t = self.t_fut;
        if t < 2 {
            return None;
        }
        let f = self.n_freq();
        let m = t - 1;
        let mut data = vec![0.0; self.d_latent * 2 * m];
        let disp = |j: usize, n: isize| -> f64 {
            if n < 0 {
                0.0
            } else {
                self.basis(j, n as usize) * self.scale[j]
            }
        };
        for j in 0..f {
            for k in 0..m {
                // Future step k + 1 sits at basis index k; neighbors k − 1 and k + 1.
                let n = k as isize;
                let a = (disp(j, n + 1) - 2.0 * disp(j, n) + disp(j, n - 1)) / (DT * DT);
                data[j * 2 * m + k] = a;
                data[(f + j) * 2 * m + m + k] = a;
            }
        }
        Some(Tensor::new(vec![self.d_latent, 2 * m], data).expect("accel shape"))
    }
}
