use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Session, SplineGrid, Var};
use crate::error::Result;
use crate::nn::Init;

/// Uniform spline grid shared by every edge of a KAN layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanGrid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
}

impl Default for KanGrid {
    fn default() -> Self {
        KanGrid {
            lo: -3.0,
            hi: 3.0,
            intervals: 8,
            order: 3,
        }
    }
}

/// `y_j = Σ_i w_base(i,j)·silu(x_i) + Σ_i Σ_m c(i,j,m)·B_m(x_i)`.
///
/// Coefficients are stored as a `[in·(G+k) × out]` matrix whose row
/// `i·(G+k) + m` holds `c(i, ·, m)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub grid: KanGrid,
    pub base: ParamId,
    pub coef: ParamId,
}

impl KanLayer {
    pub fn new(init: &mut Init, name: &str, in_dim: usize, out_dim: usize, grid: KanGrid, zero: bool) -> Self {
        let nb = grid.intervals + grid.order;
        let (sb, sc) = if zero {
            (0.0, 0.0)
        } else {
            (1.0 / (in_dim as f64).sqrt(), 0.1 / (in_dim as f64).sqrt())
        };
        KanLayer {
            in_dim,
            out_dim,
            grid,
            base: init.normal(&format!("{name}.base"), &[in_dim, out_dim], sb),
            coef: init.normal(&format!("{name}.coef"), &[in_dim * nb, out_dim], sc),
        }
    }

    pub fn spline_grid(&self) -> Result<SplineGrid> {
        SplineGrid::uniform(self.grid.lo, self.grid.hi, self.grid.intervals, self.grid.order)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let grid = Arc::new(self.spline_grid()?);
        let act = s.tape.silu(x)?;
        let wb = s.p(self.base);
        let base = s.tape.matmul(act, wb)?;
        let basis = s.tape.spline_basis(x, grid)?;
        let c = s.p(self.coef);
        let spline = s.tape.matmul(basis, c)?;
        s.tape.add(base, spline)
    }
}
