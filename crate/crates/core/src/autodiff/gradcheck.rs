//! Central finite-difference verification of analytic gradients.

use super::params::{ParamId, ParamSet, Session};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval(f: &impl Fn(&mut Tape, Var) -> Result<Var>, x: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).item())
}

/// Largest `|analytic − central difference| / max(1, |analytic|)` over all
/// coordinates of `x` for the scalar function `f`.
pub fn grad_check(
    f: impl Fn(&mut Tape, Var) -> Result<Var>,
    x: &Tensor,
    step: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    let analytic = tape.backward(out)?.wrt(v);

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (plus - minus) / (2.0 * step)));
    }
    Ok(worst)
}

/// Same measure over model parameters. At most `max_coords` evenly spaced
/// coordinates of each selected parameter are probed.
pub fn grad_check_params(
    params: &ParamSet,
    ids: &[ParamId],
    f: impl Fn(&mut Session) -> Result<Var>,
    step: f64,
    max_coords: usize,
) -> Result<f64> {
    let mut sess = Session::new(params);
    let out = f(&mut sess)?;
    let grads = sess.tape.backward(out)?;
    let analytic = sess.param_grads(&grads);

    let scalar = |p: &ParamSet| -> Result<f64> {
        let mut s = Session::inference(p);
        let out = f(&mut s)?;
        Ok(s.value(out).item())
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for &id in ids {
        let n = params.get(id).numel();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + step;
            let plus = scalar(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - step;
            let minus = scalar(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_err(analytic[id.0].data()[i], fd));
        }
    }
    Ok(worst)
}
