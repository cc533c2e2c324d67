//! Conditional denoising diffusion over per-agent scenario latents.

mod denoiser;
mod latent;
mod schedule;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use latent::LatentCodec;
pub use schedule::NoiseSchedule;

use crate::autodiff::{ParamSet, Session, Tensor, Var};
use crate::error::{Error, Result};

/// Acceleration above which the preview is penalized, m/s².
pub const A_MAX: f64 = 10.0;

pub fn standard_normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("noise shape")
}

/// `mean(relu(|a| − A_MAX)²)` over the accelerations of decoded latent rows.
pub fn kinematic_penalty(s: &mut Session, latent: Var, codec: &LatentCodec) -> Result<Option<Var>> {
    let Some(m) = codec.accel_matrix() else {
        return Ok(None);
    };
    let half = m.shape()[1] / 2;
    let mv = s.constant(m);
    let acc = s.tape.matmul(latent, mv)?;
    let ax = s.tape.slice(acc, 1, 0, half)?;
    let ay = s.tape.slice(acc, 1, half, half)?;
    let ax2 = s.tape.square(ax)?;
    let ay2 = s.tape.square(ay)?;
    let sq = s.tape.add(ax2, ay2)?;
    let mag = s.tape.sqrt(sq)?;
    let excess = s.tape.add_scalar(mag, -A_MAX);
    let excess = s.tape.relu(excess);
    let pen = s.tape.square(excess)?;
    Ok(Some(s.tape.mean_all(pen)))
}

/// DDPM objective terms for one scene.
pub struct DdpmTerms {
    pub loss: Var,
    pub mse: f64,
    pub kinematic: f64,
}

/// Noise-regression loss plus the kinematic penalty on the implied clean
/// latent `x̂0 = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t`, for a given noise prediction.
/// The penalty is weighted by `ᾱ_t`, which cancels the `1/ᾱ_t` growth of
/// its scale at high noise levels.
pub fn ddpm_loss_from_prediction(
    s: &mut Session,
    schedule: &NoiseSchedule,
    codec: &LatentCodec,
    x_t: &Tensor,
    t: usize,
    eps: &Tensor,
    eps_hat: Var,
    lambda_kin: f64,
) -> Result<DdpmTerms> {
    if s.value(eps_hat).shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "noise prediction {:?} vs noise {:?}",
            s.value(eps_hat).shape(),
            eps.shape()
        )));
    }
    let ev = s.constant(eps.clone());
    let diff = s.tape.sub(eps_hat, ev)?;
    let sq = s.tape.square(diff)?;
    let mse = s.tape.mean_all(sq);
    let mse_value = s.value(mse).item();
    if lambda_kin == 0.0 {
        return Ok(DdpmTerms {
            loss: mse,
            mse: mse_value,
            kinematic: 0.0,
        });
    }
    let ab = schedule.alpha_bar(t);
    let xt = s.constant(x_t.clone());
    let noise = s.tape.scale(eps_hat, (1.0 - ab).sqrt());
    let x0_hat = s.tape.sub(xt, noise)?;
    let x0_hat = s.tape.scale(x0_hat, 1.0 / ab.sqrt());
    match kinematic_penalty(s, x0_hat, codec)? {
        Some(pen) => {
            let kin = s.value(pen).item();
            let weighted = s.tape.scale(pen, lambda_kin * ab);
            let loss = s.tape.add(mse, weighted)?;
            Ok(DdpmTerms {
                loss,
                mse: mse_value,
                kinematic: kin,
            })
        }
        None => Ok(DdpmTerms {
            loss: mse,
            mse: mse_value,
            kinematic: 0.0,
        }),
    }
}

/// Samples a step and noise, noises `x0`, and scores the denoiser.
pub fn ddpm_loss(
    s: &mut Session,
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    codec: &LatentCodec,
    x0: &Tensor,
    history: &Tensor,
    lambda_kin: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DdpmTerms> {
    let t = rng.gen_range(1..=schedule.steps);
    let eps = standard_normal(rng, x0.shape());
    let x_t = schedule.q_sample(x0, t, &eps)?;
    let xv = s.constant(x_t.clone());
    let eps_hat = denoiser.predict_noise(s, xv, t, history)?;
    ddpm_loss_from_prediction(s, schedule, codec, &x_t, t, &eps, eps_hat, lambda_kin)
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`, one row per agent.
pub fn sample_latent(
    denoiser: &Denoiser,
    params: &ParamSet,
    schedule: &NoiseSchedule,
    history: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let n = history.shape()[0];
    let d = denoiser.config.d_latent;
    sample_with(schedule, standard_normal(rng, &[n, d]), rng, |x, t| {
        let mut s = Session::inference(params);
        let xv = s.constant(x.clone());
        let e = denoiser.predict_noise(&mut s, xv, t, history)?;
        Ok(s.value(e).clone())
    })
}

/// Reverse recursion `x_{t−1} = (x_t − β_t/√(1−ᾱ_t) ε̂) / √α_t + √β_t z`,
/// with `z = 0` at `t = 1`.
pub fn sample_with(
    schedule: &NoiseSchedule,
    x_start: Tensor,
    rng: &mut ChaCha8Rng,
    mut eps_hat: impl FnMut(&Tensor, usize) -> Result<Tensor>,
) -> Result<Tensor> {
    let mut x = x_start;
    for t in (1..=schedule.steps).rev() {
        let e = eps_hat(&x, t)?;
        let (beta, alpha, ab) = (schedule.beta(t), schedule.alpha(t), schedule.alpha_bar(t));
        let c = beta / (1.0 - ab).sqrt();
        let z = if t > 1 {
            Some(standard_normal(rng, x.shape()))
        } else {
            None
        };
        let sigma = beta.sqrt();
        let data = x
            .data()
            .iter()
            .zip(e.data())
            .enumerate()
            .map(|(i, (xv, ev))| {
                let mean = (xv - c * ev) / alpha.sqrt();
                mean + z.as_ref().map_or(0.0, |z| sigma * z.data()[i])
            })
            .collect();
        x = Tensor::new(x.shape().to_vec(), data)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests;
