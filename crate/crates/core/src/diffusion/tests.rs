use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check_params;
use crate::features::history_matrix;
use crate::scene::{generate_scene, GeneratorConfig, ScenarioFamily, Scene};

fn scene(family: ScenarioFamily, agents: usize) -> Scene {
    let cfg = GeneratorConfig {
        num_agents: agents,
        t_fut: 12,
        ..GeneratorConfig::default()
    };
    generate_scene(family, 3, &cfg).unwrap()
}

fn small(steps: usize) -> (ParamSet, Denoiser) {
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = Denoiser::new(
        &mut params,
        &mut rng,
        DenoiserConfig {
            d_latent: 8,
            d_hidden: 16,
            d_cond: 8,
            blocks: 2,
            t_obs: 10,
            steps,
        },
    );
    (params, d)
}

/// Replaces the zero-initialized output layer by random values.
fn randomize_all(params: &mut ParamSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if params.name(id).starts_with("diffusion.out") {
            let t = params.get_mut(id);
            let noise = standard_normal(&mut rng, t.shape());
            t.data_mut().copy_from_slice(noise.map(|v| 0.3 * v).data());
        }
    }
}

fn eps_hat(params: &ParamSet, d: &Denoiser, x: &Tensor, t: usize, h: &Tensor) -> Tensor {
    let mut s = Session::inference(params);
    let xv = s.constant(x.clone());
    let e = d.predict_noise(&mut s, xv, t, h).unwrap();
    s.value(e).clone()
}

#[test]
fn zero_initialized_output_predicts_zero() {
    let (params, d) = small(10);
    let sc = scene(ScenarioFamily::LaneKeep, 4);
    let h = history_matrix(&sc.tracks, 10);
    let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(2), &[4, 8]);
    let e = eps_hat(&params, &d, &x, 5, &h);
    assert!(e.data().iter().all(|&v| v == 0.0));
}

#[test]
fn prediction_is_pure_and_checks_shapes() {
    let (mut params, d) = small(10);
    randomize_all(&mut params, 3);
    let sc = scene(ScenarioFamily::Turn, 3);
    let h = history_matrix(&sc.tracks, 10);
    let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(2), &[3, 8]);
    assert_eq!(eps_hat(&params, &d, &x, 4, &h), eps_hat(&params, &d, &x, 4, &h));
    let mut s = Session::inference(&params);
    let wrong = s.constant(Tensor::zeros(&[2, 8]));
    assert!(matches!(d.predict_noise(&mut s, wrong, 4, &h), Err(Error::Shape(_))));
}

#[test]
fn denoiser_parameter_gradients() {
    let (mut params, d) = small(10);
    randomize_all(&mut params, 4);
    let sc = scene(ScenarioFamily::Interaction, 3);
    let h = history_matrix(&sc.tracks, 10);
    let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(5), &[3, 8]);
    let ids: Vec<_> = params.ids().collect();
    let err = grad_check_params(
        &params,
        &ids,
        |s| {
            let xv = s.constant(x.clone());
            let e = d.predict_noise(s, xv, 7, &h)?;
            let sq = s.tape.square(e)?;
            Ok(s.tape.sum_all(sq))
        },
        1e-5,
        6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn permuting_agents_permutes_noise_rows() {
    let (mut params, d) = small(10);
    randomize_all(&mut params, 6);
    let mut sc = scene(ScenarioFamily::StopStart, 4);
    let h = history_matrix(&sc.tracks, 10);
    let x = standard_normal(&mut ChaCha8Rng::seed_from_u64(7), &[4, 8]);
    let e = eps_hat(&params, &d, &x, 3, &h);
    let perm = [2, 0, 3, 1];
    sc.tracks = perm.iter().map(|&i| sc.tracks[i].clone()).collect();
    let hp = history_matrix(&sc.tracks, 10);
    let xp = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let ep = eps_hat(&params, &d, &xp, 3, &hp);
    for (r, &i) in perm.iter().enumerate() {
        for (a, b) in ep.row(r).iter().zip(e.row(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn perfect_prediction_gives_zero_loss() {
    let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
    let codec = LatentCodec::new(8, 12).unwrap();
    let params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = standard_normal(&mut rng, &[3, 8]);
    let eps = standard_normal(&mut rng, &[3, 8]);
    let xt = sched.q_sample(&x0, 6, &eps).unwrap();
    let mut s = Session::inference(&params);
    let eh = s.constant(eps.clone());
    let terms = ddpm_loss_from_prediction(&mut s, &sched, &codec, &xt, 6, &eps, eh, 0.0).unwrap();
    assert_eq!(s.value(terms.loss).item(), 0.0);
}

#[test]
fn zero_prediction_loss_is_unit_on_average() {
    let (params, d) = small(10);
    let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
    let codec = LatentCodec::new(8, 12).unwrap();
    let sc = scene(ScenarioFamily::LaneKeep, 2);
    let h = history_matrix(&sc.tracks, 10);
    let x0 = codec.encode_scene(&sc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws = 10_000;
    let mut total = 0.0;
    for _ in 0..draws {
        let mut s = Session::inference(&params);
        let terms = ddpm_loss(&mut s, &d, &sched, &codec, &x0, &h, 0.0, &mut rng).unwrap();
        total += s.value(terms.loss).item();
    }
    // Each draw averages 16 squared normals: variance 2/16 per draw.
    let mean = total / draws as f64;
    let se = (2.0 / 16.0 / draws as f64).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * se, "{mean}");
}

#[test]
fn kinematic_penalty_raises_loss_when_active() {
    let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
    let codec = LatentCodec::new(8, 12).unwrap();
    let params = ParamSet::new();
    let mut x0 = Tensor::zeros(&[1, 8]);
    x0.data_mut()[3] = 40.0;
    let eps = Tensor::zeros(&[1, 8]);
    let xt = sched.q_sample(&x0, 1, &eps).unwrap();
    let run = |lambda| {
        let mut s = Session::inference(&params);
        let eh = s.constant(eps.clone());
        let t = ddpm_loss_from_prediction(&mut s, &sched, &codec, &xt, 1, &eps, eh, lambda).unwrap();
        (s.value(t.loss).item(), t.kinematic)
    };
    let (plain, _) = run(0.0);
    let (penalized, kin) = run(0.1);
    assert!(kin > 0.0);
    assert!(penalized > plain);
    let expected = plain + 0.1 * sched.alpha_bar(1) * kin;
    assert!((penalized - expected).abs() <= 1e-12 * expected);
}

#[test]
fn sampling_is_deterministic_and_shaped() {
    let (mut params, d) = small(10);
    randomize_all(&mut params, 2);
    let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
    for agents in [2, 5] {
        let sc = scene(ScenarioFamily::Irregular, agents);
        let h = history_matrix(&sc.tracks, 10);
        let a = sample_latent(&d, &params, &sched, &h, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_latent(&d, &params, &sched, &h, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[agents, 8]);
    }
}

#[test]
fn zero_noise_prediction_samples_have_zero_mean() {
    let sched = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 1000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let start = standard_normal(&mut rng, &[1]);
        let x = sample_with(&sched, start, &mut rng, |x, _| Ok(Tensor::zeros(x.shape()))).unwrap();
        sum += x.item();
        sumsq += x.item() * x.item();
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    assert!(mean.abs() < 3.0 * (var / n as f64).sqrt(), "{mean}");
}
