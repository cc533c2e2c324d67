use super::*;
use crate::autodiff::grad_check_params;
use crate::diffusion::{ddpm_loss_from_prediction, standard_normal};
use crate::scene::{generate_scene, GeneratorConfig, ScenarioFamily};

fn small_model() -> ModelConfig {
    ModelConfig {
        t_obs: 10,
        t_fut: 12,
        modes: 3,
        d_model: 16,
        heads: 2,
        d_latent: 6,
        map_points: 4,
        decoder_hidden: 16,
        kan_hidden: 4,
        diffusion_steps: 10,
        denoiser_hidden: 16,
        denoiser_cond: 8,
        denoiser_blocks: 1,
        ..ModelConfig::default()
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        model: small_model(),
        batch_size: 2,
        epochs: 1,
        eval_every: 0,
        ..TrainConfig::default()
    }
}

fn scenes(n: usize) -> Vec<Scene> {
    let cfg = GeneratorConfig {
        t_fut: 12,
        num_agents: 3,
        ..GeneratorConfig::default()
    };
    (0..n)
        .map(|i| generate_scene(ScenarioFamily::ALL[i % 5], 100 + i as u64, &cfg).unwrap())
        .collect()
}

fn constant_output(s: &mut Session, gt: &[Vec<AgentState>], k: usize, probs: Vec<f64>) -> DecoderOutput {
    let a = gt.len();
    let t_fut = gt[0].len();
    let r_total = k * a;
    let mut pos = vec![0.0; t_fut * 2 * r_total];
    for r in 0..r_total {
        let off = (r / a) as f64 * 3.0;
        for t in 0..t_fut {
            pos[t * 2 * r_total + 2 * r] = gt[r % a][t].x + off;
            pos[t * 2 * r_total + 2 * r + 1] = gt[r % a][t].y;
        }
    }
    DecoderOutput {
        positions: s.constant(Tensor::new(vec![t_fut, 2 * r_total], pos).unwrap()),
        probs: s.constant(Tensor::new(vec![1, k], probs).unwrap()),
        modes: k,
        agents: a,
        t_fut,
    }
}

#[test]
fn perfect_prediction_gives_zero_loss() {
    let sc = &scenes(1)[0];
    let gt = metrics::ground_truth(sc);
    let model = Model::new(small_model()).unwrap();
    let mut s = Session::inference(&model.params);
    let out = constant_output(&mut s, &gt, 3, vec![1.0, 0.0, 0.0]);
    let traj = trajectory_terms(&mut s, &out, &gt).unwrap();
    assert_eq!(traj.best_mode, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = standard_normal(&mut rng, &[3, 6]);
    let t = 4;
    let x_t = eps.map(|v| v * (1.0 - model.schedule.alpha_bar(t)).sqrt());
    let eps_hat = s.constant(eps.clone());
    let ddpm = ddpm_loss_from_prediction(&mut s, &model.schedule, &model.codec, &x_t, t, &eps, eps_hat, 0.1).unwrap();
    let (_, terms) = combine_loss(&mut s, ddpm.loss, &traj, 0.5).unwrap();
    assert_eq!(terms, LossTerms::default());
}

#[test]
fn uniform_confidence_term_is_log_k() {
    let sc = &scenes(1)[0];
    let gt = metrics::ground_truth(sc);
    let model = Model::new(small_model()).unwrap();
    let mut s = Session::inference(&model.params);
    let out = constant_output(&mut s, &gt, 6, vec![1.0 / 6.0; 6]);
    let traj = trajectory_terms(&mut s, &out, &gt).unwrap();
    assert!((s.value(traj.conf).item() - 6f64.ln()).abs() < 1e-12);
    assert_eq!(s.value(traj.traj).item(), 0.0);
    assert!((traj.mode_ade[1] - 3.0).abs() < 1e-12);
}

#[test]
fn components_sum_to_total() {
    let config = small_config();
    let model = Model::new(config.model.clone()).unwrap();
    for sc in &scenes(3) {
        let mut s = Session::new(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, t) = scene_loss(&model, &mut s, sc, &config, &mut rng).unwrap();
        assert!(t.ddpm >= 0.0 && t.traj >= 0.0 && t.conf >= 0.0);
        let sum = t.ddpm + t.traj + config.lambda_conf * t.conf;
        assert!((t.total - sum).abs() <= 1e-12 * sum.max(1.0));
    }
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let config = small_config();
    let mut model = Model::new(config.model.clone()).unwrap();
    // Zero-initialized heads tie every mode; jitter to a point where the
    // winner-takes-all choice is locally constant.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for id in model.params.ids().collect::<Vec<_>>() {
        let shape = model.params.get(id).shape().to_vec();
        let noise = standard_normal(&mut rng, &shape);
        for (p, n) in model.params.get_mut(id).data_mut().iter_mut().zip(noise.data()) {
            *p += 0.1 * n;
        }
    }
    let sc = &scenes(2)[1];
    let ids: Vec<_> = model.params.ids().collect();
    let inputs = model.inputs(sc).unwrap();
    let latents = model
        .sample_latents(&inputs.history, &mut ChaCha8Rng::seed_from_u64(10))
        .unwrap();
    let err = grad_check_params(
        &model.params,
        &ids,
        |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            Ok(scene_loss_with_latents(&model, s, sc, &latents, &config, &mut rng)?.0)
        },
        1e-5,
        3,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn loss_trends_down_on_one_scene() {
    let config = TrainConfig {
        batch_size: 1,
        ..small_config()
    };
    let sc = scenes(1);
    let mut tr = Trainer::new(config).unwrap();
    let losses: Vec<f64> = (0..200).map(|_| tr.train_step(&sc, &[0]).unwrap().total).collect();
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.5 * head, "smoothed loss {head} -> {tail}");
}

#[test]
fn training_is_deterministic() {
    let config = TrainConfig {
        epochs: 2,
        ..small_config()
    };
    let data = scenes(4);
    let a = train(&config, &data, None).unwrap();
    let b = train(&config, &data, None).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.len(), 2);
}

#[test]
fn map_former_ablation_yields_valid_predictions() {
    let mut config = small_config();
    config.model.mask.encoder.map_former = false;
    let data = scenes(3);
    let ckpt = train(&config, &data, None).unwrap();
    let model = ckpt.model().unwrap();
    for sc in &data {
        let p = model.predict(sc, 3).unwrap();
        p.validate().unwrap();
        assert_eq!(p.modes(), 3);
        assert_eq!(p.agents(), sc.predict_ids.len());
        assert_eq!(p.t_fut(), 12);
    }
}

#[test]
fn default_decoder_is_two_kan_layers_with_gru() {
    let model = Model::new(small_model()).unwrap();
    let names: Vec<&str> = model.params.ids().map(|id| model.params.name(id)).collect();
    assert!(names.iter().any(|n| n.starts_with("decoder.gru")));
    assert!(names.iter().any(|n| n.starts_with("decoder.kan.1")));
    assert!(!names.iter().any(|n| n.starts_with("decoder.kan.2")));
    let rows = grid_masks(AblationGrid::Decoder, &AblationMask::default());
    let best = rows.iter().find(|r| r.0 == "kan2_gru").unwrap();
    assert_eq!(best.1, AblationMask::default());
}

#[test]
fn grids_have_expected_rows() {
    let enc = grid_masks(AblationGrid::Encoder, &AblationMask::default());
    assert_eq!(enc.len(), 5);
    let disabled: Vec<usize> = enc
        .iter()
        .map(|(_, m)| {
            let e = m.encoder;
            [e.spatial_temporal_attention, e.social_former, e.map_former, e.sign_former]
                .iter()
                .filter(|&&b| !b)
                .count()
        })
        .collect();
    assert_eq!(disabled, vec![1, 1, 1, 1, 0]);
    assert_eq!(grid_masks(AblationGrid::Decoder, &AblationMask::default()).len(), 6);
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let data = scenes(2);
    let ckpt = train(&small_config(), &data, None).unwrap();
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let before = ckpt.model().unwrap().predict(&data[0], 9).unwrap();
    let after = loaded.model().unwrap().predict(&data[0], 9).unwrap();
    assert_eq!(before, after);
}

#[test]
fn stored_mask_wins_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut config = small_config();
    config.model.mask.encoder.sign_former = false;
    let ckpt = train(&config, &scenes(2), None).unwrap();
    save_checkpoint(&path, &ckpt).unwrap();
    let (loaded, differs) = load_checkpoint_with_mask(&path, &AblationMask::default()).unwrap();
    assert!(differs);
    assert!(!loaded.model().unwrap().encoder.config.mask.sign_former);
    let (_, differs) = load_checkpoint_with_mask(&path, &config.model.mask).unwrap();
    assert!(!differs);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let ckpt = train(&small_config(), &scenes(2), None).unwrap();
    save_checkpoint(&path, &ckpt).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));

    std::fs::write(&path, text.replace(CHECKPOINT_MAGIC, "SOMETHING-ELSE")).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

    std::fs::write(&path, text.replace("\"schema_version\": 1", "\"schema_version\": 7")).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Schema(_))));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["config"]["model"]["d_model"] = 8.into();
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

    assert!(matches!(load_checkpoint(&dir.path().join("absent.json")), Err(Error::Io { .. })));
}

#[test]
fn frozen_diffusion_keeps_denoiser_fixed() {
    let config = TrainConfig {
        freeze_diffusion: true,
        ..small_config()
    };
    let data = scenes(2);
    let mut tr = Trainer::new(config).unwrap();
    let before = tr.model.params.clone();
    tr.train_step(&data, &[0, 1]).unwrap();
    let mut moved = false;
    for id in before.ids() {
        let same = before.get(id) == tr.model.params.get(id);
        if before.name(id).starts_with("diffusion.") {
            assert!(same, "{} changed", before.name(id));
        } else {
            moved |= !same;
        }
    }
    assert!(moved);
}

#[test]
fn nan_parameter_aborts_with_component() {
    let data = scenes(1);
    let mut tr = Trainer::new(small_config()).unwrap();
    let id = tr.model.params.find("diffusion.out.b").unwrap();
    tr.model.params.get_mut(id).data_mut()[0] = f64::NAN;
    match tr.train_step(&data, &[0]) {
        Err(Error::NonFinite { component, step }) => {
            assert_eq!(component, "ddpm");
            assert_eq!(step, 0);
        }
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(matches!(train(&small_config(), &[], None), Err(Error::Input(_))));
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..small_config()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn clipping_bounds_the_global_norm() {
    let mut g = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![4.0])];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    assert!((g[1].data()[0] - 0.8).abs() < 1e-15);
    let mut small = vec![Tensor::vector(vec![0.1])];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data()[0], 0.1);
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    let mut p = ParamSet::new();
    let id = p.add("w", Tensor::vector(vec![1.0, -1.0]));
    let mut adam = Adam::new(&p, 0.01);
    adam.step(&mut p, &[Tensor::vector(vec![0.5, -2.0])]);
    let w = p.get(id).data();
    assert!((w[0] - 0.99).abs() < 1e-9);
    assert!((w[1] + 0.99).abs() < 1e-9);
}

#[test]
fn history_csv_has_fixed_columns() {
    let rec = EpochRecord {
        epoch: 1,
        l_ddpm: 0.5,
        l_traj: 2.0,
        l_conf: 1.0,
        min_sade_val: Some(1.5),
        min_sfde_val: None,
    };
    assert_eq!(
        history_csv(&[rec]),
        "epoch,L_ddpm,L_traj,L_conf,minSADE_val,minSFDE_val\n1,0.5,2,1,1.5,\n"
    );
}
