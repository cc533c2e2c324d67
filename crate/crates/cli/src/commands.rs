use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use trajex::explain::{
    global_importance, heatmap_csv, infotheory, scene_importance, OraclePredictor, Predictor, ShapleyReport,
};
use trajex::fsutil::{read_to_string, write_atomic, write_json};
use trajex::metrics::{self, ScenePrediction};
use trajex::model::Model;
use trajex::scene::{generate_dataset, load_dataset, save_dataset, Scene};
use trajex::trainer::{
    self, ablation_csv, history_csv, load_checkpoint, predict_all, run_ablation, save_checkpoint, AblationGrid,
};

use crate::config::Settings;
use crate::{CliError, Command, Common, Grid, PredictorArgs};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub tool_version: String,
    pub duration_secs: f64,
}

struct Run {
    command: &'static str,
    settings: Settings,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    fn new(command: &'static str, common: &Common) -> Result<Self> {
        let mut settings = Settings::load(common.config.as_deref())?;
        settings.set("seed", common.seed);
        let mut inputs = Vec::new();
        inputs.extend(common.config.clone());
        Ok(Run {
            command,
            settings,
            out: common.out.clone(),
            inputs,
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        Ok(write_atomic(&p, text.as_bytes())?)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        Ok(write_json(&p, value)?)
    }

    fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.into(),
            config: self.settings.resolved().clone(),
            inputs: self.inputs,
            outputs: self.outputs,
            seed: self.settings.seed()?,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(&self.out.join(RUN_MANIFEST), &manifest)?;
        log::info!("{} finished in {:.2}s", manifest.command, manifest.duration_secs);
        Ok(())
    }
}

fn dataset(run: &mut Run, dir: &Path) -> Result<Vec<Scene>> {
    run.input(dir);
    let scenes = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if scenes.is_empty() {
        return Err(CliError::Config(format!("dataset {} is empty", dir.display())).into());
    }
    Ok(scenes)
}

/// Horizons default to those of the data.
fn adopt_horizons(settings: &mut Settings, scene: &Scene) -> Result<()> {
    if settings.get::<usize>("t_obs")?.is_none() {
        settings.set("t_obs", Some(scene.t_obs));
    }
    if settings.get::<usize>("t_fut")?.is_none() {
        settings.set("t_fut", Some(scene.t_fut));
    }
    Ok(())
}

fn load_model(run: &mut Run, path: &Path) -> Result<Model> {
    run.input(path);
    let ckpt = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ckpt.model()?)
}

fn predictor(run: &mut Run, args: &PredictorArgs) -> Result<Box<dyn Predictor>> {
    match &args.checkpoint {
        Some(p) => Ok(Box::new(load_model(run, p)?)),
        None => Ok(Box::new(OraclePredictor::default())),
    }
}

fn read_predictions(path: &Path) -> Result<Vec<ScenePrediction>> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        trajex::Error::Parse {
            path: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            msg: e.to_string(),
        }
        .into()
    })
}

/// Pairs predictions with scenes by position, failing on the first id that
/// does not line up.
fn pair_up<'a>(scenes: &'a [Scene], preds: &'a [ScenePrediction]) -> Result<Vec<(&'a Scene, &'a ScenePrediction)>> {
    for i in 0..scenes.len().max(preds.len()) {
        match (scenes.get(i), preds.get(i)) {
            (Some(s), Some(p)) if s.scene_id == p.scene_id => {}
            (Some(s), Some(p)) => {
                return Err(CliError::IdMismatch(format!(
                    "prediction `{}` at position {i} does not match scene `{}`",
                    p.scene_id, s.scene_id
                ))
                .into())
            }
            (Some(s), None) => {
                return Err(CliError::IdMismatch(format!("no prediction for scene `{}`", s.scene_id)).into())
            }
            (None, Some(p)) => {
                return Err(CliError::IdMismatch(format!("prediction `{}` has no matching scene", p.scene_id)).into())
            }
            (None, None) => unreachable!(),
        }
    }
    Ok(scenes.iter().zip(preds).collect())
}

fn global_heatmap(global: &ShapleyReport, per_scene: &[ShapleyReport]) -> String {
    let mut rows = per_scene.to_vec();
    rows.push(global.clone());
    heatmap_csv(&rows)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { family, count, common } => {
            let mut run = Run::new("gen-data", &common)?;
            run.settings.set("families", family);
            run.settings.set("count", count);
            let families = run.settings.families()?;
            let config = run.settings.generator()?;
            let n = run.settings.get::<usize>("count")?.unwrap_or(100);
            let scenes = generate_dataset(&families, n, run.settings.seed()?, &config)?;
            let manifest = save_dataset(&scenes, &run.out)?;
            for f in &manifest.files {
                run.path(f);
            }
            run.path(trajex::scene::MANIFEST_FILE);
            println!("wrote {} scenes to {}", scenes.len(), run.out.display());
            run.finish()
        }
        Command::Train {
            data,
            val,
            epochs,
            common,
        } => {
            let mut run = Run::new("train", &common)?;
            let scenes = dataset(&mut run, &data)?;
            let val_scenes = match &val {
                Some(v) => Some(dataset(&mut run, v)?),
                None => None,
            };
            run.settings.set("epochs", epochs);
            adopt_horizons(&mut run.settings, &scenes[0])?;
            let config = run.settings.train()?;
            let ckpt = trainer::train(&config, &scenes, val_scenes.as_deref())?;
            let path = run.path("checkpoint.json");
            save_checkpoint(&path, &ckpt)?;
            run.write_text("history.csv", &history_csv(&ckpt.history))?;
            if let Some(last) = ckpt.history.last() {
                println!(
                    "epoch {}: L_ddpm {:.4} L_traj {:.4} L_conf {:.4}",
                    last.epoch, last.l_ddpm, last.l_traj, last.l_conf
                );
            }
            run.finish()
        }
        Command::Predict {
            checkpoint,
            data,
            common,
        } => {
            let mut run = Run::new("predict", &common)?;
            let model = load_model(&mut run, &checkpoint)?;
            let scenes = dataset(&mut run, &data)?;
            let preds = predict_all(&model, &scenes, run.settings.seed()?)?;
            run.write_json("predictions.json", &preds)?;
            println!("predicted {} scenes", preds.len());
            run.finish()
        }
        Command::Evaluate {
            data,
            predictions,
            threshold,
            common,
        } => {
            let mut run = Run::new("evaluate", &common)?;
            run.settings.set("miss_threshold", threshold);
            let scenes = dataset(&mut run, &data)?;
            run.input(&predictions);
            let preds = read_predictions(&predictions)?;
            let pairs = pair_up(&scenes, &preds)?;
            let pairs: Vec<_> = pairs.iter().map(|(s, p)| (*s, &p.prediction)).collect();
            let report = metrics::evaluate(&pairs, run.settings.miss_threshold()?)?;
            run.write_json("metrics.json", &report)?;
            run.write_text("metrics_summary.csv", &report.summary_csv())?;
            run.write_text("metrics_per_scene.csv", &report.per_scene_csv())?;
            print!("{}", report.summary_csv());
            run.finish()
        }
        Command::Explain {
            data,
            scene,
            predictor: which,
            metric,
            common,
        } => {
            let mut run = Run::new("explain", &common)?;
            run.settings.set("metric", metric);
            let p = predictor(&mut run, &which)?;
            let scenes = dataset(&mut run, &data)?;
            let config = run.settings.importance()?;
            let mut reports = Vec::new();
            for (i, s) in scenes.iter().enumerate() {
                if scene.as_ref().is_some_and(|id| *id != s.scene_id) {
                    continue;
                }
                reports.push(scene_importance(p.as_ref(), s, &config, i as u64)?);
            }
            if let (Some(id), true) = (&scene, reports.is_empty()) {
                return Err(CliError::Config(format!("scene `{id}` not found in {}", data.display())).into());
            }
            run.write_json("shapley_reports.json", &reports)?;
            run.write_text("heatmap.csv", &heatmap_csv(&reports))?;
            print!("{}", heatmap_csv(&reports));
            run.finish()
        }
        Command::ExplainGlobal {
            data,
            predictor: which,
            metric,
            common,
        } => {
            let mut run = Run::new("explain-global", &common)?;
            run.settings.set("metric", metric);
            let p = predictor(&mut run, &which)?;
            let scenes = dataset(&mut run, &data)?;
            let config = run.settings.importance()?;
            let (global, per_scene) = global_importance(p.as_ref(), &scenes, &config)?;
            run.write_json("global_importance.json", &global)?;
            run.write_json("shapley_reports.json", &per_scene)?;
            run.write_text("heatmap.csv", &global_heatmap(&global, &per_scene))?;
            let ranking: Vec<String> = global.phi.ranking().iter().map(|g| g.letter().to_string()).collect();
            println!(
                "h {:.4} n {:.4} s {:.4} m {:.4} (ranking {})",
                global.phi.history,
                global.phi.neighbors,
                global.phi.traffic_sign,
                global.phi.map,
                ranking.join(" > ")
            );
            run.finish()
        }
        Command::Ablate {
            grid,
            data,
            val,
            epochs,
            common,
        } => {
            let mut run = Run::new("ablate", &common)?;
            let train_set = dataset(&mut run, &data)?;
            let val_set = match &val {
                Some(v) => dataset(&mut run, v)?,
                None => train_set.clone(),
            };
            run.settings.set("epochs", epochs);
            adopt_horizons(&mut run.settings, &train_set[0])?;
            let config = run.settings.train()?;
            let (g, name) = match grid {
                Grid::Encoder => (AblationGrid::Encoder, "encoder"),
                Grid::Decoder => (AblationGrid::Decoder, "decoder"),
            };
            let rows = run_ablation(&config, g, &train_set, &val_set)?;
            let csv = ablation_csv(&rows);
            run.write_text(&format!("ablation_{name}.csv"), &csv)?;
            run.write_json(&format!("ablation_{name}.json"), &rows)?;
            print!("{csv}");
            run.finish()
        }
        Command::InfoDemo { common } => {
            let mut run = Run::new("info-demo", &common)?;
            let checks = infotheory::demo_checks()?;
            let mut csv = String::from("check,value,expected,passed\n");
            for c in &checks {
                csv.push_str(&format!("{},{},{},{}\n", c.name, c.value, c.expected, c.passed as u8));
            }
            run.write_text("info_demo.csv", &csv)?;
            run.write_json("info_demo.json", &checks)?;
            print!("{csv}");
            let failed = checks.iter().filter(|c| !c.passed).count();
            run.finish()?;
            if failed > 0 {
                anyhow::bail!("{failed} information-theory checks failed");
            }
            Ok(())
        }
    }
}
