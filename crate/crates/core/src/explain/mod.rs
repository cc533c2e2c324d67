//! Feature-group attribution: exact Shapley values over history, neighbors,
//! traffic signs and map, scene and global importance, and exact
//! information-theoretic quantities on discrete tables.

pub mod infotheory;
mod oracle;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use oracle::{ConstantPredictor, OraclePredictor};

use crate::decoder::PredictionSet;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::Model;
use crate::scene::{AgentState, Scene};
use crate::seeding::derive_seed;

/// The four players, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    History,
    Neighbors,
    TrafficSign,
    Map,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [
        FeatureGroup::History,
        FeatureGroup::Neighbors,
        FeatureGroup::TrafficSign,
        FeatureGroup::Map,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// One-letter label used in heatmap columns.
    pub fn letter(self) -> char {
        ['h', 'n', 's', 'm'][self.index()]
    }
}

/// A subset of the four groups, stored as a bit set in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Coalition(u8);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);
    pub const FULL: Coalition = Coalition(0b1111);

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits > 0b1111 {
            return Err(Error::Input(format!("coalition bits {bits:#b} exceed four players")));
        }
        Ok(Coalition(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn of(groups: &[FeatureGroup]) -> Self {
        Coalition(groups.iter().fold(0, |b, g| b | 1 << g.index()))
    }

    /// All 16 coalitions in bit order.
    pub fn all() -> impl Iterator<Item = Coalition> {
        (0..16u8).map(Coalition)
    }

    pub fn contains(self, g: FeatureGroup) -> bool {
        self.0 & (1 << g.index()) != 0
    }

    pub fn with(self, g: FeatureGroup) -> Self {
        Coalition(self.0 | 1 << g.index())
    }

    pub fn without(self, g: FeatureGroup) -> Self {
        Coalition(self.0 & !(1 << g.index()))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = FeatureGroup::ALL
            .iter()
            .filter(|g| self.contains(**g))
            .map(|g| g.letter())
            .collect();
        write!(f, "{{{s}}}")
    }
}

/// Static-agent baseline: frozen at the last observed pose with zero velocity.
fn static_history(scene: &Scene, states: &mut [AgentState]) {
    let last = states[scene.t_obs - 1];
    for st in &mut states[..scene.t_obs] {
        *st = AgentState {
            vx: 0.0,
            vy: 0.0,
            valid: true,
            ..last
        };
    }
}

/// Replaces every group outside `c` by its baseline.
pub fn apply_coalition(scene: &Scene, c: Coalition) -> Scene {
    let mut out = scene.clone();
    if !c.contains(FeatureGroup::History) {
        for tr in &mut out.tracks {
            if scene.is_predicted(tr.agent_id) {
                static_history(scene, &mut tr.states);
            }
        }
    }
    if !c.contains(FeatureGroup::Neighbors) {
        out.tracks.retain(|t| scene.is_predicted(t.agent_id));
    }
    if !c.contains(FeatureGroup::TrafficSign) {
        out.signals.clear();
    }
    if !c.contains(FeatureGroup::Map) {
        out.map.clear();
    }
    out
}

/// Anything that turns a scene into joint predictions.
pub trait Predictor: Sync {
    fn predict(&self, scene: &Scene, seed: u64) -> Result<PredictionSet>;
}

impl Predictor for Model {
    fn predict(&self, scene: &Scene, seed: u64) -> Result<PredictionSet> {
        Model::predict(self, scene, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorMetric {
    #[serde(rename = "minSADE")]
    MinSade,
    #[serde(rename = "minSFDE")]
    MinSfde,
}

impl ErrorMetric {
    pub fn name(self) -> &'static str {
        match self {
            ErrorMetric::MinSade => "minSADE",
            ErrorMetric::MinSfde => "minSFDE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minsade" | "ade" => Ok(ErrorMetric::MinSade),
            "minsfde" | "fde" => Ok(ErrorMetric::MinSfde),
            _ => Err(Error::Input(format!("unknown metric `{s}` (expected minSADE or minSFDE)"))),
        }
    }
}

/// Prediction error of `predictor` on `input`, scored against the ground
/// truth of `reference`.
fn error_of(
    predictor: &dyn Predictor,
    input: &Scene,
    reference: &Scene,
    metric: ErrorMetric,
    seed: u64,
) -> Result<f64> {
    let pred = predictor.predict(input, seed)?;
    let gt = metrics::ground_truth(reference);
    match metric {
        ErrorMetric::MinSade => metrics::min_sade(&pred, &gt),
        ErrorMetric::MinSfde => metrics::min_sfde(&pred, &gt),
    }
}

/// Prediction error under every coalition, indexed by coalition bits.
pub fn coalition_errors(
    predictor: &dyn Predictor,
    scene: &Scene,
    metric: ErrorMetric,
    seed: u64,
) -> Result<[f64; 16]> {
    let errs: Vec<f64> = Coalition::all()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&c| error_of(predictor, &apply_coalition(scene, c), scene, metric, seed))
        .collect::<Result<_>>()?;
    Ok(errs.try_into().expect("16 coalitions"))
}

/// `v(c) = err(∅) − err(c)` for every coalition, with one shared seed.
pub fn coalition_values(
    predictor: &dyn Predictor,
    scene: &Scene,
    metric: ErrorMetric,
    seed: u64,
) -> Result<[f64; 16]> {
    Ok(values_from_errors(&coalition_errors(predictor, scene, metric, seed)?))
}

fn values_from_errors(errs: &[f64; 16]) -> [f64; 16] {
    let mut v = [0.0; 16];
    for (i, e) in errs.iter().enumerate() {
        v[i] = errs[0] - e;
    }
    v
}

/// Shapley weights `|C|!·(3−|C|)!/4!` for `|C| = 0..=3`.
pub const SHAPLEY_WEIGHTS: [f64; 4] = [0.25, 1.0 / 12.0, 1.0 / 12.0, 0.25];

/// Exact four-player Shapley values. `v` is indexed by coalition bits and
/// every entry must be present.
pub fn exact_shapley(v: &[Option<f64>; 16]) -> Result<[f64; 4]> {
    if let Some(i) = v.iter().position(Option::is_none) {
        return Err(Error::Input(format!(
            "value of coalition {} is missing",
            Coalition(i as u8)
        )));
    }
    let val = |c: Coalition| v[c.bits() as usize].unwrap();
    let mut phi = [0.0; 4];
    for g in FeatureGroup::ALL {
        for c in Coalition::all().filter(|c| !c.contains(g)) {
            phi[g.index()] += SHAPLEY_WEIGHTS[c.len()] * (val(c.with(g)) - val(c));
        }
    }
    Ok(phi)
}

/// [`exact_shapley`] for a complete table.
pub fn shapley_of(v: &[f64; 16]) -> [f64; 4] {
    exact_shapley(&v.map(Some)).expect("complete table")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupAttribution {
    pub history: f64,
    pub neighbors: f64,
    pub traffic_sign: f64,
    pub map: f64,
}

impl GroupAttribution {
    pub fn from_array(a: [f64; 4]) -> Self {
        GroupAttribution {
            history: a[0],
            neighbors: a[1],
            traffic_sign: a[2],
            map: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.history, self.neighbors, self.traffic_sign, self.map]
    }

    pub fn get(&self, g: FeatureGroup) -> f64 {
        self.to_array()[g.index()]
    }

    /// Groups sorted by decreasing attribution; ties keep canonical order.
    pub fn ranking(&self) -> Vec<FeatureGroup> {
        let mut g = FeatureGroup::ALL.to_vec();
        g.sort_by(|a, b| self.get(*b).total_cmp(&self.get(*a)));
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementContribution {
    /// Agent id for neighbors, list index for signals.
    pub id: u64,
    pub contribution: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElementContributions {
    pub neighbors: Vec<ElementContribution>,
    pub signals: Vec<ElementContribution>,
}

impl ElementContributions {
    /// Largest contribution, 0 when there are no elements.
    fn max_of(list: &[ElementContribution]) -> f64 {
        list.iter()
            .map(|e| e.contribution)
            .reduce(f64::max)
            .unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    /// Scene id, or `GLOBAL` for dataset-level importance.
    pub scene_id: String,
    pub metric: ErrorMetric,
    pub v_empty: f64,
    pub v_full: f64,
    pub phi: GroupAttribution,
    pub elements: ElementContributions,
}

pub const GLOBAL_ID: &str = "GLOBAL";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    pub metric: ErrorMetric,
    /// Number of sampling seeds averaged per scene.
    pub seeds: usize,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            metric: ErrorMetric::MinSade,
            seeds: 4,
            seed: 0,
        }
    }
}

fn check_efficiency(phi: &[f64; 4], v: &[f64; 16]) -> Result<()> {
    let total: f64 = phi.iter().sum();
    let target = v[15] - v[0];
    if (total - target).abs() > 1e-9 * target.abs().max(1.0) {
        return Err(Error::Contract(format!(
            "Shapley efficiency violated: Σφ = {total}, v(full) − v(∅) = {target}"
        )));
    }
    Ok(())
}

/// Per-scene attribution (SFI) with leave-one-out element contributions,
/// averaged over `seeds` sampling seeds.
pub fn scene_importance(
    predictor: &dyn Predictor,
    scene: &Scene,
    config: &ImportanceConfig,
    scene_index: u64,
) -> Result<ShapleyReport> {
    if config.seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let seeds: Vec<u64> = (0..config.seeds as u64)
        .map(|s| derive_seed(config.seed, &[scene_index, s]))
        .collect();
    let n = seeds.len() as f64;
    let neighbor_ids: Vec<u64> = scene
        .tracks
        .iter()
        .filter(|t| !scene.is_predicted(t.agent_id))
        .map(|t| t.agent_id)
        .collect();

    let mut errs = [0.0; 16];
    let mut neighbor_err = vec![0.0; neighbor_ids.len()];
    let mut signal_err = vec![0.0; scene.signals.len()];
    for &seed in &seeds {
        let e = coalition_errors(predictor, scene, config.metric, seed)?;
        for (a, b) in errs.iter_mut().zip(e) {
            *a += b / n;
        }
        let nb: Vec<f64> = neighbor_ids
            .par_iter()
            .map(|&id| {
                let mut s = scene.clone();
                s.tracks.retain(|t| t.agent_id != id);
                error_of(predictor, &s, scene, config.metric, seed)
            })
            .collect::<Result<_>>()?;
        let sg: Vec<f64> = (0..scene.signals.len())
            .into_par_iter()
            .map(|k| {
                let mut s = scene.clone();
                s.signals.remove(k);
                error_of(predictor, &s, scene, config.metric, seed)
            })
            .collect::<Result<_>>()?;
        for (a, b) in neighbor_err.iter_mut().zip(nb) {
            *a += b / n;
        }
        for (a, b) in signal_err.iter_mut().zip(sg) {
            *a += b / n;
        }
    }
    let full = errs[15];
    let v = values_from_errors(&errs);
    let phi = shapley_of(&v);
    check_efficiency(&phi, &v)?;
    Ok(ShapleyReport {
        scene_id: scene.scene_id.clone(),
        metric: config.metric,
        v_empty: v[0],
        v_full: v[15],
        phi: GroupAttribution::from_array(phi),
        elements: ElementContributions {
            neighbors: neighbor_ids
                .iter()
                .zip(&neighbor_err)
                .map(|(&id, e)| ElementContribution {
                    id,
                    contribution: e - full,
                })
                .collect(),
            signals: signal_err
                .iter()
                .enumerate()
                .map(|(k, e)| ElementContribution {
                    id: k as u64,
                    contribution: e - full,
                })
                .collect(),
        },
    })
}

/// Dataset-level importance (GFI) from per-scene reports. History and map
/// average the scene attributions; neighbors and traffic signs average the
/// per-scene maximum element contribution, with 0 for scenes lacking the
/// element.
pub fn aggregate_global(reports: &[ShapleyReport]) -> Result<ShapleyReport> {
    let Some(first) = reports.first() else {
        return Err(Error::Input("global importance of an empty dataset".into()));
    };
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&ShapleyReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(ShapleyReport {
        scene_id: GLOBAL_ID.into(),
        metric: first.metric,
        v_empty: mean(&|r| r.v_empty),
        v_full: mean(&|r| r.v_full),
        phi: GroupAttribution {
            history: mean(&|r| r.phi.history),
            neighbors: mean(&|r| ElementContributions::max_of(&r.elements.neighbors)),
            traffic_sign: mean(&|r| ElementContributions::max_of(&r.elements.signals)),
            map: mean(&|r| r.phi.map),
        },
        elements: ElementContributions::default(),
    })
}

/// Scene reports for every scene, then their aggregate.
pub fn global_importance(
    predictor: &dyn Predictor,
    scenes: &[Scene],
    config: &ImportanceConfig,
) -> Result<(ShapleyReport, Vec<ShapleyReport>)> {
    if scenes.is_empty() {
        return Err(Error::Input("global importance of an empty dataset".into()));
    }
    let reports: Vec<ShapleyReport> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| scene_importance(predictor, s, config, i as u64))
        .collect::<Result<_>>()?;
    Ok((aggregate_global(&reports)?, reports))
}

/// Rows are reports, columns `scene_id,h,n,s,m`.
pub fn heatmap_csv(reports: &[ShapleyReport]) -> String {
    let mut s = String::from("scene_id,h,n,s,m\n");
    for r in reports {
        let p = r.phi;
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.scene_id, p.history, p.neighbors, p.traffic_sign, p.map
        ));
    }
    s
}

#[cfg(test)]
mod tests;
