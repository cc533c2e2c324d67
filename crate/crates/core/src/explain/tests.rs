use proptest::prelude::*;

use super::*;
use crate::scene::{generate_scene, GeneratorConfig, ScenarioFamily};

fn cfg() -> GeneratorConfig {
    GeneratorConfig {
        t_fut: 30,
        ..GeneratorConfig::default()
    }
}

fn scene(family: ScenarioFamily, seed: u64) -> Scene {
    generate_scene(family, seed, &cfg()).unwrap()
}

fn quick() -> ImportanceConfig {
    ImportanceConfig {
        seeds: 1,
        ..ImportanceConfig::default()
    }
}

/// Shapley values by averaging marginal contributions over all 24 orderings.
fn permutation_shapley(v: &[f64; 16]) -> [f64; 4] {
    fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.clone();
            let x = rest.remove(i);
            for mut p in perms(rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }
    let orders = perms(vec![0, 1, 2, 3]);
    let mut phi = [0.0; 4];
    for order in &orders {
        let mut bits = 0usize;
        for &p in order {
            phi[p] += v[bits | (1 << p)] - v[bits];
            bits |= 1 << p;
        }
    }
    phi.map(|x| x / orders.len() as f64)
}

fn game(f: impl Fn(Coalition) -> f64) -> [f64; 16] {
    let mut v = [0.0; 16];
    for c in Coalition::all() {
        v[c.bits() as usize] = f(c);
    }
    v
}

#[test]
fn full_coalition_is_identity() {
    let s = scene(ScenarioFamily::StopStart, 3);
    assert_eq!(apply_coalition(&s, Coalition::FULL), s);
}

#[test]
fn empty_coalition_is_full_baseline() {
    let s = scene(ScenarioFamily::Interaction, 4);
    let m = apply_coalition(&s, Coalition::EMPTY);
    assert!(m.map.is_empty());
    assert!(m.signals.is_empty());
    assert_eq!(m.tracks.len(), s.predict_ids.len());
    for t in &m.tracks {
        let last = s.last_observed(s.tracks.iter().find(|o| o.agent_id == t.agent_id).unwrap());
        for st in &t.states[..s.t_obs] {
            assert_eq!((st.x, st.y, st.heading), (last.x, last.y, last.heading));
            assert_eq!((st.vx, st.vy), (0.0, 0.0));
            assert!(st.valid);
        }
        let orig = s.tracks.iter().find(|o| o.agent_id == t.agent_id).unwrap();
        assert_eq!(t.states[s.t_obs..], orig.states[s.t_obs..]);
    }
}

#[test]
fn map_only_coalition_on_stop_start() {
    let s = scene(ScenarioFamily::StopStart, 5);
    assert!(!s.signals.is_empty());
    let m = apply_coalition(&s, Coalition::of(&[FeatureGroup::Map]));
    assert!(m.signals.is_empty());
    assert_eq!(m.map, s.map);
}

#[test]
fn coalition_bits_and_display() {
    let c = Coalition::of(&[FeatureGroup::History, FeatureGroup::Map]);
    assert_eq!(c.bits(), 0b1001);
    assert_eq!(c.to_string(), "{hm}");
    assert_eq!(Coalition::all().count(), 16);
    assert!(Coalition::from_bits(16).is_err());
    assert_eq!(c.without(FeatureGroup::Map).with(FeatureGroup::Neighbors).len(), 2);
}

#[test]
fn empty_coalition_value_is_zero() {
    let s = scene(ScenarioFamily::LaneKeep, 1);
    let v = coalition_values(&OraclePredictor::default(), &s, ErrorMetric::MinSade, 0).unwrap();
    assert_eq!(v[0], 0.0);
}

#[test]
fn constant_predictor_has_zero_values() {
    let s = scene(ScenarioFamily::StopStart, 2);
    let p = ConstantPredictor { point: [3.0, -1.0] };
    let v = coalition_values(&p, &s, ErrorMetric::MinSfde, 9).unwrap();
    assert!(v.iter().all(|&x| x == 0.0));
    let r = scene_importance(&p, &s, &quick(), 0).unwrap();
    assert_eq!(r.phi.to_array(), [0.0; 4]);
}

#[test]
fn coalition_values_match_direct_evaluation() {
    let s = scene(ScenarioFamily::StopStart, 8);
    let p = OraclePredictor::default();
    let v = coalition_values(&p, &s, ErrorMetric::MinSade, 0).unwrap();
    let gt = metrics::ground_truth(&s);
    let err = |c| metrics::min_sade(&p.predict(&apply_coalition(&s, c), 0).unwrap(), &gt).unwrap();
    let e0 = err(Coalition::EMPTY);
    for c in Coalition::all() {
        assert_eq!(v[c.bits() as usize], e0 - err(c));
    }
}

#[test]
fn additive_game() {
    let w = [1.0, 2.0, 3.0, 4.0];
    let v = game(|c| FeatureGroup::ALL.iter().filter(|g| c.contains(**g)).map(|g| w[g.index()]).sum());
    let phi = shapley_of(&v);
    for i in 0..4 {
        assert!((phi[i] - w[i]).abs() < 1e-12);
    }
}

#[test]
fn symmetric_game() {
    let v = game(|c| [0.0, 1.0, 5.0, 6.0, 11.0][c.len()]);
    let phi = shapley_of(&v);
    for p in phi {
        assert!((p - phi[0]).abs() < 1e-12);
    }
    assert!((phi.iter().sum::<f64>() - 11.0).abs() < 1e-12);
}

#[test]
fn history_and_map_game_matches_orderings() {
    let v = game(|c| f64::from(u8::from(c.contains(FeatureGroup::History) && c.contains(FeatureGroup::Map))));
    let phi = shapley_of(&v);
    let oracle = permutation_shapley(&v);
    for i in 0..4 {
        assert!((phi[i] - oracle[i]).abs() < 1e-12);
    }
    assert!((phi[0] - 0.5).abs() < 1e-12 && (phi[3] - 0.5).abs() < 1e-12);
    assert_eq!((phi[1], phi[2]), (0.0, 0.0));
}

#[test]
fn missing_coalition_is_an_error() {
    let mut v = [Some(0.0); 16];
    v[6] = None;
    assert!(matches!(exact_shapley(&v), Err(Error::Input(_))));
}

fn any_game() -> impl Strategy<Value = [f64; 16]> {
    prop::array::uniform16(-10.0..10.0f64).prop_map(|mut v| {
        v[0] = 0.0;
        v
    })
}

proptest! {
    #[test]
    fn shapley_matches_orderings(v in any_game()) {
        let phi = shapley_of(&v);
        let oracle = permutation_shapley(&v);
        for i in 0..4 {
            prop_assert!((phi[i] - oracle[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn shapley_axioms(v in any_game(), w in any_game(), dummy in 0usize..4, pair in (0usize..4, 0usize..4)) {
        let phi = shapley_of(&v);
        prop_assert!((phi.iter().sum::<f64>() - (v[15] - v[0])).abs() < 1e-9);

        let sum: [f64; 16] = std::array::from_fn(|i| v[i] + w[i]);
        let (pv, pw, ps) = (shapley_of(&v), shapley_of(&w), shapley_of(&sum));
        for i in 0..4 {
            prop_assert!((ps[i] - pv[i] - pw[i]).abs() < 1e-9);
        }

        let d = 1usize << dummy;
        let null: [f64; 16] = std::array::from_fn(|i| v[i & !d]);
        prop_assert!(shapley_of(&null)[dummy].abs() < 1e-9);

        let (a, b) = pair;
        let swap = |i: usize| {
            let (ba, bb) = ((i >> a) & 1, (i >> b) & 1);
            (i & !(1 << a) & !(1 << b)) | (bb << a) | (ba << b)
        };
        let sym: [f64; 16] = std::array::from_fn(|i| v[i] + v[swap(i)]);
        let p = shapley_of(&sym);
        prop_assert!((p[a] - p[b]).abs() < 1e-9);
    }
}

#[test]
fn zero_neighbor_scene() {
    let config = GeneratorConfig {
        num_agents: 2,
        num_predicted: 2,
        t_fut: 30,
        ..GeneratorConfig::default()
    };
    let s = generate_scene(ScenarioFamily::LaneKeep, 4, &config).unwrap();
    assert!(s.tracks.iter().all(|t| s.is_predicted(t.agent_id)));
    let r = scene_importance(&OraclePredictor::default(), &s, &quick(), 0).unwrap();
    assert!(r.elements.neighbors.is_empty());
    assert!(r.phi.neighbors.abs() < 1e-12);
}

fn constant_speed_lane_keep(seed: u64) -> Scene {
    let c = GeneratorConfig {
        speed_jitter: 0.0,
        ..GeneratorConfig::default()
    };
    generate_scene(ScenarioFamily::LaneKeep, seed, &c).unwrap()
}

#[test]
fn oracle_on_lane_keep_ranks_map_first() {
    let mut curved = 0;
    for seed in 0..10 {
        let s = constant_speed_lane_keep(seed);
        let r = scene_importance(&OraclePredictor::default(), &s, &quick(), 0).unwrap();
        let total: f64 = r.phi.to_array().iter().sum();
        assert!((total - r.v_full).abs() < 1e-9);
        if r.v_full > 1e-6 {
            curved += 1;
            assert_eq!(r.phi.ranking()[0], FeatureGroup::Map, "{:?}", r.phi);
        }
    }
    assert!(curved >= 3);
}

#[test]
fn oracle_redundancy_signature() {
    let p = OraclePredictor::default();
    let hm = Coalition::of(&[FeatureGroup::History, FeatureGroup::Map]);
    for seed in 0..10 {
        let s = constant_speed_lane_keep(seed);
        let err = coalition_errors(&p, &s, ErrorMetric::MinSade, 0).unwrap();
        let drop_history = err[hm.without(FeatureGroup::History).bits() as usize] - err[hm.bits() as usize];
        let drop_map = err[hm.without(FeatureGroup::Map).bits() as usize] - err[hm.bits() as usize];
        assert!(drop_history.abs() <= drop_map.abs(), "{drop_history} vs {drop_map}");
    }
}

#[test]
fn scene_importance_is_reproducible() {
    let s = scene(ScenarioFamily::Interaction, 6);
    let p = OraclePredictor::default();
    let c = ImportanceConfig {
        seeds: 2,
        seed: 11,
        ..ImportanceConfig::default()
    };
    let a = scene_importance(&p, &s, &c, 3).unwrap();
    let b = scene_importance(&p, &s, &c, 3).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn zero_seeds_rejected() {
    let s = scene(ScenarioFamily::LaneKeep, 0);
    let c = ImportanceConfig {
        seeds: 0,
        ..ImportanceConfig::default()
    };
    assert!(scene_importance(&OraclePredictor::default(), &s, &c, 0).is_err());
}

#[test]
fn global_of_one_scene_is_its_attribution() {
    let s = scene(ScenarioFamily::Turn, 2);
    let p = OraclePredictor::default();
    let (g, per) = global_importance(&p, std::slice::from_ref(&s), &quick()).unwrap();
    assert_eq!(g.scene_id, GLOBAL_ID);
    assert_eq!(g.phi.history, per[0].phi.history);
    assert_eq!(g.phi.map, per[0].phi.map);
}

#[test]
fn global_without_signals_is_zero() {
    let scenes: Vec<Scene> = (0..3).map(|i| scene(ScenarioFamily::Irregular, i)).collect();
    assert!(scenes.iter().all(|s| s.signals.is_empty()));
    let (g, _) = global_importance(&OraclePredictor::default(), &scenes, &quick()).unwrap();
    assert_eq!(g.phi.traffic_sign, 0.0);
}

fn report(h: f64, m: f64, neighbors: &[f64], signals: &[f64]) -> ShapleyReport {
    let el = |xs: &[f64]| {
        xs.iter()
            .enumerate()
            .map(|(i, &c)| ElementContribution {
                id: i as u64,
                contribution: c,
            })
            .collect()
    };
    ShapleyReport {
        scene_id: "s".into(),
        metric: ErrorMetric::MinSade,
        v_empty: 0.0,
        v_full: h + m,
        phi: GroupAttribution {
            history: h,
            neighbors: 0.0,
            traffic_sign: 0.0,
            map: m,
        },
        elements: ElementContributions {
            neighbors: el(neighbors),
            signals: el(signals),
        },
    }
}

#[test]
fn global_max_then_mean_by_hand() {
    let reports = [
        report(1.0, 4.0, &[0.5, 2.0, -1.0], &[0.25]),
        report(2.0, 5.0, &[-0.5, -0.25], &[]),
        report(3.0, 9.0, &[], &[1.0, 3.0]),
    ];
    let g = aggregate_global(&reports).unwrap();
    assert_eq!(g.phi.history, 2.0);
    assert_eq!(g.phi.map, 6.0);
    assert_eq!(g.phi.neighbors, (2.0 - 0.25 + 0.0) / 3.0);
    assert_eq!(g.phi.traffic_sign, (0.25 + 0.0 + 3.0) / 3.0);
    assert!(aggregate_global(&[]).is_err());
}

#[test]
fn heatmap_layout() {
    let csv = heatmap_csv(&[report(1.0, 2.0, &[], &[])]);
    assert_eq!(csv, "scene_id,h,n,s,m\ns,1,0,0,2\n");
}

#[test]
fn metric_names() {
    assert_eq!(ErrorMetric::parse("minSFDE").unwrap(), ErrorMetric::MinSfde);
    assert_eq!(ErrorMetric::parse("ade").unwrap().name(), "minSADE");
    assert!(ErrorMetric::parse("rmse").is_err());
}
