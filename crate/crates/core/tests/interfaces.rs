//! Serialization round trips across the public file formats.

use erfas_core::codebook::{finite_state, synthesis, Codebook};
use erfas_core::harness::{ExperimentConfig, ExperimentKind};
use erfas_core::patterns::{PatternLibrary, PatternState, TabulatedState};
use erfas_core::response::{ElementModel, ResponseModel};
use erfas_core::scene::{Aod, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn scenario_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    let mut s = Scenario::table_one().with_snr_db(7.5);
    s.ue_position = [41.123456789, -3.3, 0.7];
    s.save(&path).unwrap();
    assert_eq!(Scenario::load(&path).unwrap(), s);
}

#[test]
fn codebook_json_round_trip_is_exact() {
    let s = Scenario::table_one();
    let model = ResponseModel::new(s.array.clone(), ElementModel::synthesis(4).unwrap());
    let cb = synthesis::build_codebook(&s.uncertainty_region, &s, &model).unwrap();
    let back = Codebook::from_json(&cb.to_json().unwrap()).unwrap();
    assert_eq!(back, cb);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lib = PatternLibrary::default_library(4, &mut rng).unwrap();
    let fs_model = finite_state::finite_state_model(&s, lib);
    let config = finite_state::BcdConfig { grid_points: 100, ..Default::default() };
    let region = erfas_core::scene::BoxRegion::point(s.ue_position);
    let fs = finite_state::build_codebook(&region, &s, &fs_model, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cb.json");
    fs.save(&path).unwrap();
    assert_eq!(Codebook::load(&path).unwrap(), fs);
}

#[test]
fn tabulated_library_directory_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let analytic = PatternLibrary::default_library(3, &mut rng).unwrap();
    let (el, az) = TabulatedState::degree_grid();
    let states = analytic
        .states()
        .iter()
        .map(|st| {
            let t = TabulatedState::tabulate(el.clone(), az.clone(), |a| st.value(a)).unwrap();
            PatternState::Tabulated(t)
        })
        .collect();
    let lib = PatternLibrary::new(states).unwrap();
    let dir = tempfile::tempdir().unwrap();
    lib.save(dir.path()).unwrap();
    let back = PatternLibrary::load(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    let probe = Aod::from_degrees(73.0, 12.5);
    assert_eq!(back.evaluate(&probe), lib.evaluate(&probe));
}

#[test]
fn experiment_configs_round_trip() {
    for kind in ExperimentKind::ALL {
        let c = ExperimentConfig::for_kind(kind);
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }
    let partial = r#"{"kind": "peb-vs-q", "sweep": [1, 4], "model": {"kind": "synthesis", "q": 4}}"#;
    let c = ExperimentConfig::from_json(partial).unwrap();
    assert_eq!(c.sweep, vec![1.0, 4.0]);
    assert_eq!(c.trials, 200);
}
