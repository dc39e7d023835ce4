mod common;

use std::fs;

use proptest::prelude::*;
use xattn::atns::{self, AtnsTensor};
use xattn::detector::{load_weights, random_init, save_weights};
use xattn::evalharness::{emit_report, load_curve, run_sweep, Mode};
use xattn::saliency::{explain, load_saliency, save_saliency, ExplainOptions, Method};
use xattn::scenegen::{generate_dataset, load_dataset, save_dataset, ScenegenParams};
use xattn::Error;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn datasets_round_trip_exactly(seed in any::<u64>(), count in 0usize..4, n_cameras in 1usize..4) {
        let params = ScenegenParams {
            n_cameras,
            height: 16,
            width: 24,
            max_objects: 3,
            min_radius: 0.1,
            max_radius: 0.25,
            ..Default::default()
        };
        let scenes = generate_dataset(seed, count, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&scenes, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), scenes);
    }

    #[test]
    fn atns_round_trips_any_shape(dims in prop::collection::vec(1u32..5, 0..4), fill in any::<f32>()) {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let data: Vec<f32> = (0..n).map(|i| fill * i as f32).collect();
        let t = AtnsTensor::new(dims, data).unwrap();
        let bytes = t.encode();
        let back = AtnsTensor::decode(&bytes, "mem".as_ref()).unwrap();
        prop_assert_eq!(back.encode(), bytes);
    }
}

#[test]
fn truncated_tensor_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.atns");
    atns::write(&path, &AtnsTensor::new(vec![2, 3], vec![1.0; 6]).unwrap()).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes.pop();
    fs::write(&path, bytes).unwrap();
    assert!(matches!(atns::read(&path), Err(Error::Parse { .. })));
}

#[test]
fn missing_manifest_is_reported_as_missing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile { .. })));
    assert!(matches!(load_weights(dir.path()), Err(Error::MissingFile { .. })));
}

#[test]
fn weights_survive_disk_at_f32_precision() {
    let cfg = tiny_config();
    let mut w = random_init(9, &cfg).unwrap();
    w.round_to_f32();
    let dir = tempfile::tempdir().unwrap();
    save_weights(&w, dir.path()).unwrap();
    assert_eq!(load_weights(dir.path()).unwrap(), w);
}

#[test]
fn saliency_export_round_trips() {
    let cfg = tiny_config();
    let w = random_init(2, &cfg).unwrap();
    let scene = scene_for(&cfg, 4);
    let opts = ExplainOptions {
        queries: Some(vec![0, 2]),
        ..Default::default()
    };
    let map = explain(&w, &scene, Method::GradRollout, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_saliency(&map, &scene.id, dir.path()).unwrap();
    let (back, meta) = load_saliency(dir.path()).unwrap();
    assert_eq!(back.queries_used, vec![0, 2]);
    assert_eq!(meta.scene_id, scene.id);
    for (a, b) in back.per_camera.iter().zip(&map.per_camera) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
}

#[test]
fn sweeps_write_reproducible_reports() {
    let cfg = tiny_config();
    let w = random_init(3, &cfg).unwrap();
    let scenes = generate_dataset(5, 6, &scene_params_for(&cfg)).unwrap();
    let fractions = [0.0, 0.2, 0.6, 1.0];
    let run = || {
        let curves: Vec<_> = [Method::RawMean, Method::Random]
            .into_iter()
            .map(|m| run_sweep(&w, &scenes, m, Mode::Negative, &fractions, 8).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&curves, dir.path()).unwrap();
        (curves, dir)
    };
    let (curves, a) = run();
    let (_, b) = run();
    for name in ["raw-mean_negative.csv", "random_negative.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let loaded = load_curve(a.path(), Method::Random, Mode::Negative).unwrap();
    assert_eq!(loaded.scores, curves[1].scores);
    assert_eq!(loaded.auc, curves[1].auc);
    assert!(matches!(
        load_curve(a.path(), Method::GradCam, Mode::Negative),
        Err(Error::MissingFile { .. })
    ));
}
