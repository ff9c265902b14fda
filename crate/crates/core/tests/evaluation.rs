mod common;

use std::sync::OnceLock;

use mfp3d::evaluation::*;
use mfp3d::rng;
use mfp3d::synth::{DatasetManifest, Split};
use mfp3d::training::*;
use proptest::prelude::*;
use rand::Rng;

fn manifest() -> &'static DatasetManifest {
    static M: OnceLock<DatasetManifest> = OnceLock::new();
    M.get_or_init(|| common::dataset("evaluation_ds", 20))
}

fn tiny() -> TrainConfig {
    TrainConfig {
        points: 32,
        k: 4,
        point_mlp: vec![8],
        image_size: 8,
        conv_filters: vec![4],
        feature_dim: 6,
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn metrics_match_brute_force_sums() {
    let mut r = rng::seeded(99);
    let gts: Vec<f64> = (0..1000).map(|_| r.random_range(1.0..3000.0)).collect();
    let preds: Vec<f64> = (0..1000).map(|_| r.random_range(-100.0..4000.0)).collect();
    let (mut abs, mut pct) = (0.0, 0.0);
    for i in (0..1000).rev() {
        let d = if preds[i] > gts[i] { preds[i] - gts[i] } else { gts[i] - preds[i] };
        abs += d;
        pct += d / gts[i];
    }
    assert!((mae(&preds, &gts).unwrap() - abs / 1000.0).abs() <= 1e-9);
    assert!((mape(&preds, &gts).unwrap() - pct / 10.0).abs() <= 1e-9);
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(
        pairs in prop::collection::vec((-1e3f64..1e3, 0.5f64..1e3), 1..50),
        rot in 0usize..50,
    ) {
        let (p, g): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
        let k = rot % pairs.len();
        let mut pr = p.clone();
        let mut gr = g.clone();
        pr.rotate_left(k);
        gr.rotate_left(k);
        pr.reverse();
        gr.reverse();
        prop_assert!((mae(&p, &g).unwrap() - mae(&pr, &gr).unwrap()).abs() < 1e-9);
        prop_assert!((mape(&p, &g).unwrap() - mape(&pr, &gr).unwrap()).abs() < 1e-9);
        prop_assert!(mae(&p, &g).unwrap() >= 0.0);
    }
}

#[test]
fn baseline_training_mae_is_mean_absolute_deviation() {
    let m = manifest();
    let train: Vec<f64> = m.split(Split::Train).map(|e| e.volume_ml).collect();
    let base = fit_baseline(&train).unwrap();
    let mut sum = 0.0;
    for &t in &train {
        sum += t;
    }
    let mean = sum / train.len() as f64;
    let mut dev = 0.0;
    for &t in &train {
        dev += (t - mean).abs();
    }
    let preds = vec![base.predict(); train.len()];
    assert!((mae(&preds, &train).unwrap() - dev / train.len() as f64).abs() < 1e-9);
}

#[test]
fn constant_model_reproduces_the_baseline_row() {
    let m = manifest();
    for attribute in Attribute::ALL.iter().copied() {
        let cfg = TrainConfig { attribute, ..tiny() };
        let train = prepare_split(m, Split::Train, &cfg).unwrap();
        let mean = target_mean(&train, attribute).unwrap();
        let mut model = Model::new(&cfg, 1.0).unwrap();
        model.params.set_data("head.bias", vec![mean]).unwrap();
        let ckpt = Checkpoint { model, history: vec![] };
        let row = evaluate(&ckpt, m, Split::Test).unwrap();
        let base = evaluate_baseline(m, attribute, Split::Test).unwrap();
        assert!((row.mae.unwrap() - base.mae.unwrap()).abs() < 1e-6);
        assert!((row.mape.unwrap() - base.mape.unwrap()).abs() < 1e-6);
        assert_eq!(row.n_test, base.n_test);
        assert_eq!(base.n_test, m.split(Split::Test).count());
    }
}

#[test]
fn evaluating_twice_gives_identical_rows() {
    let m = manifest();
    let ckpt = train(m, &tiny()).unwrap();
    let a = evaluate(&ckpt, m, Split::Test).unwrap();
    let b = evaluate(&ckpt, m, Split::Test).unwrap();
    assert_eq!(a, b);
    assert!(a.to_kv().contains("attribute=volume mae="));
}

#[test]
fn ablation_grid_shape_and_failure_rows() {
    let m = manifest();
    let report = run_ablation(m, &tiny()).unwrap();
    assert_eq!(report.replicates.len(), 1);
    let rows = &report.replicates[0].rows;
    assert_eq!(rows.len(), 14);
    assert_eq!(rows.iter().filter(|r| r.modality == "baseline").count(), 2);
    let cells: Vec<(String, String, Attribute)> = rows[..12]
        .iter()
        .map(|r| (r.modality.clone(), r.variant.clone(), r.attribute))
        .collect();
    let expected: Vec<(String, String, Attribute)> = grid()
        .into_iter()
        .map(|(m, v, a)| (m.to_string(), v.to_string(), a))
        .collect();
    assert_eq!(cells, expected);
    assert!(rows.iter().all(|r| r.is_ok() && r.mae.unwrap() >= 0.0 && r.n_test > 0));
    for key in ["trend_a", "trend_b", "trend_c", "beats_baseline"] {
        assert_eq!(report.trends[key].replicates, 1);
    }
    assert_eq!(report.footnotes.len(), 4);

    // the image cannot be box-filtered to 6x6, so only RGB runs fail
    let broken = TrainConfig { modality: Modality::PcOnly, image_size: 6, ..tiny() };
    let report = run_ablation(m, &broken).unwrap();
    let rows = &report.replicates[0].rows;
    assert_eq!(rows.len(), 14);
    for r in rows {
        assert_eq!(r.is_ok(), r.modality != "pc_rgb", "{r:?}");
    }
    assert!(!report.replicates[0].trend_b());
    let csv = rows_csv(rows);
    assert_eq!(csv.lines().count(), 15);
    assert!(csv.lines().all(|l| l.split(',').count() == 7));
}

#[test]
fn reports_are_deterministic() {
    let m = manifest();
    let cfg = TrainConfig { epochs: 1, ..tiny() };
    let opts = AblationOptions { replicates: 2, jobs: 2 };
    let a = run_ablation_replicates(m, &cfg, opts, |_| {}).unwrap();
    let b = run_ablation_replicates(m, &cfg, AblationOptions { jobs: 1, ..opts }, |_| {}).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.metadata.train_seeds, vec![0, 1]);
    assert_ne!(a.replicates[0].rows[0].mae, a.replicates[1].rows[0].mae);
    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(json, a.to_json());
    let csv = std::fs::read_to_string(dir.path().join("report_1.csv")).unwrap();
    assert!(csv.starts_with("modality,variant,attribute,mae,mape,n_test,status\n"));
}
