mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::OnceLock;

use mfp3d::features::{ENCODER_FD_STEP, ENCODER_FD_TOLERANCE};
use mfp3d::geometry::{Image, NormalizeMode};
use mfp3d::synth::{DatasetManifest, Split};
use mfp3d::tensor::gradcheck::{check_param_gradients, random_tensor};
use mfp3d::tensor::{Adam, Optimizer as _, Tape};
use mfp3d::training::*;

fn manifest() -> &'static DatasetManifest {
    static M: OnceLock<DatasetManifest> = OnceLock::new();
    M.get_or_init(|| common::dataset("training_ds", 10))
}

fn tiny(modality: Modality, variant: Variant) -> TrainConfig {
    TrainConfig {
        modality,
        variant,
        points: 16,
        k: 4,
        point_mlp: vec![6, 5],
        image_size: 8,
        conv_filters: vec![2, 3],
        feature_dim: 4,
        epochs: 3,
        batch_size: 3,
        ..TrainConfig::default()
    }
}

/// Replaces every parameter (head included) with seeded noise.
fn randomize(model: &mut Model, seed: u64) {
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for (i, name) in names.iter().enumerate() {
        let shape = model.params.get(name).unwrap().shape().to_vec();
        let t = random_tensor(&shape, seed + i as u64);
        let scaled = t.data().iter().map(|v| v * 0.5).collect();
        model.params.set_data(name, scaled).unwrap();
    }
}

#[test]
fn gtpc_variant_uses_the_stored_cloud() {
    let m = manifest();
    let s = m.load_sample(0).unwrap();
    let cfg = TrainConfig::default();
    assert_eq!(s.gtpc.len(), 1024);
    assert_eq!(stage1_cloud(&s, m.seed, &cfg).unwrap(), s.gtpc);
}

#[test]
fn normalized_and_depth_variants_land_in_the_unit_cube() {
    let m = manifest();
    let s = m.load_sample(1).unwrap();
    for variant in [Variant::GtpcNormalized, Variant::DepthLift] {
        let cfg = TrainConfig { variant, ..TrainConfig::default() };
        let c = stage1_cloud(&s, m.seed, &cfg).unwrap();
        assert_eq!(c.len(), 1024);
        let (lo, hi) = c.bounds().unwrap();
        for a in 0..3 {
            assert!(lo[a] >= 0.0 && hi[a] <= 1.0, "{variant}: {lo:?} {hi:?}");
        }
        assert_eq!(stage1_cloud(&s, m.seed, &cfg).unwrap(), c);
    }
    let uniform = TrainConfig {
        variant: Variant::GtpcNormalized,
        normalize_mode: NormalizeMode::Uniform,
        ..TrainConfig::default()
    };
    let (lo, hi) = stage1_cloud(&s, m.seed, &uniform).unwrap().bounds().unwrap();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    assert!((extent - 1.0).abs() < 1e-12);
}

#[test]
fn pc_only_ignores_the_image() {
    let m = manifest();
    let mut s = m.load_sample(2).unwrap();
    let cfg = tiny(Modality::PcOnly, Variant::Gtpc);
    let mut model = Model::new(&cfg, 100.0).unwrap();
    randomize(&mut model, 7);
    let before = forward_pipeline(&s, m.seed, &model).unwrap();
    assert_ne!(before, 0.0);
    let (w, h) = (s.image.width(), s.image.height());
    s.image = Image::new(w, h, vec![[0.9, 0.1, 0.4]; w * h]).unwrap();
    assert_eq!(forward_pipeline(&s, m.seed, &model).unwrap(), before);

    let rgb = tiny(Modality::PcRgb, Variant::Gtpc);
    let mut model = Model::new(&rgb, 100.0).unwrap();
    randomize(&mut model, 7);
    let a = forward_pipeline(&s, m.seed, &model).unwrap();
    s.image = Image::new(w, h, vec![[0.2, 0.7, 0.1]; w * h]).unwrap();
    assert_ne!(forward_pipeline(&s, m.seed, &model).unwrap(), a);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let m = manifest();
    for variant in [Variant::Gtpc, Variant::DepthLift] {
        let cfg = tiny(Modality::PcRgb, variant);
        let inputs: Vec<SampleInputs> = [0, 4]
            .iter()
            .map(|&id| prepare_sample(&m.load_sample(id).unwrap(), m.seed, &cfg).unwrap())
            .collect();
        let mut model = Model::new(&cfg, 1.0).unwrap();
        randomize(&mut model, 11);
        let batch: Vec<&SampleInputs> = inputs.iter().collect();
        let template = model.clone();
        let report = check_param_gradients(
            "pipeline",
            &model.params,
            ENCODER_FD_STEP,
            ENCODER_FD_TOLERANCE,
            |tape: &mut Tape, params| {
                let probe = Model { params: params.clone(), ..template.clone() };
                let y = probe.forward_batch(tape, &batch)?;
                mfp3d::tensor::gradcheck::weighted_sum(tape, y, 5)
            },
        )
        .unwrap();
        assert!(report.checked > 300);
        assert!(report.passed(), "{variant}: {}", report.max_rel_err);
    }
}

fn overfit_history(attribute: Attribute) -> (Vec<f64>, f64) {
    let m = manifest();
    let cfg = TrainConfig {
        attribute,
        batch_size: 4,
        epochs: 500,
        ..TrainConfig::default()
    };
    let inputs: Vec<SampleInputs> = (0..4)
        .map(|id| prepare_sample(&m.load_sample(id).unwrap(), m.seed, &cfg).unwrap())
        .collect();
    let mean_abs = inputs.iter().map(|s| s.target(attribute).abs()).sum::<f64>() / 4.0;
    (train_prepared(&inputs, &cfg).unwrap().history, mean_abs)
}

fn overfit_runs() -> &'static [(Vec<f64>, f64); 2] {
    static RUNS: OnceLock<[(Vec<f64>, f64); 2]> = OnceLock::new();
    RUNS.get_or_init(|| [overfit_history(Attribute::Volume), overfit_history(Attribute::Energy)])
}

#[test]
fn overfit_single_batch_reaches_one_percent() {
    for (history, mean_abs) in overfit_runs() {
        assert_eq!(history.len(), 500);
        assert_eq!(history[0], *mean_abs);
        let last = history[499];
        assert!(last < 0.01 * mean_abs, "final loss {last} vs mean |y| {mean_abs}");
    }
}

#[test]
fn overfit_loss_non_increasing_after_fifty_steps() {
    for (history, _) in overfit_runs() {
        let rises: Vec<(usize, f64)> = (51..history.len())
            .filter(|&i| history[i] > history[i - 1])
            .map(|i| (i, history[i] - history[i - 1]))
            .collect();
        assert!(rises.is_empty(), "{} rises after step 50, first {:?}", rises.len(), &rises[..rises.len().min(5)]);
    }
}

#[test]
fn identical_config_gives_identical_checkpoint_bytes() {
    let m = manifest();
    let cfg = tiny(Modality::PcRgb, Variant::DepthLift);
    let a = train(m, &cfg).unwrap();
    let b = train(m, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
    let other = train(m, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(encode_checkpoint(&a), encode_checkpoint(&other));
}

#[test]
fn first_epoch_loss_with_one_batch_is_mean_target() {
    let m = manifest();
    let cfg = TrainConfig {
        batch_size: 64,
        epochs: 2,
        ..tiny(Modality::PcOnly, Variant::Gtpc)
    };
    let inputs = prepare_split(m, Split::Train, &cfg).unwrap();
    let ckpt = train_prepared(&inputs, &cfg).unwrap();
    let mean = inputs.iter().map(|s| s.volume.abs()).sum::<f64>() / inputs.len() as f64;
    assert!((ckpt.history[0] - mean).abs() <= 1e-12 * mean);
    assert!(ckpt.history[1] < ckpt.history[0]);
}

#[test]
fn one_step_matches_a_manual_adam_update() {
    let m = manifest();
    let cfg = tiny(Modality::PcRgb, Variant::Gtpc);
    let inputs = prepare_split(m, Split::Train, &cfg).unwrap();
    let batch: Vec<&SampleInputs> = inputs.iter().take(3).collect();
    let mut model = Model::new(&cfg, 10.0).unwrap();
    let mut copy = model.clone();
    train_step(&mut model, &mut Adam::new(cfg.lr), &mut Tape::new(), &batch).unwrap();

    let mut tape = Tape::new();
    let pred = copy.forward_batch(&mut tape, &batch).unwrap();
    let y = tape.constant(vec![3], batch.iter().map(|s| s.volume).collect()).unwrap();
    let loss = tape.l1_loss(pred, y).unwrap();
    tape.backward(loss).unwrap();
    tape.accumulate_param_grads(&mut copy.params).unwrap();
    Adam::new(cfg.lr).step(&mut copy.params).unwrap();
    assert_eq!(model.params, copy.params);
}

fn hash_inputs(inputs: &[SampleInputs]) -> u64 {
    let mut h = DefaultHasher::new();
    for s in inputs {
        s.id.hash(&mut h);
        for v in s.points.iter().chain(s.image.iter().flatten()) {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[test]
fn attribute_changes_labels_only() {
    let m = manifest();
    for variant in Variant::ALL {
        let vol = TrainConfig { variant: *variant, ..TrainConfig::default() };
        let energy = TrainConfig { attribute: Attribute::Energy, ..vol.clone() };
        let a = prepare_split(m, Split::Train, &vol).unwrap();
        let b = prepare_split(m, Split::Train, &energy).unwrap();
        assert_eq!(hash_inputs(&a), hash_inputs(&b));
        assert!(a.iter().zip(&b).all(|(x, y)| x.target(Attribute::Volume) == y.target(Attribute::Volume)));
        assert!(a.iter().any(|s| s.volume != s.energy));
    }
}

#[test]
fn checkpoint_files_round_trip() {
    let m = manifest();
    let cfg = tiny(Modality::PcRgb, Variant::GtpcNormalized);
    let ckpt = train(m, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let test = prepare_split(m, Split::Test, &cfg).unwrap();
    let a: Vec<u64> = ckpt.model.predict(&test).unwrap().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = back.model.predict(&test).unwrap().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
    assert_eq!(back.history, ckpt.history);
    let csv = dir.path().join("h.csv");
    write_history_csv(&ckpt.history, &csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), cfg.epochs + 1);
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing.ckpt")),
        Err(mfp3d::Error::Io { .. })
    ));
}
