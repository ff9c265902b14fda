#![allow(dead_code)]

use std::path::PathBuf;

use mfp3d::synth::{build_dataset, DatasetManifest, GeneratorConfig};

/// Builds (once per directory name) a dataset under the cargo test scratch dir.
pub fn dataset(name: &str, n_samples: usize) -> DatasetManifest {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let cfg = GeneratorConfig {
        n_samples,
        ..GeneratorConfig::default()
    };
    let manifest = dir.join("manifest.json");
    if let Ok(m) = DatasetManifest::load(&manifest) {
        if m.samples.len() == n_samples && m.seed == cfg.seed {
            return m;
        }
    }
    build_dataset(&cfg, &dir).expect("dataset builds")
}
