//! Synthetic eating-occasion datasets: one food object per sample, rendered
//! under a fixed camera rig, with exact volume and energy targets.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{render, Rendering};
use super::shapes::{generate_mesh, ShapeKind, ShapeSpec};
use crate::error::{Error, Result};
use crate::formats;
use crate::geometry::{
    mesh_volume, sample_mesh_surface, CameraIntrinsics, DepthMap, Frame, Image, Mask, PointCloud,
    Pose, TriangleMesh,
};
use crate::rng::{self, mix_seed};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoodClass {
    pub id: u32,
    pub name: String,
    /// kCal per ml.
    pub energy_density: f64,
    pub albedo: [f64; 3],
}

/// Class entry of the generator config: the class itself plus the solid
/// its samples are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub id: u32,
    pub name: String,
    pub energy_density: f64,
    pub albedo: [f64; 3],
    /// Base solid; size parameters are scaled per sample.
    pub shape: ShapeKind,
}

impl ClassSpec {
    pub fn food_class(&self) -> FoodClass {
        FoodClass {
            id: self.id,
            name: self.name.clone(),
            energy_density: self.energy_density,
            albedo: self.albedo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    /// Distance from the camera center to the object center.
    pub distance: f64,
    /// Camera elevation above the horizontal plane, degrees.
    pub elevation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub split_fraction: f64,
    pub seed: u64,
    pub classes: Vec<ClassSpec>,
    /// Isotropic scale factor range, drawn log-uniformly.
    pub scale_range: [f64; 2],
    /// Per-parameter multiplicative jitter, log-uniform in `[1/(1+j), 1+j]`.
    pub aspect_jitter: f64,
    pub camera: CameraRig,
    /// Direction toward the light, camera frame.
    pub light_dir: [f64; 3],
    pub gtpc_points: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            split_fraction: 0.8,
            seed: 0,
            classes: default_classes(),
            scale_range: [0.5, 2.0],
            aspect_jitter: 0.1,
            camera: CameraRig {
                intrinsics: CameraIntrinsics {
                    fx: 750.0,
                    fy: 750.0,
                    cx: 160.0,
                    cy: 160.0,
                    width: 320,
                    height: 320,
                },
                distance: 60.0,
                elevation_deg: 50.0,
            },
            light_dir: [0.3, -0.6, -0.75],
            gtpc_points: crate::geometry::DEFAULT_SAMPLE_COUNT,
        }
    }
}

/// Five classes over three solids. Classes sharing a solid differ in
/// energy density, so density is recoverable from color but not from shape.
pub fn default_classes() -> Vec<ClassSpec> {
    vec![
        ClassSpec {
            id: 0,
            name: "apple".into(),
            energy_density: 0.52,
            albedo: [0.80, 0.12, 0.10],
            shape: ShapeKind::Ellipsoid {
                radii: [4.0, 4.0, 3.6],
            },
        },
        ClassSpec {
            id: 1,
            name: "bread_roll".into(),
            energy_density: 2.7,
            albedo: [0.60, 0.38, 0.16],
            shape: ShapeKind::Ellipsoid {
                radii: [4.2, 3.8, 3.0],
            },
        },
        ClassSpec {
            id: 2,
            name: "tofu".into(),
            energy_density: 0.76,
            albedo: [0.92, 0.92, 0.86],
            shape: ShapeKind::Box {
                half_extents: [3.6, 3.0, 2.6],
            },
        },
        ClassSpec {
            id: 3,
            name: "cheese".into(),
            energy_density: 3.9,
            albedo: [0.95, 0.78, 0.12],
            shape: ShapeKind::Box {
                half_extents: [3.6, 3.0, 2.4],
            },
        },
        ClassSpec {
            id: 4,
            name: "rice_mound".into(),
            energy_density: 1.3,
            albedo: [0.25, 0.55, 0.85],
            shape: ShapeKind::Cone {
                radius: 5.0,
                height: 4.0,
            },
        },
    ]
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_samples < 2 {
            return bad(format!("n_samples must be >= 2, got {}", self.n_samples));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction must lie in (0, 1), got {}", self.split_fraction));
        }
        let n_train = self.n_train();
        if n_train == 0 || n_train == self.n_samples {
            return bad("split leaves train or test empty".into());
        }
        if self.classes.is_empty() {
            return bad("class table is empty".into());
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !(c.energy_density > 0.0 && c.energy_density.is_finite()) {
                return bad(format!("class {} energy_density must be positive", c.id));
            }
            if c.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return bad(format!("class {} albedo outside [0, 1]", c.id));
            }
            ShapeSpec::with_default_tessellation(c.shape)
                .map_err(|e| Error::Config(format!("class {}: {e}", c.id)))?;
            for other in &self.classes[..i] {
                if other.id == c.id {
                    return bad(format!("duplicate class id {}", c.id));
                }
                if other.albedo == c.albedo {
                    return bad(format!("classes {} and {} share an albedo", other.id, c.id));
                }
            }
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("invalid scale_range {:?}", self.scale_range));
        }
        if !(self.aspect_jitter >= 0.0 && self.aspect_jitter.is_finite()) {
            return bad("aspect_jitter must be >= 0".into());
        }
        self.camera
            .intrinsics
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.camera.distance > 0.0) {
            return bad("camera distance must be positive".into());
        }
        if self.light_dir.iter().all(|c| *c == 0.0) {
            return bad("light_dir must be nonzero".into());
        }
        if self.gtpc_points == 0 {
            return bad("gtpc_points must be positive".into());
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        (self.n_samples as f64 * self.split_fraction).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: u32,
    pub class_id: u32,
    pub split: Split,
    pub volume_ml: f64,
    pub energy_kcal: f64,
    pub image: String,
    pub depth: String,
    pub mask: String,
    pub mesh: String,
    pub gtpc: String,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub classes: Vec<FoodClass>,
    pub camera: CameraIntrinsics,
    pub samples: Vec<SampleEntry>,
    /// Directory the relative sample paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest version {}", manifest.version),
            ));
        }
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id) {
                return Err(Error::Invalid(format!("duplicate sample id {}", s.id)));
            }
            if self.class(s.class_id).is_none() {
                return Err(Error::Invalid(format!(
                    "sample {} references unknown class {}",
                    s.id, s.class_id
                )));
            }
            for rel in [&s.image, &s.depth, &s.mask, &s.mesh, &s.gtpc] {
                let p = self.root.join(rel);
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "sample file missing"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn class(&self, id: u32) -> Option<&FoodClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn entry(&self, id: u32) -> Option<&SampleEntry> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn load_sample(&self, id: u32) -> Result<SampleRecord> {
        let entry = self.entry(id).ok_or_else(|| Error::Unknown {
            what: "sample",
            name: id.to_string(),
            valid: format!("ids 0..{}", self.samples.len()),
        })?;
        let root = &self.root;
        Ok(SampleRecord {
            id: entry.id,
            class_id: entry.class_id,
            image: formats::read_ppm(&root.join(&entry.image))?,
            depth: formats::read_depth(&root.join(&entry.depth))?,
            mask: formats::read_pgm(&root.join(&entry.mask))?,
            gt_mesh: root.join(&entry.mesh),
            gtpc: formats::read_ply(&root.join(&entry.gtpc), Frame::Metric)?,
            volume: entry.volume_ml,
            energy: entry.energy_kcal,
            camera: self.camera,
            pose: entry.pose,
        })
    }
}

/// One synthetic eating occasion.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: u32,
    pub class_id: u32,
    pub image: Image,
    pub depth: DepthMap,
    pub mask: Mask,
    pub gt_mesh: PathBuf,
    /// Surface samples of the ground-truth mesh in object coordinates.
    pub gtpc: PointCloud,
    pub volume: f64,
    pub energy: f64,
    pub camera: CameraIntrinsics,
    pub pose: Pose,
}

/// A sample as generated in memory, before anything touches disk.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub id: u32,
    pub class_id: u32,
    pub shape: ShapeSpec,
    pub mesh: TriangleMesh,
    pub rendering: Rendering,
    pub gtpc: PointCloud,
    pub volume: f64,
    pub energy: f64,
    pub pose: Pose,
}

fn log_uniform(rng: &mut rng::Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn scaled_shape(base: ShapeKind, scale: f64, jitter: &mut impl FnMut() -> f64) -> ShapeKind {
    let mut s = |x: f64| x * scale * jitter();
    match base {
        ShapeKind::Sphere { radius } => ShapeKind::Sphere { radius: s(radius) },
        ShapeKind::Box { half_extents } => ShapeKind::Box {
            half_extents: half_extents.map(&mut s),
        },
        ShapeKind::Cylinder { radius, height } => ShapeKind::Cylinder {
            radius: s(radius),
            height: s(height),
        },
        ShapeKind::Ellipsoid { radii } => ShapeKind::Ellipsoid {
            radii: radii.map(&mut s),
        },
        ShapeKind::Cone { radius, height } => ShapeKind::Cone {
            radius: s(radius),
            height: s(height),
        },
    }
}

/// Generates sample `id` deterministically from `(config.seed, id)`.
pub fn generate_sample(config: &GeneratorConfig, id: u32) -> Result<GeneratedSample> {
    let class = &config.classes[id as usize % config.classes.len()];
    let mut rng = rng::seeded(mix_seed(config.seed, id as u64));
    let scale = log_uniform(&mut rng, config.scale_range[0], config.scale_range[1]);
    let j = 1.0 + config.aspect_jitter;
    let mut jitter_rng = rng::seeded(rng.random());
    let kind = scaled_shape(class.shape, scale, &mut || {
        log_uniform(&mut jitter_rng, 1.0 / j, j)
    });
    let shape = ShapeSpec::with_default_tessellation(kind)?;
    let mesh = generate_mesh(&shape)?;
    let volume = mesh_volume(&mesh)?;
    let energy = volume * class.energy_density;

    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let pose = Pose::orbit(
        config.camera.distance,
        config.camera.elevation_deg.to_radians(),
        azimuth,
    );
    let rendering = render(
        &mesh,
        &config.camera.intrinsics,
        &pose,
        class.albedo,
        config.light_dir,
    )?;
    if rendering.mask.count() < config.gtpc_points {
        return Err(Error::Config(format!(
            "sample {id} covers {} pixels, fewer than the {} points a depth cloud needs; \
             enlarge the image or shrink scale_range",
            rendering.mask.count(),
            config.gtpc_points
        )));
    }
    let gtpc = sample_mesh_surface(&mesh, config.gtpc_points, rng.random())?.to_f32_precision();
    Ok(GeneratedSample {
        id,
        class_id: class.id,
        shape,
        mesh,
        rendering,
        gtpc,
        volume,
        energy,
        pose,
    })
}

/// Train/test assignment: a seeded shuffle of ids, the first `n_train` train.
pub fn assign_splits(config: &GeneratorConfig) -> Vec<Split> {
    let mut ids: Vec<usize> = (0..config.n_samples).collect();
    ids.shuffle(&mut rng::seeded(mix_seed(config.seed, u64::MAX)));
    let mut splits = vec![Split::Test; config.n_samples];
    for &i in &ids[..config.n_train()] {
        splits[i] = Split::Train;
    }
    splits
}

fn sample_dir(id: u32) -> String {
    format!("samples/{id:05}")
}

/// Generates every sample, writes media files plus `manifest.json` under
/// `out_dir`, and returns the manifest.
pub fn build_dataset(config: &GeneratorConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let splits = assign_splits(config);
    let entries: Vec<SampleEntry> = (0..config.n_samples as u32)
        .into_par_iter()
        .map(|id| {
            let s = generate_sample(config, id)?;
            let dir = sample_dir(id);
            let entry = SampleEntry {
                id,
                class_id: s.class_id,
                split: splits[id as usize],
                volume_ml: s.volume,
                energy_kcal: s.energy,
                image: format!("{dir}/image.ppm"),
                depth: format!("{dir}/depth.depth"),
                mask: format!("{dir}/mask.pgm"),
                mesh: format!("{dir}/mesh.obj"),
                gtpc: format!("{dir}/gtpc.ply"),
                pose: s.pose,
            };
            formats::write_ppm(&out_dir.join(&entry.image), &s.rendering.image)?;
            formats::write_depth(&out_dir.join(&entry.depth), &s.rendering.depth)?;
            formats::write_pgm(&out_dir.join(&entry.mask), &s.rendering.mask)?;
            formats::write_obj(&out_dir.join(&entry.mesh), &s.mesh)?;
            formats::write_ply(&out_dir.join(&entry.gtpc), &s.gtpc)?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: config.seed,
        classes: config.classes.iter().map(ClassSpec::food_class).collect(),
        camera: config.camera.intrinsics,
        samples: entries,
        root: out_dir.to_path_buf(),
    };
    formats::write_file(&out_dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_samples: n,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        GeneratorConfig::default().validate().unwrap();
    }

    #[test]
    fn split_counts() {
        let cfg = small_config(10);
        let splits = assign_splits(&cfg);
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 8);
        assert_eq!(splits.iter().filter(|s| **s == Split::Test).count(), 2);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small_config(1);
        assert!(cfg.validate().is_err());
        cfg.n_samples = 10;
        cfg.split_fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg.split_fraction = 0.8;
        cfg.classes[1].albedo = cfg.classes[0].albedo;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn energy_is_volume_times_density() {
        let cfg = small_config(10);
        for id in 0..10 {
            let s = generate_sample(&cfg, id).unwrap();
            let class = &cfg.classes[s.class_id as usize];
            assert_eq!(s.energy, s.volume * class.energy_density);
            assert_eq!(s.gtpc.len(), 1024);
        }
    }

    #[test]
    fn samples_are_reproducible() {
        let cfg = small_config(4);
        let a = generate_sample(&cfg, 3).unwrap();
        let b = generate_sample(&cfg, 3).unwrap();
        assert_eq!(a.mesh, b.mesh);
        assert_eq!(a.rendering.depth, b.rendering.depth);
        assert_eq!(a.gtpc, b.gtpc);
    }
}
