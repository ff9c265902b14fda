//! Synthetic stand-in data: parametric food solids, a pinhole renderer and
//! the dataset builder.

pub mod dataset;
pub mod render;
pub mod shapes;

pub use dataset::{
    assign_splits, build_dataset, default_classes, generate_sample, CameraRig, ClassSpec,
    DatasetManifest, FoodClass, GeneratedSample, GeneratorConfig, SampleEntry, SampleRecord,
    Split, MANIFEST_FILE,
};
pub use render::{perturb_depth, render, Rendering};
pub use shapes::{analytic_volume, generate_mesh, ShapeKind, ShapeSpec};
