//! Geometric kernels: depth lifting, pinhole back-projection, surface sampling,
//! unit-cube normalization and exact mesh volume.

pub mod camera;
pub mod cloud;
pub mod mesh;
pub mod raster;

pub use camera::{CameraIntrinsics, Pose};
pub use cloud::{
    backproject_pinhole, lift_depth, normalize_unit_cube, subsample, Frame, NormalizeMode,
    PointCloud,
};
pub use mesh::{mesh_volume, sample_mesh_surface, TriangleMesh, DEFAULT_SAMPLE_COUNT};
pub use raster::{apply_mask, DepthMap, Image, Mask};

pub type Point3 = [f64; 3];
pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}
