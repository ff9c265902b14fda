use serde::{Deserialize, Serialize};

use super::{Point3, Vec3};
use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel `(u, v)` looks along `((u - cx) / fx, (v - cy) / fy, 1)`
/// in camera coordinates (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if !ok {
            return Err(Error::Invalid(format!("invalid camera intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    /// Perspective projection of a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p: Point3) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }
}

/// Rigid transform from object coordinates into the camera frame:
/// `p_cam = rotation * p_obj + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Camera on a sphere of radius `distance` around the object origin, raised
    /// by `elevation` above the object's xy plane (z up) and rotated by `azimuth`
    /// about z, looking at the origin.
    pub fn orbit(distance: f64, elevation: f64, azimuth: f64) -> Self {
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        let eye = [distance * ce * ca, distance * ce * sa, distance * se];
        let forward = super::normalize([-eye[0], -eye[1], -eye[2]]);
        let world_up = [0.0, 0.0, 1.0];
        let right = super::normalize(super::cross(forward, world_up));
        // image y runs downward
        let down = super::cross(forward, right);
        let rotation = [right, down, forward];
        let translation = [
            -super::dot(right, eye),
            -super::dot(down, eye),
            -super::dot(forward, eye),
        ];
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        [
            super::dot(r[0], p) + self.translation[0],
            super::dot(r[1], p) + self.translation[1],
            super::dot(r[2], p) + self.translation[2],
        ]
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        [super::dot(r[0], v), super::dot(r[1], v), super::dot(r[2], v)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).is_ok());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
    }

    #[test]
    fn orbit_looks_at_origin() {
        let pose = Pose::orbit(10.0, 0.7, 1.3);
        let origin = pose.apply([0.0; 3]);
        assert!(origin[0].abs() < 1e-12 && origin[1].abs() < 1e-12);
        assert!((origin[2] - 10.0).abs() < 1e-12);
        // world up projects to image "up" (negative y)
        let up = pose.rotate([0.0, 0.0, 1.0]);
        assert!(up[1] < 0.0);
    }
}
