//! Parametric solids with closed-form volumes.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, sub, Point3, TriangleMesh};

/// Solid kind with its size parameters (length units, all positive).
/// Every solid is centered on its bounding box with z as the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Ellipsoid { radii: [f64; 3] },
    Cone { radius: f64, height: f64 },
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Box { .. } => "box",
            ShapeKind::Cylinder { .. } => "cylinder",
            ShapeKind::Ellipsoid { .. } => "ellipsoid",
            ShapeKind::Cone { .. } => "cone",
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            ShapeKind::Sphere { radius } => vec![radius],
            ShapeKind::Box { half_extents } => half_extents.to_vec(),
            ShapeKind::Cylinder { radius, height } | ShapeKind::Cone { radius, height } => {
                vec![radius, height]
            }
            ShapeKind::Ellipsoid { radii } => radii.to_vec(),
        }
    }

    /// Subdivision level for round solids, segment count for solids of revolution.
    pub fn default_tessellation(&self) -> u32 {
        match self {
            ShapeKind::Sphere { .. } | ShapeKind::Ellipsoid { .. } => 3,
            ShapeKind::Cylinder { .. } | ShapeKind::Cone { .. } => 64,
            ShapeKind::Box { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub kind: ShapeKind,
    pub tessellation: u32,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, tessellation: u32) -> Result<Self> {
        let spec = Self { kind, tessellation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_default_tessellation(kind: ShapeKind) -> Result<Self> {
        Self::new(kind, kind.default_tessellation())
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.params().iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Invalid(format!(
                "{} size parameters must be positive: {:?}",
                self.kind.name(),
                self.kind
            )));
        }
        let min_tess = match self.kind {
            ShapeKind::Cylinder { .. } | ShapeKind::Cone { .. } => 3,
            ShapeKind::Sphere { .. } | ShapeKind::Ellipsoid { .. } => 0,
            ShapeKind::Box { .. } => 0,
        };
        if self.tessellation < min_tess || self.tessellation > 2048 {
            return Err(Error::Invalid(format!(
                "tessellation {} out of range for {}",
                self.tessellation,
                self.kind.name()
            )));
        }
        Ok(())
    }
}

/// Closed-form enclosed volume.
pub fn analytic_volume(spec: &ShapeSpec) -> f64 {
    match spec.kind {
        ShapeKind::Sphere { radius: r } => 4.0 * PI * r * r * r / 3.0,
        ShapeKind::Box { half_extents: [a, b, c] } => 8.0 * a * b * c,
        ShapeKind::Cylinder { radius: r, height: h } => PI * r * r * h,
        ShapeKind::Ellipsoid { radii: [a, b, c] } => 4.0 * PI * a * b * c / 3.0,
        ShapeKind::Cone { radius: r, height: h } => PI * r * r * h / 3.0,
    }
}

/// Watertight, outward-oriented triangulation.
pub fn generate_mesh(spec: &ShapeSpec) -> Result<TriangleMesh> {
    spec.validate()?;
    let (vertices, triangles) = match spec.kind {
        ShapeKind::Box { half_extents } => box_mesh(half_extents),
        ShapeKind::Sphere { radius } => {
            let (v, t) = icosphere(spec.tessellation);
            (v.into_iter().map(|p| p.map(|c| c * radius)).collect(), t)
        }
        ShapeKind::Ellipsoid { radii } => {
            let (v, t) = icosphere(spec.tessellation);
            (
                v.into_iter()
                    .map(|p| [p[0] * radii[0], p[1] * radii[1], p[2] * radii[2]])
                    .collect(),
                t,
            )
        }
        ShapeKind::Cylinder { radius, height } => {
            revolution(spec.tessellation as usize, radius, radius, height)
        }
        ShapeKind::Cone { radius, height } => {
            revolution(spec.tessellation as usize, radius, 0.0, height)
        }
    };
    let triangles = orient_outward(&vertices, triangles);
    TriangleMesh::new(vertices, triangles)
}

/// All generated solids are convex and contain the origin, so a face is
/// outward exactly when its normal points away from the origin.
fn orient_outward(vertices: &[Point3], triangles: Vec<[u32; 3]>) -> Vec<[u32; 3]> {
    triangles
        .into_iter()
        .map(|t| {
            let [a, b, c] = t.map(|k| vertices[k as usize]);
            let normal = cross(sub(b, a), sub(c, a));
            let centroid = [
                (a[0] + b[0] + c[0]) / 3.0,
                (a[1] + b[1] + c[1]) / 3.0,
                (a[2] + b[2] + c[2]) / 3.0,
            ];
            if dot(normal, centroid) < 0.0 {
                [t[0], t[2], t[1]]
            } else {
                t
            }
        })
        .collect()
}

fn box_mesh([a, b, c]: [f64; 3]) -> (Vec<Point3>, Vec<[u32; 3]>) {
    let mut v = Vec::with_capacity(8);
    for &z in &[-c, c] {
        for &(x, y) in &[(-a, -b), (a, -b), (a, b), (-a, b)] {
            v.push([x, y, z]);
        }
    }
    let t = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [0, 4, 7],
        [0, 7, 3],
    ];
    (v, t)
}

fn icosphere(level: u32) -> (Vec<Point3>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut vertices: Vec<Point3> = raw.iter().map(|&p| crate::geometry::normalize(p)).collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Point3>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a as usize], vertices[b as usize]);
                vertices.push(crate::geometry::normalize([
                    p[0] + q[0],
                    p[1] + q[1],
                    p[2] + q[2],
                ]));
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    (vertices, triangles)
}

/// Frustum of revolution about z from `-h/2` (radius `r_bottom`) to `+h/2`
/// (radius `r_top`); a zero top radius closes into an apex.
fn revolution(
    segments: usize,
    r_bottom: f64,
    r_top: f64,
    height: f64,
) -> (Vec<Point3>, Vec<[u32; 3]>) {
    let (z0, z1) = (-height / 2.0, height / 2.0);
    let ring = |r: f64, z: f64| -> Vec<Point3> {
        (0..segments)
            .map(|i| {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
                [r * theta.cos(), r * theta.sin(), z]
            })
            .collect()
    };
    let mut v = vec![[0.0, 0.0, z0], [0.0, 0.0, z1]];
    let bottom = v.len() as u32;
    v.extend(ring(r_bottom, z0));
    let mut t = Vec::new();
    let n = segments as u32;
    for i in 0..n {
        let j = (i + 1) % n;
        t.push([0, bottom + i, bottom + j]);
    }
    if r_top > 0.0 {
        let top = v.len() as u32;
        v.extend(ring(r_top, z1));
        for i in 0..n {
            let j = (i + 1) % n;
            t.push([1, top + i, top + j]);
            t.push([bottom + i, bottom + j, top + j]);
            t.push([bottom + i, top + j, top + i]);
        }
    } else {
        for i in 0..n {
            let j = (i + 1) % n;
            t.push([bottom + i, bottom + j, 1]);
        }
    }
    (v, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh_volume;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b
    }

    #[test]
    fn box_is_exact() {
        let spec = ShapeSpec::with_default_tessellation(ShapeKind::Box {
            half_extents: [0.5, 0.5, 0.5],
        })
        .unwrap();
        let mesh = generate_mesh(&spec).unwrap();
        assert_eq!(mesh.triangles().len(), 12);
        assert_eq!(mesh_volume(&mesh).unwrap(), 1.0);
    }

    #[test]
    fn closed_forms() {
        let sphere = ShapeSpec::new(ShapeKind::Sphere { radius: 1.0 }, 3).unwrap();
        assert!((analytic_volume(&sphere) - 4.188_790_204_786_391).abs() < 1e-12);
        let cube = ShapeSpec::new(ShapeKind::Box { half_extents: [1.0; 3] }, 1).unwrap();
        assert_eq!(analytic_volume(&cube), 8.0);
        let cone = ShapeSpec::new(ShapeKind::Cone { radius: 3.0, height: 1.0 }, 64).unwrap();
        assert!((analytic_volume(&cone) - 3.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn tessellated_volumes_track_closed_forms() {
        let cases = [
            (ShapeKind::Sphere { radius: 1.0 }, 3, 0.02),
            (ShapeKind::Ellipsoid { radii: [1.0, 2.0, 0.5] }, 3, 0.02),
            (ShapeKind::Cylinder { radius: 1.0, height: 2.0 }, 64, 0.01),
            (ShapeKind::Cone { radius: 3.0, height: 1.0 }, 64, 0.01),
        ];
        for (kind, tess, tol) in cases {
            let spec = ShapeSpec::new(kind, tess).unwrap();
            let mesh = generate_mesh(&spec).unwrap();
            assert!(mesh.is_watertight());
            let v = mesh_volume(&mesh).unwrap();
            assert!(rel(v, analytic_volume(&spec)) < tol, "{kind:?}: {v}");
        }
    }

    #[test]
    fn rejects_nonpositive_sizes() {
        assert!(ShapeSpec::new(ShapeKind::Sphere { radius: 0.0 }, 3).is_err());
        assert!(ShapeSpec::new(ShapeKind::Box { half_extents: [1.0, -1.0, 1.0] }, 1).is_err());
        assert!(ShapeSpec::new(ShapeKind::Cylinder { radius: 1.0, height: 1.0 }, 2).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec = ShapeSpec::new(ShapeKind::Cone { radius: 2.0, height: 1.0 }, 64).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"cone","radius":2.0,"height":1.0,"tessellation":64}"#);
        let back: ShapeSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
