use std::collections::HashMap;

use rand::Rng as _;

use super::cloud::{Frame, PointCloud};
use super::{cross, dot, sub, Point3};
use crate::error::{Error, Result};
use crate::rng;

/// Number of surface samples per cloud, both for ground-truth clouds and
/// for clouds handed to the point encoder.
pub const DEFAULT_SAMPLE_COUNT: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if let Some(v) = vertices.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::Invalid(format!("non-finite vertex {v:?}")));
        }
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&k| k as usize >= vertices.len()) {
                return Err(Error::Invalid(format!(
                    "triangle {i} {t:?} indexes past {} vertices",
                    vertices.len()
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Invalid(format!("triangle {i} {t:?} repeats a vertex")));
            }
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn corners(&self, tri: usize) -> [Point3; 3] {
        self.triangles[tri].map(|k| self.vertices[k as usize])
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * super::norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Applies `f` to every vertex, keeping connectivity.
    pub fn map_vertices(&self, f: impl Fn(Point3) -> Point3) -> Result<TriangleMesh> {
        TriangleMesh::new(
            self.vertices.iter().map(|&v| f(v)).collect(),
            self.triangles.clone(),
        )
    }

    /// Closed two-manifold check: every undirected edge is shared by exactly
    /// two triangles.
    pub fn is_watertight(&self) -> bool {
        self.check_closed().is_ok()
    }

    fn check_closed(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::NotWatertight("mesh has no triangles".into()));
        }
        // directed edge -> use count
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                *directed.entry((t[e], t[(e + 1) % 3])).or_default() += 1;
            }
        }
        let mut undirected: HashMap<(u32, u32), u32> = HashMap::new();
        for (&(a, b), &n) in &directed {
            *undirected.entry((a.min(b), a.max(b))).or_default() += n;
        }
        if let Some((e, n)) = undirected.iter().find(|(_, &n)| n != 2) {
            return Err(Error::NotWatertight(format!(
                "edge {e:?} is shared by {n} triangles"
            )));
        }
        if let Some((e, _)) = directed.iter().find(|(_, &n)| n != 1) {
            return Err(Error::Orientation(format!(
                "edge {e:?} is traversed twice in the same direction"
            )));
        }
        Ok(())
    }
}

/// Enclosed volume as a sum of signed origin tetrahedra, in ml (1 unit^3 = 1 ml).
pub fn mesh_volume(mesh: &TriangleMesh) -> Result<f64> {
    mesh.check_closed()?;
    let sixfold: f64 = (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            dot(a, cross(b, c))
        })
        .sum();
    let volume = sixfold / 6.0;
    if volume <= 0.0 {
        return Err(Error::Orientation(format!(
            "signed volume {volume} is not positive (inward-facing triangles)"
        )));
    }
    Ok(volume)
}

/// Area-weighted triangle choice followed by a uniform barycentric draw.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.triangles.is_empty() {
        return Err(Error::Invalid("cannot sample an empty mesh".into()));
    }
    if n == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Invalid("mesh has zero surface area".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let tri = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        let [a, b, c] = mesh.corners(tri);
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = a[k] + r1 * (b[k] - a[k]) + r2 * (c[k] - a[k]);
        }
        points.push(p);
    }
    PointCloud::new(points, Frame::Metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_cube() -> TriangleMesh {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ];
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
        TriangleMesh::new(v, t).unwrap()
    }

    #[test]
    fn cube_volume_exact() {
        assert_eq!(mesh_volume(&unit_cube()).unwrap(), 1.0);
    }

    #[test]
    fn flipped_triangle_is_orientation_error() {
        let cube = unit_cube();
        let mut tris = cube.triangles().to_vec();
        tris[3] = [tris[3][0], tris[3][2], tris[3][1]];
        let flipped = TriangleMesh::new(cube.vertices().to_vec(), tris).unwrap();
        assert!(matches!(mesh_volume(&flipped), Err(Error::Orientation(_))));
    }

    #[test]
    fn inward_mesh_is_orientation_error() {
        let cube = unit_cube();
        let tris = cube.triangles().iter().map(|t| [t[0], t[2], t[1]]).collect();
        let inverted = TriangleMesh::new(cube.vertices().to_vec(), tris).unwrap();
        assert!(matches!(mesh_volume(&inverted), Err(Error::Orientation(_))));
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let cube = unit_cube();
        let tris = cube.triangles()[1..].to_vec();
        let open = TriangleMesh::new(cube.vertices().to_vec(), tris).unwrap();
        assert!(!open.is_watertight());
        assert!(matches!(mesh_volume(&open), Err(Error::NotWatertight(_))));
    }

    #[test]
    fn rejects_bad_indices() {
        assert!(TriangleMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn single_triangle_samples_lie_on_plane() {
        let a = [0.3, -1.2, 2.0];
        let b = [1.7, 0.4, -0.5];
        let c = [-0.8, 2.2, 1.1];
        let mesh = TriangleMesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
        let normal = cross(sub(b, a), sub(c, a));
        let unit = super::super::normalize(normal);
        let cloud = sample_mesh_surface(&mesh, 2000, 5).unwrap();
        for p in cloud.points() {
            assert!(dot(unit, sub(*p, a)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_area_mesh_errors() {
        let mesh = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(sample_mesh_surface(&mesh, 10, 0).is_err());
    }

    #[test]
    fn cube_faces_sampled_by_area() {
        let cloud = sample_mesh_surface(&unit_cube(), 100_000, 11).unwrap();
        let mut counts = [0usize; 6];
        for p in cloud.points() {
            // face index from the coordinate pinned to 0 or 1
            let face = (0..3)
                .flat_map(|a| [(a, 0.0), (a, 1.0)])
                .position(|(a, v)| (p[a] - v).abs() < 1e-12)
                .unwrap();
            counts[face] += 1;
        }
        for c in counts {
            let frac = c as f64 / 100_000.0;
            assert!((frac - 1.0 / 6.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_mesh_surface(&unit_cube(), 64, 1).unwrap();
        let b = sample_mesh_surface(&unit_cube(), 64, 1).unwrap();
        let c = sample_mesh_surface(&unit_cube(), 64, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
