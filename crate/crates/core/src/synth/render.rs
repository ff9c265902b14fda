//! Ray-cast renderer for a single object under a pinhole camera.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{
    cross, dot, normalize, sub, CameraIntrinsics, DepthMap, Image, Mask, Pose, TriangleMesh, Vec3,
};
use crate::rng;

pub const AMBIENT: f64 = 0.2;

const NEAR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Rendering {
    pub image: Image,
    pub depth: DepthMap,
    pub mask: Mask,
}

/// Casts one ray per pixel through integer pixel coordinates. The nearest
/// hit gives the z-depth and a flat-shaded Lambertian color
/// `albedo * (ambient + max(0, n.l))`, quantized to 8 bits; misses stay black
/// with depth 0. `light_dir` points toward the light in the camera frame.
pub fn render(
    mesh: &TriangleMesh,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    albedo: [f64; 3],
    light_dir: Vec3,
) -> Result<Rendering> {
    intrinsics.validate()?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let light = normalize(light_dir);
    let cam: Vec<Vec3> = mesh.vertices().iter().map(|&v| pose.apply(v)).collect();

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut shade = vec![0.0f64; w * h];

    for tri in mesh.triangles() {
        let [a, b, c] = tri.map(|k| cam[k as usize]);
        if a[2] <= NEAR && b[2] <= NEAR && c[2] <= NEAR {
            continue;
        }
        let (u0, u1, v0, v1) = if a[2] > NEAR && b[2] > NEAR && c[2] > NEAR {
            let pa = intrinsics.project(a);
            let pb = intrinsics.project(b);
            let pc = intrinsics.project(c);
            let umin = pa.0.min(pb.0).min(pc.0).floor().max(0.0);
            let umax = pa.0.max(pb.0).max(pc.0).ceil().min(w as f64 - 1.0);
            let vmin = pa.1.min(pb.1).min(pc.1).floor().max(0.0);
            let vmax = pa.1.max(pb.1).max(pc.1).ceil().min(h as f64 - 1.0);
            if umin > umax || vmin > vmax {
                continue;
            }
            (umin as usize, umax as usize, vmin as usize, vmax as usize)
        } else {
            // straddles the image plane: fall back to a full scan
            (0, w - 1, 0, h - 1)
        };
        let e1 = sub(b, a);
        let e2 = sub(c, a);
        let normal = normalize(cross(e1, e2));
        let lambert = AMBIENT + dot(normal, light).max(0.0);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let dir = intrinsics.ray(u as f64, v as f64);
                if let Some(t) = intersect(dir, a, e1, e2) {
                    let idx = v * w + u;
                    if t > NEAR && t < zbuf[idx] {
                        zbuf[idx] = t;
                        shade[idx] = lambert;
                    }
                }
            }
        }
    }

    let mut image = Image::black(w, h);
    let mut depth = vec![DepthMap::INVALID; w * h];
    let mut hits = 0usize;
    for v in 0..h {
        for u in 0..w {
            let idx = v * w + u;
            if zbuf[idx].is_finite() {
                hits += 1;
                depth[idx] = zbuf[idx] as f32;
                let rgb = albedo.map(|a| quantize(a * shade[idx]));
                image.set(u, v, rgb);
            }
        }
    }
    if hits == 0 {
        return Err(Error::EmptyRender);
    }
    let depth = DepthMap::new(w, h, depth)?;
    let mask = depth.support();
    Ok(Rendering { image, depth, mask })
}

fn quantize(c: f64) -> f32 {
    ((c.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

/// Moller-Trumbore from the camera origin. Returns the ray parameter, which
/// equals the z-depth because ray directions have unit z.
fn intersect(dir: Vec3, a: Vec3, e1: Vec3, e2: Vec3) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let p = cross(dir, e2);
    let det = dot(e1, p);
    if det.abs() < EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = [-a[0], -a[1], -a[2]];
    let bu = dot(s, p) * inv;
    if !(-EPS..=1.0 + EPS).contains(&bu) {
        return None;
    }
    let q = cross(s, e1);
    let bv = dot(dir, q) * inv;
    if bv < -EPS || bu + bv > 1.0 + EPS {
        return None;
    }
    Some(dot(e2, q) * inv)
}

/// Multiplies each valid depth by `1 + eps`, `eps ~ N(0, sigma^2)`, drawn in
/// row-major order over valid pixels. Results stay strictly positive.
pub fn perturb_depth(depth: &DepthMap, sigma: f64, seed: u64) -> Result<DepthMap> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(depth.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = rng::seeded(seed);
    let values = depth
        .values()
        .iter()
        .map(|&d| {
            if d > 0.0 {
                let eps: f64 = normal.sample(&mut rng);
                let noisy = (d as f64 * (1.0 + eps)) as f32;
                if noisy > 0.0 {
                    noisy
                } else {
                    d * 1e-6
                }
            } else {
                d
            }
        })
        .collect();
    DepthMap::new(depth.width(), depth.height(), values)
}
