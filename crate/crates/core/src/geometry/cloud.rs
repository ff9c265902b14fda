use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::raster::{ensure_same_dims, DepthMap, Mask};
use super::Point3;
use crate::error::{Error, Result};
use crate::rng;

/// Coordinate frame a cloud lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Metric length units (1 unit = 1 cm, so 1 unit^3 = 1 ml).
    Metric,
    /// Pixel coordinates times a pixel scale, depth as third axis.
    PixelLift,
    /// Dimensionless, every coordinate in [0, 1].
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Invalid(format!("non-finite point {p:?}")));
        }
        if frame == Frame::Normalized
            && points
                .iter()
                .flatten()
                .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::Invalid(
                "normalized cloud has a coordinate outside [0, 1]".into(),
            ));
        }
        Ok(Self { points, frame })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Axis-aligned bounds as `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (
                [lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])],
                [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])],
            )
        }))
    }

    /// Rounds every coordinate to the nearest `f32`, the precision of the PLY format.
    pub fn to_f32_precision(&self) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.map(|c| c as f32 as f64))
                .collect(),
            frame: self.frame,
        }
    }
}

fn masked_depths(depth: &DepthMap, mask: &Mask) -> Result<Vec<(usize, usize, f64)>> {
    ensure_same_dims(
        (depth.width(), depth.height()),
        (mask.width(), mask.height()),
        "depth vs mask",
    )?;
    let mut out = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            if !mask.get(u, v) {
                continue;
            }
            let d = depth.get(u, v);
            if d < 0.0 {
                return Err(Error::NegativeDepth { u, v, depth: d });
            }
            if d > 0.0 {
                out.push((u, v, d as f64));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyForeground);
    }
    Ok(out)
}

/// Lifts every masked, valid pixel to `(u * pixel_scale, v * pixel_scale, depth)`.
/// No intrinsics are involved: image axes are kept as they are and depth is
/// appended as the third coordinate.
pub fn lift_depth(depth: &DepthMap, mask: &Mask, pixel_scale: f64) -> Result<PointCloud> {
    if !(pixel_scale > 0.0 && pixel_scale.is_finite()) {
        return Err(Error::Invalid(format!("pixel_scale must be positive, got {pixel_scale}")));
    }
    let points = masked_depths(depth, mask)?
        .into_iter()
        .map(|(u, v, d)| [u as f64 * pixel_scale, v as f64 * pixel_scale, d])
        .collect();
    PointCloud::new(points, Frame::PixelLift)
}

/// Metric back-projection through a pinhole camera.
pub fn backproject_pinhole(
    depth: &DepthMap,
    mask: &Mask,
    intrinsics: &CameraIntrinsics,
) -> Result<PointCloud> {
    intrinsics.validate()?;
    ensure_same_dims(
        (depth.width(), depth.height()),
        (intrinsics.width, intrinsics.height),
        "depth vs camera",
    )?;
    let points = masked_depths(depth, mask)?
        .into_iter()
        .map(|(u, v, d)| {
            [
                (u as f64 - intrinsics.cx) * d / intrinsics.fx,
                (v as f64 - intrinsics.cy) * d / intrinsics.fy,
                d,
            ]
        })
        .collect();
    PointCloud::new(points, Frame::Metric)
}

/// Chooses `n` distinct points uniformly without replacement.
pub fn subsample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n > cloud.len() {
        return Err(Error::NotEnoughPoints {
            requested: n,
            available: cloud.len(),
        });
    }
    if n == 0 {
        return Err(Error::Invalid("cannot subsample zero points".into()));
    }
    let mut rng = rng::seeded(seed);
    let points = index::sample(&mut rng, cloud.len(), n)
        .into_iter()
        .map(|i| cloud.points[i])
        .collect();
    Ok(PointCloud {
        points,
        frame: cloud.frame,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Each axis independently mapped onto [0, 1].
    #[default]
    PerAxis,
    /// Shift the min corner to the origin and divide by the largest extent.
    Uniform,
}

/// Rescales a cloud into the unit cube. Zero-extent axes map to 0.
pub fn normalize_unit_cube(cloud: &PointCloud, mode: NormalizeMode) -> Result<PointCloud> {
    let (lo, hi) = cloud
        .bounds()
        .ok_or_else(|| Error::Invalid("cannot normalize an empty cloud".into()))?;
    let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let scale = match mode {
        NormalizeMode::PerAxis => extent,
        NormalizeMode::Uniform => {
            let m = extent[0].max(extent[1]).max(extent[2]);
            [m; 3]
        }
    };
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for a in 0..3 {
                if extent[a] > 0.0 {
                    // min() guards the last ulp of rounding above 1
                    q[a] = ((p[a] - lo[a]) / scale[a]).min(1.0);
                }
            }
            q
        })
        .collect();
    Ok(PointCloud {
        points,
        frame: Frame::Normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut pts: Vec<Point3>) -> Vec<Point3> {
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts
    }

    #[test]
    fn lift_single_pixel() {
        let mut vals = vec![0.0; 4];
        vals[0] = 0.5;
        let depth = DepthMap::new(2, 2, vals).unwrap();
        let cloud = lift_depth(&depth, &Mask::filled(2, 2, true), 1.0).unwrap();
        assert_eq!(cloud.points(), &[[0.0, 0.0, 0.5]]);
        assert_eq!(cloud.frame(), Frame::PixelLift);
    }

    #[test]
    fn lift_full_grid() {
        let depth = DepthMap::new(2, 2, vec![1.0; 4]).unwrap();
        let cloud = lift_depth(&depth, &Mask::filled(2, 2, true), 1.0).unwrap();
        assert_eq!(
            sorted(cloud.into_points()),
            sorted(vec![
                [0.0, 0.0, 1.0],
                [1.0, 0.0, 1.0],
                [0.0, 1.0, 1.0],
                [1.0, 1.0, 1.0]
            ])
        );
    }

    #[test]
    fn lift_errors() {
        let depth = DepthMap::new(2, 1, vec![0.0, -1.0]).unwrap();
        let mask = Mask::new(2, 1, vec![true, false]).unwrap();
        assert!(matches!(
            lift_depth(&depth, &mask, 1.0),
            Err(Error::EmptyForeground)
        ));
        let mask = Mask::filled(2, 1, true);
        assert!(matches!(
            lift_depth(&depth, &mask, 1.0),
            Err(Error::NegativeDepth { u: 1, v: 0, .. })
        ));
        assert!(matches!(
            lift_depth(&depth, &Mask::filled(1, 2, true), 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pinhole_formula() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let mut vals = vec![0.0; 16];
        vals[3 * 4 + 2] = 2.0;
        let depth = DepthMap::new(4, 4, vals).unwrap();
        let cloud = backproject_pinhole(&depth, &Mask::filled(4, 4, true), &k).unwrap();
        assert_eq!(cloud.points(), &[[4.0, 6.0, 2.0]]);
    }

    #[test]
    fn pinhole_principal_point() {
        let k = CameraIntrinsics::new(3.0, 5.0, 1.0, 2.0, 4, 4).unwrap();
        let mut vals = vec![0.0; 16];
        vals[2 * 4 + 1] = 7.25;
        let depth = DepthMap::new(4, 4, vals).unwrap();
        let cloud = backproject_pinhole(&depth, &Mask::filled(4, 4, true), &k).unwrap();
        assert_eq!(cloud.points(), &[[0.0, 0.0, 7.25]]);
    }

    #[test]
    fn subsample_edge_cases() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]], Frame::Metric).unwrap();
        assert_eq!(subsample(&cloud, 1, 9).unwrap(), cloud);
        assert!(matches!(
            subsample(&cloud, 2, 9),
            Err(Error::NotEnoughPoints {
                requested: 2,
                available: 1
            })
        ));

        let pts: Vec<Point3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let cloud = PointCloud::new(pts.clone(), Frame::Metric).unwrap();
        let all = subsample(&cloud, 10, 3).unwrap();
        assert_eq!(sorted(all.into_points()), pts);
        assert_eq!(subsample(&cloud, 4, 3).unwrap(), subsample(&cloud, 4, 3).unwrap());
    }

    #[test]
    fn normalize_examples() {
        let cloud = PointCloud::new(vec![[0.0; 3], [2.0, 4.0, 8.0]], Frame::Metric).unwrap();
        let per_axis = normalize_unit_cube(&cloud, NormalizeMode::PerAxis).unwrap();
        assert_eq!(per_axis.points(), &[[0.0; 3], [1.0; 3]]);
        assert_eq!(per_axis.frame(), Frame::Normalized);
        let uniform = normalize_unit_cube(&cloud, NormalizeMode::Uniform).unwrap();
        assert_eq!(uniform.points(), &[[0.0; 3], [0.25, 0.5, 1.0]]);
        let again = normalize_unit_cube(&per_axis, NormalizeMode::PerAxis).unwrap();
        assert_eq!(again.points(), per_axis.points());
    }

    #[test]
    fn normalize_flat_axis() {
        let cloud =
            PointCloud::new(vec![[1.0, 5.0, 2.0], [3.0, 5.0, 2.0]], Frame::Metric).unwrap();
        let n = normalize_unit_cube(&cloud, NormalizeMode::PerAxis).unwrap();
        assert_eq!(n.points(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }
}
