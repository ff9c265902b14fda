//! The two encoders and feature fusion.
//!
//! The image encoder is a small conv stack (conv, relu, 2x2 max-pool per
//! layer) followed by a fully connected layer. The point encoder builds, for
//! every point, its own coordinates plus the offsets to its k nearest
//! neighbors, runs a shared MLP over those rows, max-pools over points and
//! projects to the feature width.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Image, Point3, PointCloud};
use crate::rng::{mix_seed, named_seed};
use crate::tensor::gradcheck::{self, check_param_gradients, GradcheckReport};
use crate::tensor::{seeded_init, InitScheme, ParameterSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEncoderConfig {
    pub height: usize,
    pub width: usize,
    pub convs: Vec<ConvLayer>,
    pub feature_dim: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self::with_input(64, 64, 64)
    }
}

impl ImageEncoderConfig {
    /// The default 8/16/32-filter stack on an input of the given size.
    pub fn with_input(height: usize, width: usize, feature_dim: usize) -> Self {
        let conv = |filters| ConvLayer {
            filters,
            kernel: 3,
            stride: 1,
        };
        Self {
            height,
            width,
            convs: vec![conv(8), conv(16), conv(32)],
            feature_dim,
        }
    }

    /// `(channels, height, width)` after each layer, input first.
    fn layer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shapes = vec![[3, self.height, self.width]];
        for (i, l) in self.convs.iter().enumerate() {
            let [_, h, w] = shapes[shapes.len() - 1];
            let pad = l.kernel / 2;
            if l.filters == 0 || l.kernel == 0 || l.stride == 0 || h + 2 * pad < l.kernel || w + 2 * pad < l.kernel
            {
                return Err(Error::Config(format!("conv layer {i} is invalid for a {h}x{w} input")));
            }
            let (ch, cw) = ((h + 2 * pad - l.kernel) / l.stride + 1, (w + 2 * pad - l.kernel) / l.stride + 1);
            if ch < 2 || cw < 2 {
                return Err(Error::Config(format!(
                    "conv layer {i} output {ch}x{cw} is too small to pool"
                )));
            }
            shapes.push([l.filters, ch / 2, cw / 2]);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        self.layer_shapes().map(|_| ())
    }

    fn flat_len(&self) -> Result<usize> {
        let shapes = self.layer_shapes()?;
        Ok(shapes[shapes.len() - 1].iter().product())
    }

    pub fn init_params(&self, params: &mut ParameterSet, seed: u64) -> Result<()> {
        let shapes = self.layer_shapes()?;
        for (i, l) in self.convs.iter().enumerate() {
            let name = format!("image.conv{i}.weight");
            let shape = [l.filters, shapes[i][0], l.kernel, l.kernel];
            params.insert(&name, seeded_init(&shape, InitScheme::UniformFanIn, named_seed(seed, &name)))?;
        }
        let flat = self.flat_len()?;
        params.insert(
            "image.fc.weight",
            seeded_init(&[flat, self.feature_dim], InitScheme::UniformFanIn, named_seed(seed, "image.fc.weight")),
        )?;
        params.insert(
            "image.fc.bias",
            seeded_init(&[self.feature_dim], InitScheme::Zeros, 0),
        )?;
        Ok(())
    }

    /// `input` is `[B, 3, H, W]`; returns `[B, C]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, input: Var) -> Result<Var> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 4 || shape[1..] != [3, self.height, self.width] {
            return Err(Error::Dimension(format!(
                "image encoder expects [B, 3, {}, {}], got {shape:?}",
                self.height, self.width
            )));
        }
        let batch = shape[0];
        let mut x = input;
        for (i, l) in self.convs.iter().enumerate() {
            let k = tape.param(params, &format!("image.conv{i}.weight"))?;
            x = tape.conv2d(x, k, l.stride, l.kernel / 2)?;
            x = tape.relu(x)?;
            x = tape.max_pool2d(x)?;
        }
        let flat = self.flat_len()?;
        let x = tape.reshape(x, vec![batch, flat])?;
        let w = tape.param(params, "image.fc.weight")?;
        let b = tape.param(params, "image.fc.bias")?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    /// Flattened `[3, H, W]` input for one image.
    pub fn prepare(&self, image: &Image) -> Result<Vec<f64>> {
        if image.height() != self.height || image.width() != self.width {
            return Err(Error::Dimension(format!(
                "image encoder expects {}x{} (w x h) input, got {}x{}",
                self.width,
                self.height,
                image.width(),
                image.height()
            )));
        }
        Ok(image.to_chw())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointEncoderConfig {
    pub points: usize,
    pub k: usize,
    pub mlp: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for PointEncoderConfig {
    fn default() -> Self {
        Self {
            points: crate::geometry::DEFAULT_SAMPLE_COUNT,
            k: 16,
            mlp: vec![32, 64],
            feature_dim: 64,
        }
    }
}

impl PointEncoderConfig {
    /// Width of one per-point input row: xyz plus k neighbor offsets.
    pub fn row_len(&self) -> usize {
        3 + 3 * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k >= self.points {
            return Err(Error::Config(format!(
                "k must satisfy 1 <= k < n, got k={} n={}",
                self.k, self.points
            )));
        }
        if self.feature_dim == 0 || self.mlp.contains(&0) {
            return Err(Error::Config("feature and MLP widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn init_params(&self, params: &mut ParameterSet, seed: u64) -> Result<()> {
        self.validate()?;
        let mut width = self.row_len();
        for (i, &out) in self.mlp.iter().enumerate() {
            let name = format!("points.mlp{i}.weight");
            params.insert(&name, seeded_init(&[width, out], InitScheme::UniformFanIn, named_seed(seed, &name)))?;
            params.insert(format!("points.mlp{i}.bias"), seeded_init(&[out], InitScheme::Zeros, 0))?;
            width = out;
        }
        params.insert(
            "points.fc.weight",
            seeded_init(&[width, self.feature_dim], InitScheme::UniformFanIn, named_seed(seed, "points.fc.weight")),
        )?;
        params.insert("points.fc.bias", seeded_init(&[self.feature_dim], InitScheme::Zeros, 0))?;
        Ok(())
    }

    /// `input` is `[B, n, 3 + 3k]` (see [`local_features`]); returns `[B, C]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParameterSet, input: Var) -> Result<Var> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 3 || shape[1] != self.points || shape[2] != self.row_len() {
            return Err(Error::Dimension(format!(
                "point encoder expects [B, {}, {}], got {shape:?}",
                self.points,
                self.row_len()
            )));
        }
        let batch = shape[0];
        let mut x = tape.reshape(input, vec![batch * self.points, self.row_len()])?;
        for i in 0..self.mlp.len() {
            let w = tape.param(params, &format!("points.mlp{i}.weight"))?;
            let b = tape.param(params, &format!("points.mlp{i}.bias"))?;
            x = tape.matmul(x, w)?;
            x = tape.add(x, b)?;
            x = tape.relu(x)?;
        }
        let width = self.mlp.last().copied().unwrap_or(self.row_len());
        let x = tape.reshape(x, vec![batch, self.points, width])?;
        let (pooled, _) = tape.max_over_axis(x, 1)?;
        let w = tape.param(params, "points.fc.weight")?;
        let b = tape.param(params, "points.fc.bias")?;
        let y = tape.matmul(pooled, w)?;
        tape.add(y, b)
    }

    /// Flattened `[n, 3 + 3k]` input for one cloud.
    pub fn prepare(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        if cloud.len() != self.points {
            return Err(Error::NotEnoughPoints {
                requested: self.points,
                available: cloud.len(),
            });
        }
        local_features(cloud, self.k)
    }
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn knn_by<F>(cloud: &PointCloud, k: usize, cmp: F) -> Result<Vec<Vec<usize>>>
where
    F: Fn(&(f64, usize), &(f64, usize)) -> Ordering,
{
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::Invalid(format!("k must satisfy 1 <= k < n, got k={k} n={n}")));
    }
    let pts = cloud.points();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let mut table = Vec::with_capacity(n);
    for (i, p) in pts.iter().enumerate() {
        cand.clear();
        cand.extend(pts.iter().enumerate().filter(|(j, _)| *j != i).map(|(j, q)| (dist2(p, q), j)));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, &cmp);
        }
        let nearest = &mut cand[..k];
        nearest.sort_unstable_by(&cmp);
        table.push(nearest.iter().map(|&(_, j)| j).collect());
    }
    Ok(table)
}

/// For every point, the indices of its `k` nearest other points by
/// Euclidean distance, nearest first; equal distances go to the lower index.
pub fn knn_indices(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    knn_by(cloud, k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
}

/// Like [`knn_indices`] but breaks distance ties by neighbor coordinates, so
/// the neighbor list of a point does not depend on the input order.
fn knn_order_free(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let pts = cloud.points();
    knn_by(cloud, k, |a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            let (p, q) = (&pts[a.1], &pts[b.1]);
            p[0].total_cmp(&q[0])
                .then(p[1].total_cmp(&q[1]))
                .then(p[2].total_cmp(&q[2]))
        })
    })
}

/// Rows of `[x, y, z, n1 - p, ..., nk - p]`, one per point, flattened.
pub fn local_features(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    let table = knn_order_free(cloud, k)?;
    let pts = cloud.points();
    let mut out = Vec::with_capacity(pts.len() * (3 + 3 * k));
    for (p, nbrs) in pts.iter().zip(&table) {
        out.extend_from_slice(p);
        for &j in nbrs {
            let q = pts[j];
            out.extend_from_slice(&[q[0] - p[0], q[1] - p[1], q[2] - p[2]]);
        }
    }
    Ok(out)
}

/// Image feature `[C]` for one image.
pub fn encode_image(image: &Image, params: &ParameterSet, config: &ImageEncoderConfig) -> Result<Tensor> {
    let data = config.prepare(image)?;
    let mut tape = Tape::new();
    let x = tape.constant(vec![1, 3, config.height, config.width], data)?;
    let y = config.forward(&mut tape, params, x)?;
    Tensor::new(vec![config.feature_dim], tape.value(y).to_vec())
}

/// Point feature `[C]` for one cloud.
pub fn encode_points(cloud: &PointCloud, params: &ParameterSet, config: &PointEncoderConfig) -> Result<Tensor> {
    let data = config.prepare(cloud)?;
    let mut tape = Tape::new();
    let x = tape.constant(vec![1, config.points, config.row_len()], data)?;
    let y = config.forward(&mut tape, params, x)?;
    Tensor::new(vec![config.feature_dim], tape.value(y).to_vec())
}

/// `f_image ⊕ f_points`, image first.
pub fn concat_features(image: &Tensor, points: &Tensor) -> Result<Tensor> {
    if image.shape().len() != 1 || image.shape() != points.shape() {
        return Err(Error::Shape {
            op: "concat_features",
            lhs: image.shape().to_vec(),
            rhs: points.shape().to_vec(),
        });
    }
    let mut data = image.data().to_vec();
    data.extend_from_slice(points.data());
    Tensor::from_vec(data)
}

/// Finite-difference step for the composed encoders; smaller than the
/// per-op step so perturbations rarely cross a relu or max-pool kink.
pub const ENCODER_FD_STEP: f64 = 1e-6;
pub const ENCODER_FD_TOLERANCE: f64 = 1e-3;

/// Finite-difference checks of both encoders (8x8 image, 16-point cloud)
/// with respect to every parameter.
pub fn encoder_gradchecks(seed: u64) -> Result<Vec<GradcheckReport>> {
    let icfg = ImageEncoderConfig {
        height: 8,
        width: 8,
        convs: [2, 3, 4]
            .map(|filters| ConvLayer {
                filters,
                kernel: 3,
                stride: 1,
            })
            .to_vec(),
        feature_dim: 3,
    };
    let mut params = ParameterSet::new();
    icfg.init_params(&mut params, mix_seed(seed, 1))?;
    randomize_zero_params(&mut params, mix_seed(seed, 2))?;
    let image = gradcheck::random_tensor(&[2, 3, 8, 8], mix_seed(seed, 3));
    let image_data: Vec<f64> = image.data().iter().map(|v| v.abs()).collect();
    let image_report = check_param_gradients("image_encoder", &params, ENCODER_FD_STEP, ENCODER_FD_TOLERANCE, |t, p| {
        let x = t.constant(vec![2, 3, 8, 8], image_data.clone())?;
        let y = icfg.forward(t, p, x)?;
        gradcheck::weighted_sum(t, y, mix_seed(seed, 4))
    })?;

    let pcfg = PointEncoderConfig {
        points: 16,
        k: 4,
        mlp: vec![6, 5],
        feature_dim: 3,
    };
    let mut params = ParameterSet::new();
    pcfg.init_params(&mut params, mix_seed(seed, 5))?;
    randomize_zero_params(&mut params, mix_seed(seed, 6))?;
    let mut rows = Vec::new();
    for b in 0..2 {
        let pts = gradcheck::random_tensor(&[16, 3], mix_seed(seed, 7 + b));
        let cloud = PointCloud::new(
            pts.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            crate::geometry::Frame::Metric,
        )?;
        rows.extend(pcfg.prepare(&cloud)?);
    }
    let point_report = check_param_gradients("point_encoder", &params, ENCODER_FD_STEP, ENCODER_FD_TOLERANCE, |t, p| {
        let x = t.constant(vec![2, 16, pcfg.row_len()], rows.clone())?;
        let y = pcfg.forward(t, p, x)?;
        gradcheck::weighted_sum(t, y, mix_seed(seed, 9))
    })?;
    Ok(vec![image_report, point_report])
}

/// Gives zero-initialized biases random values so the check exercises them
/// away from the origin.
fn randomize_zero_params(params: &mut ParameterSet, seed: u64) -> Result<()> {
    let names: Vec<String> = params.names().map(String::from).collect();
    for (i, name) in names.iter().enumerate() {
        let t = params.get(name).expect("listed");
        if t.data().iter().all(|&v| v == 0.0) {
            let r = gradcheck::random_tensor(t.shape(), mix_seed(seed, i as u64));
            let scaled = r.data().iter().map(|v| v * 0.1).collect();
            params.set_data(name, scaled)?;
        }
    }
    Ok(())
}
