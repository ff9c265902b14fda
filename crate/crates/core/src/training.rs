//! Stage 1 inputs, the regression head, the L1 training loop and checkpoints.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ImageEncoderConfig, PointEncoderConfig};
use crate::geometry::{lift_depth, normalize_unit_cube, subsample, NormalizeMode, PointCloud};
use crate::rng::{self, mix_seed};
use crate::synth::{perturb_depth, DatasetManifest, SampleRecord, Split};
use crate::tensor::{seeded_init, Adam, InitScheme, Optimizer, ParameterSet, Sgd, Tape, Tensor, Var};

macro_rules! named_enum {
    ($name:ident, $what:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Unknown {
                        what: $what,
                        name: s.to_string(),
                        valid: [$($text),+].join(", "),
                    }),
                }
            }
        }
    };
}

named_enum!(Attribute, "attribute", { Volume => "volume", Energy => "energy" });
named_enum!(Modality, "modality", { PcOnly => "pc_only", PcRgb => "pc_rgb" });
named_enum!(Variant, "variant", {
    Gtpc => "gtpc",
    GtpcNormalized => "gtpc_normalized",
    DepthLift => "depth_lift",
});
named_enum!(OptimizerKind, "optimizer", { Adam => "adam", Sgd => "sgd" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub attribute: Attribute,
    pub modality: Modality,
    pub variant: Variant,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub seed: u64,
    /// Feature width C of each branch.
    pub feature_dim: usize,
    pub k: usize,
    /// Points per cloud fed to the point encoder.
    pub points: usize,
    pub point_mlp: Vec<usize>,
    /// Side of the square encoder input; rendered images are box-filtered down to it.
    pub image_size: usize,
    pub conv_filters: Vec<usize>,
    /// Relative depth noise for the depth-lift variant.
    pub depth_noise_sigma: f64,
    pub pixel_scale: f64,
    pub normalize_mode: NormalizeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            attribute: Attribute::Volume,
            modality: Modality::PcRgb,
            variant: Variant::Gtpc,
            batch_size: 16,
            epochs: 60,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            seed: 0,
            feature_dim: 64,
            k: 16,
            points: crate::geometry::DEFAULT_SAMPLE_COUNT,
            point_mlp: vec![32, 64],
            image_size: 64,
            conv_filters: vec![8, 16, 32],
            depth_noise_sigma: 0.05,
            pixel_scale: 1.0,
            normalize_mode: NormalizeMode::PerAxis,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.depth_noise_sigma.is_finite() && self.depth_noise_sigma >= 0.0) {
            return bad(format!("depth_noise_sigma must be >= 0, got {}", self.depth_noise_sigma));
        }
        if !(self.pixel_scale.is_finite() && self.pixel_scale > 0.0) {
            return bad(format!("pixel_scale must be positive, got {}", self.pixel_scale));
        }
        self.point_encoder().validate()?;
        if self.modality == Modality::PcRgb {
            self.image_encoder().validate()?;
        }
        Ok(())
    }

    pub fn image_encoder(&self) -> ImageEncoderConfig {
        let mut cfg = ImageEncoderConfig::with_input(self.image_size, self.image_size, self.feature_dim);
        cfg.convs = self
            .conv_filters
            .iter()
            .map(|&filters| crate::features::ConvLayer {
                filters,
                kernel: 3,
                stride: 1,
            })
            .collect();
        cfg
    }

    pub fn point_encoder(&self) -> PointEncoderConfig {
        PointEncoderConfig {
            points: self.points,
            k: self.k,
            mlp: self.point_mlp.clone(),
            feature_dim: self.feature_dim,
        }
    }

    /// Width of the fused feature: C, or 2C with the image branch.
    pub fn head_dim(&self) -> usize {
        match self.modality {
            Modality::PcOnly => self.feature_dim,
            Modality::PcRgb => 2 * self.feature_dim,
        }
    }
}

/// Linear map from a feature vector to a portion estimate.
///
/// `output_scale` multiplies the affine output; with the default of 1 the
/// prediction is exactly `w.f + b`. Training sets it to the mean training
/// target so the learned weights are order-one numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    pub weights: Tensor,
    pub bias: f64,
    pub output_scale: f64,
}

impl RegressionHead {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[dim]),
            bias: 0.0,
            output_scale: 1.0,
        }
    }
}

pub fn predict_portion(feature: &Tensor, head: &RegressionHead) -> Result<f64> {
    if feature.shape() != head.weights.shape() {
        return Err(Error::Shape {
            op: "predict_portion",
            lhs: feature.shape().to_vec(),
            rhs: head.weights.shape().to_vec(),
        });
    }
    let dot: f64 = feature.data().iter().zip(head.weights.data()).map(|(a, b)| a * b).sum();
    Ok(head.output_scale * (dot + head.bias))
}

/// Precomputed network inputs for one sample; they depend only on the sample
/// files and the variant, never on the target attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInputs {
    pub id: u32,
    /// `[3, S, S]` image, present for the RGB modality.
    pub image: Option<Vec<f64>>,
    /// `[n, 3 + 3k]` local point features.
    pub points: Vec<f64>,
    pub volume: f64,
    pub energy: f64,
}

impl SampleInputs {
    pub fn target(&self, attribute: Attribute) -> f64 {
        match attribute {
            Attribute::Volume => self.volume,
            Attribute::Energy => self.energy,
        }
    }
}

/// Stage 1: the point cloud a variant feeds to the point encoder.
pub fn stage1_cloud(sample: &SampleRecord, manifest_seed: u64, config: &TrainConfig) -> Result<PointCloud> {
    let n = config.points;
    let fit = |cloud: PointCloud, stream: u64| -> Result<PointCloud> {
        if cloud.len() == n {
            Ok(cloud)
        } else {
            subsample(&cloud, n, mix_seed(mix_seed(manifest_seed, sample.id as u64), stream))
        }
    };
    match config.variant {
        Variant::Gtpc => fit(sample.gtpc.clone(), 1),
        Variant::GtpcNormalized => fit(normalize_unit_cube(&sample.gtpc, config.normalize_mode)?, 1),
        Variant::DepthLift => {
            let seed = mix_seed(manifest_seed, sample.id as u64);
            let depth = perturb_depth(&sample.depth, config.depth_noise_sigma, seed)?;
            let lifted = lift_depth(&depth, &sample.mask, config.pixel_scale)?;
            let normalized = normalize_unit_cube(&lifted, config.normalize_mode)?;
            subsample(&normalized, n, mix_seed(seed, 2))
        }
    }
}

/// Box-filters the rendered (already masked) image down to the encoder size.
pub fn stage1_image(sample: &SampleRecord, config: &TrainConfig) -> Result<Vec<f64>> {
    let (w, h, s) = (sample.image.width(), sample.image.height(), config.image_size);
    if w != h || s == 0 || w % s != 0 {
        return Err(Error::Config(format!(
            "image_size {s} must evenly divide the {w}x{h} rendering"
        )));
    }
    let small = sample.image.downsample(w / s)?;
    config.image_encoder().prepare(&small)
}

pub fn prepare_sample(sample: &SampleRecord, manifest_seed: u64, config: &TrainConfig) -> Result<SampleInputs> {
    let cloud = stage1_cloud(sample, manifest_seed, config)?;
    let points = config.point_encoder().prepare(&cloud)?;
    let image = match config.modality {
        Modality::PcOnly => None,
        Modality::PcRgb => Some(stage1_image(sample, config)?),
    };
    Ok(SampleInputs {
        id: sample.id,
        image,
        points,
        volume: sample.volume,
        energy: sample.energy,
    })
}

/// Loads and prepares every sample of `split`, ordered by id.
pub fn prepare_split(manifest: &DatasetManifest, split: Split, config: &TrainConfig) -> Result<Vec<SampleInputs>> {
    let mut ids: Vec<u32> = manifest.split(split).map(|e| e.id).collect();
    ids.sort_unstable();
    ids.par_iter()
        .map(|&id| prepare_sample(&manifest.load_sample(id)?, manifest.seed, config))
        .collect()
}

/// Encoder-ready images of every sample of `split`, ordered by id.
pub fn prepare_images(manifest: &DatasetManifest, split: Split, config: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    let mut ids: Vec<u32> = manifest.split(split).map(|e| e.id).collect();
    ids.sort_unstable();
    ids.par_iter()
        .map(|&id| stage1_image(&manifest.load_sample(id)?, config))
        .collect()
}

/// Encoders plus head for one training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub params: ParameterSet,
    pub output_scale: f64,
}

impl Model {
    /// Encoders seeded from `config.seed`, head at zero.
    pub fn new(config: &TrainConfig, output_scale: f64) -> Result<Self> {
        config.validate()?;
        if !(output_scale.is_finite() && output_scale > 0.0) {
            return Err(Error::Config(format!("output scale must be positive, got {output_scale}")));
        }
        let mut params = ParameterSet::new();
        let seed = mix_seed(config.seed, 0x1417);
        if config.modality == Modality::PcRgb {
            config.image_encoder().init_params(&mut params, seed)?;
        }
        config.point_encoder().init_params(&mut params, seed)?;
        params.insert("head.weight", seeded_init(&[config.head_dim()], InitScheme::Zeros, 0))?;
        params.insert("head.bias", seeded_init(&[], InitScheme::Zeros, 0))?;
        Ok(Self {
            config: config.clone(),
            params,
            output_scale,
        })
    }

    pub fn head(&self) -> RegressionHead {
        RegressionHead {
            weights: self.params.get("head.weight").expect("head present").clone(),
            bias: self.params.get("head.bias").expect("head present").data()[0],
            output_scale: self.output_scale,
        }
    }

    /// Records predictions `[B]` for a batch on `tape`.
    pub fn forward_batch(&self, tape: &mut Tape, batch: &[&SampleInputs]) -> Result<Var> {
        let cfg = &self.config;
        let b = batch.len();
        let pcfg = cfg.point_encoder();
        let row = pcfg.points * pcfg.row_len();
        let points = tape.constant_with(vec![b, pcfg.points, pcfg.row_len()], |dst| {
            for (chunk, s) in dst.chunks_exact_mut(row).zip(batch) {
                chunk.copy_from_slice(&s.points);
            }
        })?;
        if batch.iter().any(|s| s.points.len() != row) {
            return Err(Error::Dimension(format!("point inputs must hold {row} values")));
        }
        let f_points = pcfg.forward(tape, &self.params, points)?;
        let fused = match cfg.modality {
            Modality::PcOnly => f_points,
            Modality::PcRgb => {
                let icfg = cfg.image_encoder();
                let len = 3 * icfg.height * icfg.width;
                if batch.iter().any(|s| s.image.as_ref().map(Vec::len) != Some(len)) {
                    return Err(Error::Dimension(format!("image inputs must hold {len} values")));
                }
                let images = tape.constant_with(vec![b, 3, icfg.height, icfg.width], |dst| {
                    for (chunk, s) in dst.chunks_exact_mut(len).zip(batch) {
                        chunk.copy_from_slice(s.image.as_deref().expect("checked"));
                    }
                })?;
                let f_image = icfg.forward(tape, &self.params, images)?;
                tape.concat(f_image, f_points, 1)?
            }
        };
        let w = tape.param(&self.params, "head.weight")?;
        let w = tape.reshape(w, vec![cfg.head_dim(), 1])?;
        let bias = tape.param(&self.params, "head.bias")?;
        let y = tape.matmul(fused, w)?;
        let y = tape.reshape(y, vec![b])?;
        let y = tape.add(y, bias)?;
        tape.scale(y, self.output_scale)
    }

    /// Predictions for prepared samples, in input order.
    pub fn predict(&self, samples: &[SampleInputs]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(8) {
            tape.reset();
            let refs: Vec<&SampleInputs> = chunk.iter().collect();
            let y = self.forward_batch(&mut tape, &refs)?;
            out.extend_from_slice(tape.value(y));
        }
        Ok(out)
    }
}

/// Stage 1 to 3 for a single loaded sample.
pub fn forward_pipeline(sample: &SampleRecord, manifest_seed: u64, model: &Model) -> Result<f64> {
    let inputs = prepare_sample(sample, manifest_seed, &model.config)?;
    Ok(model.predict(std::slice::from_ref(&inputs))?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Mean training L1 per epoch.
    pub history: Vec<f64>,
}

/// Trains on the manifest's train split.
pub fn train(manifest: &DatasetManifest, config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    let inputs = prepare_split(manifest, Split::Train, config)?;
    train_prepared(&inputs, config)
}

/// Mean of the training targets; the output scale of a fresh model.
pub fn target_mean(inputs: &[SampleInputs], attribute: Attribute) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Invalid("no training samples".into()));
    }
    Ok(inputs.iter().map(|s| s.target(attribute)).sum::<f64>() / inputs.len() as f64)
}

/// Trains on already prepared inputs (which must match `config`).
pub fn train_prepared(inputs: &[SampleInputs], config: &TrainConfig) -> Result<Checkpoint> {
    let scale = target_mean(inputs, config.attribute)?;
    let mut model = Model::new(config, scale)?;
    let mut optimizer: Box<dyn Optimizer> = match config.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(config.lr)),
        OptimizerKind::Sgd => Box::new(Sgd::new(config.lr)),
    };
    let mut shuffle_rng = rng::seeded(mix_seed(config.seed, 0x5348));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut tape = Tape::new();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch: Vec<&SampleInputs> = chunk.iter().map(|&i| &inputs[i]).collect();
            batch.sort_by_key(|s| s.id);
            let loss = train_step(&mut model, optimizer.as_mut(), &mut tape, &batch).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!(
                    "epoch {epoch}, batch {bi} (samples {:?}): {msg}",
                    batch.iter().map(|s| s.id).collect::<Vec<_>>()
                )),
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        history.push(total / inputs.len() as f64);
    }
    Ok(Checkpoint { model, history })
}

/// One optimizer step on `batch`; returns the batch L1 loss.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut dyn Optimizer,
    tape: &mut Tape,
    batch: &[&SampleInputs],
) -> Result<f64> {
    tape.reset();
    let pred = model.forward_batch(tape, batch)?;
    let attribute = model.config.attribute;
    let targets: Vec<f64> = batch.iter().map(|s| s.target(attribute)).collect();
    let target = tape.constant(vec![batch.len()], targets)?;
    let loss = tape.l1_loss(pred, target)?;
    let value = tape.value(loss)[0];
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss is {value}")));
    }
    tape.backward(loss)?;
    model.params.zero_grad();
    tape.accumulate_param_grads(&mut model.params)?;
    optimizer.step(&mut model.params)?;
    Ok(value)
}

// ---------------------------------------------------------------- checkpoint

const MAGIC: &[u8; 8] = b"MFPCKPT1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    output_scale: f64,
    history: Vec<f64>,
    params: Vec<ParamEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, t) in ckpt.model.params.iter() {
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 4 * t.numel();
    }
    let header = Header {
        config: ckpt.model.config.clone(),
        output_scale: ckpt.model.output_scale,
        history: ckpt.history.clone(),
        params: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in ckpt.model.params.iter() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |msg: String| Error::format(path, msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint (bad magic bytes)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fail(format!("header length {len} runs past the end of the file")))?;
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| fail(format!("invalid header: {e}")))?;
    let payload = &bytes[payload_start..];
    header.config.validate()?;
    let mut model = Model::new(&header.config, header.output_scale)?;
    let mut expected_offset = 0;
    if header.params.len() != model.params.len() {
        return Err(fail(format!(
            "header lists {} parameters, the configuration needs {}",
            header.params.len(),
            model.params.len()
        )));
    }
    for entry in &header.params {
        let want = model
            .params
            .get(&entry.name)
            .ok_or_else(|| fail(format!("unexpected parameter `{}`", entry.name)))?;
        if want.shape() != entry.shape.as_slice() {
            return Err(fail(format!(
                "parameter `{}` has shape {:?}, the configuration needs {:?}",
                entry.name,
                entry.shape,
                want.shape()
            )));
        }
        if entry.offset != expected_offset {
            return Err(fail(format!(
                "parameter `{}` at byte offset {}, expected {expected_offset}",
                entry.name, entry.offset
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * numel;
        if end > payload.len() {
            return Err(fail(format!(
                "payload holds {} bytes but parameter `{}` needs bytes {}..{end}",
                payload.len(),
                entry.name,
                entry.offset
            )));
        }
        let data = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        model.params.set_data(&entry.name, data)?;
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(fail(format!(
            "payload holds {} bytes, header accounts for {expected_offset}",
            payload.len()
        )));
    }
    Ok(Checkpoint {
        model,
        history: header.history,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    crate::formats::write_file(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = crate::formats::read_file(path)?;
    decode_checkpoint(&bytes, path)
}

/// `epoch,train_l1` rows, epochs counted from 0.
pub fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,train_l1\n");
    for (i, v) in history.iter().enumerate() {
        writeln!(out, "{i},{v}").expect("string write");
    }
    out
}

pub fn write_history_csv(history: &[f64], path: &Path) -> Result<()> {
    crate::formats::write_file(path, history_csv(history).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::random_tensor;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            points: 16,
            k: 4,
            point_mlp: vec![6, 5],
            image_size: 8,
            conv_filters: vec![2, 3],
            feature_dim: 4,
            batch_size: 2,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    fn tiny_inputs(config: &TrainConfig, n: usize, seed: u64) -> Vec<SampleInputs> {
        let row = config.point_encoder().row_len();
        (0..n)
            .map(|i| {
                let s = mix_seed(seed, i as u64);
                SampleInputs {
                    id: i as u32,
                    image: Some(random_tensor(&[3 * 8 * 8], s).data().to_vec()),
                    points: random_tensor(&[config.points * row], s + 1).data().to_vec(),
                    volume: 50.0 + 10.0 * i as f64,
                    energy: 80.0 + 3.0 * i as f64,
                }
            })
            .collect()
    }

    #[test]
    fn names_round_trip() {
        for &v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("pc_rgb".parse::<Modality>().unwrap(), Modality::PcRgb);
        let e = "mesh".parse::<Variant>().unwrap_err();
        assert!(matches!(e, Error::Unknown { ref valid, .. } if valid == "gtpc, gtpc_normalized, depth_lift"));
    }

    #[test]
    fn predict_portion_examples() {
        let f = Tensor::new(vec![3], vec![0.5, -2.0, 4.0]).unwrap();
        let mut head = RegressionHead::zeros(3);
        head.bias = 7.0;
        assert_eq!(predict_portion(&f, &head).unwrap(), 7.0);
        head.bias = 0.0;
        head.weights = Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(predict_portion(&f, &head).unwrap(), 0.5);
        assert!(matches!(
            predict_portion(&Tensor::zeros(&[4]), &head),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn head_gradient_is_the_feature() {
        let f = random_tensor(&[1, 5], 3);
        let mut params = ParameterSet::new();
        params.insert("w", random_tensor(&[5, 1], 4)).unwrap();
        let mut tape = Tape::new();
        let fv = tape.leaf(&f);
        let w = tape.param(&params, "w").unwrap();
        let y = tape.matmul(fv, w).unwrap();
        let y = tape.sum(y).unwrap();
        tape.backward(y).unwrap();
        tape.accumulate_param_grads(&mut params).unwrap();
        assert_eq!(params.get("w").unwrap().grad().unwrap(), f.data());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { lr: -1.0, ..TrainConfig::default() },
            TrainConfig { k: 1024, ..TrainConfig::default() },
            TrainConfig { image_size: 2, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        // pc_only never builds the image branch
        let cfg = TrainConfig { image_size: 2, modality: Modality::PcOnly, ..TrainConfig::default() };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn fresh_model_predicts_zero_and_first_loss_is_mean_target() {
        let cfg = tiny_config();
        let inputs = tiny_inputs(&cfg, 3, 1);
        let mut model = Model::new(&cfg, 60.0).unwrap();
        assert!(model.predict(&inputs).unwrap().iter().all(|&p| p == 0.0));
        let mut opt = Adam::new(cfg.lr);
        let batch: Vec<&SampleInputs> = inputs.iter().collect();
        let loss = train_step(&mut model, &mut opt, &mut Tape::new(), &batch).unwrap();
        assert_eq!(loss, (50.0 + 60.0 + 70.0) / 3.0);
    }

    #[test]
    fn non_finite_target_names_the_batch() {
        let cfg = tiny_config();
        let mut inputs = tiny_inputs(&cfg, 4, 2);
        inputs[3].points[5] = f64::NAN;
        let e = train_prepared(&inputs, &cfg).unwrap_err();
        assert!(matches!(e, Error::Numerical(ref m) if m.contains("epoch 0") && m.contains('3')), "{e}");
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let cfg = tiny_config();
        let inputs = tiny_inputs(&cfg, 4, 3);
        let ckpt = train_prepared(&inputs, &cfg).unwrap();
        let bytes = encode_checkpoint(&ckpt);
        let path = Path::new("mem.ckpt");
        let back = decode_checkpoint(&bytes, path).unwrap();
        assert_eq!(back, ckpt);
        let a = ckpt.model.predict(&inputs).unwrap();
        let b = back.model.predict(&inputs).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(encode_checkpoint(&back), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let e = decode_checkpoint(&bad, path).unwrap_err();
        assert!(matches!(e, Error::Format { ref msg, .. } if msg.contains("magic")), "{e}");

        let e = decode_checkpoint(&bytes[..bytes.len() - 4], path).unwrap_err();
        assert!(matches!(e, Error::Format { ref msg, .. } if msg.contains("payload")), "{e}");

        let e = decode_checkpoint(&bytes[..20], path).unwrap_err();
        assert!(matches!(e, Error::Format { ref msg, .. } if msg.contains("header length")), "{e}");

        // declare the head one element wider than the configuration allows
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
        let wider = header.replace("\"name\":\"head.weight\",\"shape\":[8]", "\"name\":\"head.weight\",\"shape\":[9]");
        assert_ne!(wider, header);
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(wider.len() as u64).to_le_bytes());
        forged.extend_from_slice(wider.as_bytes());
        forged.extend_from_slice(&bytes[16 + len..]);
        let e = decode_checkpoint(&forged, path).unwrap_err();
        assert!(matches!(e, Error::Format { ref msg, .. } if msg.contains("shape")), "{e}");
    }

    #[test]
    fn history_csv_layout() {
        assert_eq!(history_csv(&[3.5, 1.25]), "epoch,train_l1\n0,3.5\n1,1.25\n");
    }
}
