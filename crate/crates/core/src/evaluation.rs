//! Error metrics, the mean baseline and the ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{DatasetManifest, Split};
use crate::training::{
    prepare_images, prepare_split, train_prepared, Attribute, Checkpoint, Modality, Model, SampleInputs, TrainConfig, Variant,
};

fn check_pair(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Invalid("metrics need at least one prediction".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pair(preds, gts)?;
    Ok(preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).sum::<f64>() / preds.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pair(preds, gts)?;
    if let Some(i) = gts.iter().position(|&g| g == 0.0) {
        return Err(Error::Invalid(format!("MAPE is undefined: ground truth {i} is zero")));
    }
    Ok(100.0 * preds.iter().zip(gts).map(|(p, g)| ((p - g) / g).abs()).sum::<f64>() / preds.len() as f64)
}

/// Always predicts the mean training target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselinePredictor {
    pub constant: f64,
}

impl BaselinePredictor {
    pub fn predict(&self) -> f64 {
        self.constant
    }
}

pub fn fit_baseline(train_targets: &[f64]) -> Result<BaselinePredictor> {
    if train_targets.is_empty() {
        return Err(Error::Invalid("baseline needs at least one training target".into()));
    }
    Ok(BaselinePredictor {
        constant: train_targets.iter().sum::<f64>() / train_targets.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub modality: String,
    pub variant: String,
    pub attribute: Attribute,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
    pub n_test: usize,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl MetricsRow {
    fn ok(modality: &str, variant: &str, attribute: Attribute, preds: &[f64], gts: &[f64]) -> Result<Self> {
        Ok(Self {
            modality: modality.to_string(),
            variant: variant.to_string(),
            attribute,
            mae: Some(mae(preds, gts)?),
            mape: Some(mape(preds, gts)?),
            n_test: gts.len(),
            status: "ok".into(),
        })
    }

    fn failed(modality: Modality, variant: Variant, attribute: Attribute, err: &Error) -> Self {
        Self {
            modality: modality.to_string(),
            variant: variant.to_string(),
            attribute,
            mae: None,
            mape: None,
            n_test: 0,
            status: format!("failed: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// `key=value` form for terminals and scripts.
    pub fn to_kv(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v}"));
        format!(
            "modality={} variant={} attribute={} mae={} mape={} n_test={} status={}",
            self.modality,
            self.variant,
            self.attribute,
            num(self.mae),
            num(self.mape),
            self.n_test,
            if self.is_ok() { "ok" } else { "failed" }
        )
    }
}

pub const CSV_HEADER: &str = "modality,variant,attribute,mae,mape,n_test,status";

pub fn rows_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let num = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        let status = r.status.replace([',', '\n', '"'], " ");
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.modality,
            r.variant,
            r.attribute,
            num(r.mae),
            num(r.mape),
            r.n_test,
            status
        )
        .expect("string write");
    }
    out
}

/// Metrics of `model` over prepared samples.
pub fn evaluate_prepared(model: &Model, inputs: &[SampleInputs]) -> Result<MetricsRow> {
    let preds = model.predict(inputs)?;
    let gts: Vec<f64> = inputs.iter().map(|s| s.target(model.config.attribute)).collect();
    MetricsRow::ok(
        model.config.modality.as_str(),
        model.config.variant.as_str(),
        model.config.attribute,
        &preds,
        &gts,
    )
}

pub fn evaluate(checkpoint: &Checkpoint, manifest: &DatasetManifest, split: Split) -> Result<MetricsRow> {
    let inputs = prepare_split(manifest, split, &checkpoint.model.config)?;
    if inputs.is_empty() {
        return Err(Error::Invalid(format!("the {split:?} split is empty")));
    }
    evaluate_prepared(&checkpoint.model, &inputs)
}

/// Baseline row: the train-split mean scored on `split`.
pub fn evaluate_baseline(manifest: &DatasetManifest, attribute: Attribute, split: Split) -> Result<MetricsRow> {
    let target = |e: &crate::synth::SampleEntry| match attribute {
        Attribute::Volume => e.volume_ml,
        Attribute::Energy => e.energy_kcal,
    };
    let train: Vec<f64> = manifest.split(Split::Train).map(target).collect();
    let gts: Vec<f64> = manifest.split(split).map(target).collect();
    let baseline = fit_baseline(&train)?;
    let preds = vec![baseline.predict(); gts.len()];
    MetricsRow::ok("baseline", "none", attribute, &preds, &gts)
}

/// Every (modality, variant, attribute) cell of the grid, in report order.
pub fn grid() -> Vec<(Modality, Variant, Attribute)> {
    let mut out = Vec::new();
    for &m in Modality::ALL {
        for &v in Variant::ALL {
            for &a in Attribute::ALL {
                out.push((m, v, a));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub train_seed: u64,
    /// Twelve model rows sorted by (modality, variant, attribute), then two
    /// baseline rows.
    pub rows: Vec<MetricsRow>,
}

impl Replicate {
    pub fn row(&self, modality: &str, variant: &str, attribute: Attribute) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.modality == modality && r.variant == variant && r.attribute == attribute)
    }

    fn metric(&self, m: Modality, v: Variant, a: Attribute, pick: fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
        self.row(m.as_str(), v.as_str(), a).filter(|r| r.is_ok()).and_then(pick)
    }

    /// Metric gtpc volume MAPE no worse than the other variants, in both modalities.
    pub fn trend_a(&self) -> bool {
        Modality::ALL.iter().all(|&m| {
            let get = |v| self.metric(m, v, Attribute::Volume, |r| r.mape);
            match (get(Variant::Gtpc), get(Variant::GtpcNormalized), get(Variant::DepthLift)) {
                (Some(g), Some(n), Some(d)) => g <= n && g <= d,
                _ => false,
            }
        })
    }

    /// RGB lowers energy MAPE for every variant.
    pub fn trend_b(&self) -> bool {
        Variant::ALL.iter().all(|&v| {
            let get = |m| self.metric(m, v, Attribute::Energy, |r| r.mape);
            matches!((get(Modality::PcRgb), get(Modality::PcOnly)), (Some(rgb), Some(pc)) if rgb < pc)
        })
    }

    /// Metric gtpc beats normalized gtpc on volume MAE and MAPE, in both modalities.
    pub fn trend_c(&self) -> bool {
        Modality::ALL.iter().all(|&m| {
            [|r: &MetricsRow| r.mae, |r: &MetricsRow| r.mape].iter().all(|&pick| {
                let g = self.metric(m, Variant::Gtpc, Attribute::Volume, pick);
                let n = self.metric(m, Variant::GtpcNormalized, Attribute::Volume, pick);
                matches!((g, n), (Some(g), Some(n)) if g < n)
            })
        })
    }

    /// Every model row has a lower MAPE than its attribute's baseline.
    pub fn beats_baseline(&self) -> bool {
        Attribute::ALL.iter().all(|&a| {
            let Some(base) = self.row("baseline", "none", a).and_then(|r| r.mape) else {
                return false;
            };
            self.rows
                .iter()
                .filter(|r| r.attribute == a && r.modality != "baseline")
                .all(|r| r.is_ok() && r.mape.is_some_and(|m| m < base))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub verdict: String,
    pub holds: usize,
    pub replicates: usize,
    pub required: usize,
}

impl TrendVerdict {
    fn tally(flags: impl Iterator<Item = bool>, required: usize) -> Self {
        let flags: Vec<bool> = flags.collect();
        let holds = flags.iter().filter(|&&f| f).count();
        Self {
            verdict: if holds >= required { "pass" } else { "fail" }.into(),
            holds,
            replicates: flags.len(),
            required,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub dataset_seed: u64,
    pub train_seeds: Vec<u64>,
    pub config_hash: String,
    pub base_config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub replicates: Vec<Replicate>,
    /// `trend_a`, `trend_b`, `trend_c` and `beats_baseline`.
    pub trends: BTreeMap<String, TrendVerdict>,
    pub footnotes: Vec<String>,
}

/// Published reference points, quoted for orientation only.
pub const FOOTNOTES: &[&str] = &[
    "reference (real images, not a target): depth point clouds + RGB, energy MAE 77.98 kCal, MAPE 68.05%",
    "reference (real images, not a target): depth point clouds + RGB, volume MAE 62.60 ml, MAPE 41.43%",
    "reference (real images, not a target): GTPC point-cloud-only upper bound, energy MAE 114.73 kCal, volume MAPE 19.19%",
    "the mesh-reconstruction point-cloud arm is omitted: it needs a pretrained image-to-3D generator",
];

/// Replicates needed for a trend to pass: four of five, scaled.
pub fn required_replicates(replicates: usize) -> usize {
    (4 * replicates).div_ceil(5)
}

impl MetricsReport {
    pub fn assemble(metadata: ReportMetadata, replicates: Vec<Replicate>) -> Self {
        let required = required_replicates(replicates.len());
        let mut trends = BTreeMap::new();
        trends.insert("trend_a".into(), TrendVerdict::tally(replicates.iter().map(Replicate::trend_a), required));
        trends.insert("trend_b".into(), TrendVerdict::tally(replicates.iter().map(Replicate::trend_b), required));
        trends.insert("trend_c".into(), TrendVerdict::tally(replicates.iter().map(Replicate::trend_c), required));
        trends.insert(
            "beats_baseline".into(),
            TrendVerdict::tally(replicates.iter().map(Replicate::beats_baseline), replicates.len()),
        );
        Self {
            metadata,
            replicates,
            trends,
            footnotes: FOOTNOTES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.json` and one `report_<seed>.csv` per replicate under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::formats::write_file(&dir.join("report.json"), self.to_json().as_bytes())?;
        for rep in &self.replicates {
            let path = dir.join(format!("report_{}.csv", rep.train_seed));
            crate::formats::write_file(&path, rows_csv(&rep.rows).as_bytes())?;
        }
        Ok(())
    }
}

/// FNV-1a over the canonical JSON of `config`.
pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let h = json
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    format!("{h:016x}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationOptions {
    pub replicates: usize,
    /// Worker threads for independent runs.
    pub jobs: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self { replicates: 1, jobs: 1 }
    }
}

/// Replicate `r` trains with seed `base.seed + r`; the dataset is shared.
pub fn run_ablation_replicates(
    manifest: &DatasetManifest,
    base: &TrainConfig,
    options: AblationOptions,
    mut progress: impl FnMut(&str),
) -> Result<MetricsReport> {
    base.validate()?;
    if options.replicates == 0 || options.jobs == 0 {
        return Err(Error::Config("replicates and jobs must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let seeds: Vec<u64> = (0..options.replicates as u64).map(|r| base.seed.wrapping_add(r)).collect();

    // Images do not depend on the variant; points do not depend on modality,
    // attribute or seed. Both are prepared once and shared by the runs.
    let images = pool.install(|| -> Result<_> {
        Ok((
            prepare_images(manifest, Split::Train, base)?,
            prepare_images(manifest, Split::Test, base)?,
        ))
    });
    let mut rows_by_seed: Vec<Vec<MetricsRow>> = vec![Vec::new(); seeds.len()];
    for &variant in Variant::ALL {
        let points_cfg = TrainConfig {
            variant,
            modality: Modality::PcOnly,
            ..base.clone()
        };
        let prepared = pool.install(|| -> Result<_> {
            let mut train = prepare_split(manifest, Split::Train, &points_cfg)?;
            let mut test = prepare_split(manifest, Split::Test, &points_cfg)?;
            if let Ok((train_images, test_images)) = &images {
                for (s, img) in train.iter_mut().zip(train_images).chain(test.iter_mut().zip(test_images)) {
                    s.image = Some(img.clone());
                }
            }
            Ok((train, test))
        });
        let cells: Vec<(usize, Modality, Attribute)> = (0..seeds.len())
            .flat_map(|r| {
                Modality::ALL
                    .iter()
                    .flat_map(move |&m| Attribute::ALL.iter().map(move |&a| (r, m, a)))
            })
            .collect();
        let results: Vec<MetricsRow> = pool.install(|| {
            cells
                .par_iter()
                .map(|&(r, modality, attribute)| {
                    let (train, test) = match (&prepared, &images) {
                        (Err(e), _) => return MetricsRow::failed(modality, variant, attribute, e),
                        (Ok(_), Err(e)) if modality == Modality::PcRgb => {
                            return MetricsRow::failed(modality, variant, attribute, e)
                        }
                        (Ok((train, test)), _) => (train, test),
                    };
                    let cfg = TrainConfig {
                        modality,
                        variant,
                        attribute,
                        seed: seeds[r],
                        ..base.clone()
                    };
                    train_prepared(train, &cfg)
                        .and_then(|ckpt| evaluate_prepared(&ckpt.model, test))
                        .unwrap_or_else(|e| MetricsRow::failed(modality, variant, attribute, &e))
                })
                .collect()
        });
        for (&(r, _, _), row) in cells.iter().zip(results) {
            progress(&format!("seed={} {}", seeds[r], row.to_kv()));
            rows_by_seed[r].push(row);
        }
    }

    let mut baselines = Vec::new();
    for &a in Attribute::ALL {
        baselines.push(evaluate_baseline(manifest, a, Split::Test)?);
    }
    let replicates = seeds
        .iter()
        .zip(rows_by_seed)
        .map(|(&train_seed, mut rows)| {
            rows.sort_by_key(MetricsRow::key_order);
            rows.extend(baselines.iter().cloned());
            Replicate { train_seed, rows }
        })
        .collect();
    let metadata = ReportMetadata {
        dataset_seed: manifest.seed,
        train_seeds: seeds,
        config_hash: config_hash(base),
        base_config: base.clone(),
    };
    Ok(MetricsReport::assemble(metadata, replicates))
}

impl MetricsRow {
    fn key_order(&self) -> (usize, usize, Attribute) {
        let m = Modality::ALL.iter().position(|m| m.as_str() == self.modality).unwrap_or(usize::MAX);
        let v = Variant::ALL.iter().position(|v| v.as_str() == self.variant).unwrap_or(usize::MAX);
        (m, v, self.attribute)
    }
}

/// The twelve-run grid for one train seed.
pub fn run_ablation(manifest: &DatasetManifest, base: &TrainConfig) -> Result<MetricsReport> {
    run_ablation_replicates(manifest, base, AblationOptions::default(), |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 4.0], &[2.0, 2.0]).unwrap(), 1.5);
        assert_eq!(mae(&[3.0, 5.0], &[3.0, 5.0]).unwrap(), 0.0);
        assert_eq!(mape(&[150.0], &[100.0]).unwrap(), 50.0);
        assert_eq!(mape(&[2.0, 7.0], &[2.0, 7.0]).unwrap(), 0.0);
        assert!(matches!(mape(&[1.0, 2.0], &[1.0, 0.0]), Err(Error::Invalid(_))));
        assert!(mae(&[], &[]).is_err());
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(fit_baseline(&[100.0, 200.0, 300.0]).unwrap().predict(), 200.0);
        assert_eq!(fit_baseline(&[42.0]).unwrap().predict(), 42.0);
        assert!(fit_baseline(&[]).is_err());
    }

    #[test]
    fn grid_has_twelve_cells() {
        let g = grid();
        assert_eq!(g.len(), 12);
        let mut sorted = g.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 12);
    }

    #[test]
    fn required_is_four_of_five() {
        assert_eq!(required_replicates(5), 4);
        assert_eq!(required_replicates(1), 1);
        assert_eq!(required_replicates(10), 8);
    }

    fn row(m: &str, v: &str, a: Attribute, mae: f64, mape: f64) -> MetricsRow {
        MetricsRow {
            modality: m.into(),
            variant: v.into(),
            attribute: a,
            mae: Some(mae),
            mape: Some(mape),
            n_test: 10,
            status: "ok".into(),
        }
    }

    fn replicate(gtpc_vol: f64, rgb_energy: f64) -> Replicate {
        let mut rows = Vec::new();
        for m in ["pc_only", "pc_rgb"] {
            for (v, vol) in [("gtpc", gtpc_vol), ("gtpc_normalized", 30.0), ("depth_lift", 25.0)] {
                rows.push(row(m, v, Attribute::Volume, vol, vol));
                let e = if m == "pc_rgb" { rgb_energy } else { 40.0 };
                rows.push(row(m, v, Attribute::Energy, e, e));
            }
        }
        rows.push(row("baseline", "none", Attribute::Volume, 60.0, 60.0));
        rows.push(row("baseline", "none", Attribute::Energy, 60.0, 60.0));
        Replicate { train_seed: 0, rows }
    }

    #[test]
    fn trend_checks() {
        let good = replicate(10.0, 20.0);
        assert!(good.trend_a() && good.trend_b() && good.trend_c() && good.beats_baseline());
        let bad = replicate(28.0, 45.0);
        assert!(!bad.trend_a());
        assert!(bad.trend_c());
        assert!(!bad.trend_b());
        let mut failed = replicate(10.0, 20.0);
        failed.rows[0].status = "failed: x".into();
        failed.rows[0].mape = None;
        assert!(!failed.trend_a());
        assert!(!failed.beats_baseline());

        let report = MetricsReport::assemble(
            ReportMetadata {
                dataset_seed: 0,
                train_seeds: vec![0, 1, 2, 3, 4],
                config_hash: String::new(),
                base_config: TrainConfig::default(),
            },
            vec![good.clone(), good.clone(), good.clone(), good, bad],
        );
        assert!(report.trends["trend_a"].passed());
        assert_eq!(report.trends["trend_a"].holds, 4);
        assert_eq!(report.trends["trend_b"].holds, 4);
        assert_eq!(report.trends["trend_c"].holds, 5);
        assert!(report.trends["beats_baseline"].passed());
    }

    #[test]
    fn csv_layout() {
        let rows = vec![row("pc_rgb", "gtpc", Attribute::Volume, 1.5, 2.25)];
        assert_eq!(
            rows_csv(&rows),
            "modality,variant,attribute,mae,mape,n_test,status\npc_rgb,gtpc,volume,1.5,2.25,10,ok\n"
        );
    }
}
