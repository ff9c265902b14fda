use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfp3d::config::RunConfigFile;
use mfp3d::evaluation::{self, AblationOptions};
use mfp3d::features::encoder_gradchecks;
use mfp3d::synth::{build_dataset, DatasetManifest, Split};
use mfp3d::tensor::gradcheck::op_suite;
use mfp3d::training::{self, Variant};
use mfp3d::{formats, Error};

#[derive(Parser)]
#[command(name = "mfp3d", version, about = "Food portion estimation from a single view")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one sample's stage-1 point cloud as PLY.
    Reconstruct {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        sample: u32,
        #[arg(long)]
        variant: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one model; writes the checkpoint and `<out>.history.csv`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the row as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the 12-model grid with baselines and trend checks.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference checks of every op and both encoders.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

enum Failure {
    Lib(Error),
    Gradcheck(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Unknown { .. } => 4,
        Error::Numerical(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Gradcheck(n)) => {
            eprintln!("error: {n} gradient checks failed");
            ExitCode::from(6)
        }
    }
}

fn fmt3(p: [f64; 3]) -> String {
    format!("{},{},{}", p[0], p[1], p[2])
}

fn history_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
    name.push(".history.csv");
    ckpt.with_file_name(name)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData { config, out } => {
            let cfg = RunConfigFile::load_or_default(config.as_deref())?.generator;
            eprintln!("generating {} samples into {}", cfg.n_samples, out.display());
            let manifest = build_dataset(&cfg, &out)?;
            println!("samples={}", manifest.samples.len());
            println!("train={}", manifest.split(Split::Train).count());
            println!("test={}", manifest.split(Split::Test).count());
            println!("seed={}", manifest.seed);
            println!("manifest={}", out.join(mfp3d::synth::MANIFEST_FILE).display());
        }
        Command::Reconstruct {
            manifest,
            sample,
            variant,
            out,
            config,
        } => {
            let variant: Variant = variant.parse()?;
            let mut cfg = RunConfigFile::load_or_default(config.as_deref())?.train;
            cfg.variant = variant;
            let manifest = DatasetManifest::load(&manifest)?;
            let record = manifest.load_sample(sample)?;
            let cloud = training::stage1_cloud(&record, manifest.seed, &cfg)?;
            formats::write_ply(&out, &cloud)?;
            let (lo, hi) = cloud.bounds().ok_or(Error::EmptyForeground)?;
            println!("points={}", cloud.len());
            println!("bbox_min={}", fmt3(lo));
            println!("bbox_max={}", fmt3(hi));
            println!("out={}", out.display());
        }
        Command::Train {
            config,
            manifest,
            out,
            seed,
        } => {
            let mut cfg = RunConfigFile::load_or_default(config.as_deref())?.train;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let manifest = DatasetManifest::load(&manifest)?;
            eprintln!(
                "training {} / {} / {} for {} epochs",
                cfg.modality, cfg.variant, cfg.attribute, cfg.epochs
            );
            let ckpt = training::train(&manifest, &cfg)?;
            training::save_checkpoint(&ckpt, &out)?;
            let hist = history_path(&out);
            training::write_history_csv(&ckpt.history, &hist)?;
            println!("checkpoint={}", out.display());
            println!("history={}", hist.display());
            println!("epochs={}", ckpt.history.len());
            println!("final_train_l1={}", ckpt.history.last().copied().unwrap_or(f64::NAN));
        }
        Command::Eval { ckpt, manifest, out } => {
            let ckpt = training::load_checkpoint(&ckpt)?;
            let manifest = DatasetManifest::load(&manifest)?;
            let row = evaluation::evaluate(&ckpt, &manifest, Split::Test)?;
            if let Some(out) = out {
                formats::write_file(&out, evaluation::rows_csv(std::slice::from_ref(&row)).as_bytes())?;
            }
            println!("{}", row.to_kv());
        }
        Command::Ablate {
            manifest,
            out,
            replicates,
            jobs,
            config,
        } => {
            let cfg = RunConfigFile::load_or_default(config.as_deref())?.train;
            let manifest = DatasetManifest::load(&manifest)?;
            let options = AblationOptions { replicates, jobs };
            let report = evaluation::run_ablation_replicates(&manifest, &cfg, options, |line| eprintln!("{line}"))?;
            report.write(&out)?;
            for (name, t) in &report.trends {
                println!(
                    "{name}={} holds={} replicates={} required={}",
                    t.verdict, t.holds, t.replicates, t.required
                );
            }
            println!("report={}", out.join("report.json").display());
        }
        Command::Gradcheck { seeds } => {
            let mut checked = 0;
            let mut failed = 0;
            let mut worst_op = 0.0f64;
            let mut worst_encoder = 0.0f64;
            for seed in 0..seeds {
                let ops = op_suite(seed)?;
                let encoders = encoder_gradchecks(seed)?;
                for (reports, worst) in [(ops, &mut worst_op), (encoders, &mut worst_encoder)] {
                    for r in reports {
                        *worst = worst.max(r.max_rel_err);
                        checked += 1;
                        if !r.passed() {
                            failed += 1;
                            eprintln!("FAIL {} seed {seed}: {:e} >= {:e}", r.name, r.max_rel_err, r.tolerance);
                        }
                    }
                }
            }
            println!("seeds={seeds}");
            println!("checks={checked}");
            println!("failed={failed}");
            println!("max_op_rel_err={worst_op:e}");
            println!("max_encoder_rel_err={worst_encoder:e}");
            if failed > 0 {
                return Err(Failure::Gradcheck(failed));
            }
        }
    }
    Ok(())
}
