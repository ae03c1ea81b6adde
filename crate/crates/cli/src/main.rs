use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fagan::data::{self, DatasetManifest, DatasetSpec, ImageBuffer};
use fagan::gradcheck::{self, GradCheckConfig};
use fagan::metrics;
use fagan::train::{self, ablate, Checkpoint, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "fagan", version, about = "Attention-fused GAN super-resolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phantom dataset (HR/LR pairs plus manifest.tsv).
    Dataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n_train: usize,
        #[arg(long, default_value_t = 8)]
        n_val: usize,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        hr_size: usize,
    },
    /// Print the default training config in `key = value` form.
    Defaults,
    /// Train a generator/discriminator pair.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run (its stored config wins).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the validation split and write a metrics CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the super-resolved images (FATN and PGM) here.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Bicubic-downsample an image or every image in a directory.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare candidate images against references with matching names.
    Metrics {
        reference: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the module ablation, connection and alpha/beta grids.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training iterations per grid row.
        #[arg(long, default_value_t = 1)]
        budget: u64,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        /// Case to run (all when omitted).
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// List case names and exit.
        #[arg(long)]
        list: bool,
    },
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::read(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn run_train(config: &Path, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let manifest = read_manifest(data)?;
    let mut trainer = match resume {
        Some(ckpt) => Trainer::from_checkpoint(&Checkpoint::load(ckpt)?, &manifest)?,
        None => Trainer::new(TrainConfig::read(config)?, &manifest)?,
    };
    let start = trainer.iteration;
    let log = trainer.run(Some(out))?;
    let (log_path, ckpt_path) = train::output_paths(out);
    if let Some((psnr, ssim)) = log.last_validation() {
        log::info!("validation psnr {psnr:.4} dB, ssim {ssim:.4}");
    }
    println!(
        "trained iterations {}..{}; log {}, checkpoint {}",
        start,
        trainer.iteration,
        log_path.display(),
        ckpt_path.display()
    );
    Ok(())
}

fn run_eval(ckpt: &Path, data: &Path, out: &Path, images: Option<&Path>) -> Result<()> {
    let manifest = read_manifest(data)?;
    let (_, generator) = train::load_generator(&Checkpoint::load(ckpt)?)?;
    let report = train::evaluate(&train::Candidate::Generator(&generator), &manifest)?;
    report.write_csv(out)?;
    if let Some(dir) = images {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let split = if manifest.split(data::Split::Val).next().is_some() {
            data::Split::Val
        } else {
            data::Split::Test
        };
        for (name, _, lr) in manifest.load_split(split)? {
            let sr: ImageBuffer = train::upscale(&generator, &lr)?;
            sr.write_fatn(&dir.join(format!("{name}.fatn")))?;
            sr.write_pgm(&dir.join(format!("{name}.pgm")))?;
        }
    }
    println!(
        "psnr {:.4} ± {:.4} dB, ssim {:.4} ± {:.4}, fid {:.6} -> {}",
        report.psnr,
        report.psnr_std,
        report.ssim,
        report.ssim_std,
        report.fid,
        out.display()
    );
    Ok(())
}

fn run_gradcheck(module: Option<&str>, instances: usize, seed: u64) -> Result<bool> {
    let cfg = GradCheckConfig {
        instances,
        ..Default::default()
    };
    let cases: Vec<&gradcheck::Case> = match module {
        Some(name) => vec![gradcheck::find_case(name)?],
        None => gradcheck::CASES.iter().collect(),
    };
    let mut ok = true;
    for case in cases {
        let r = gradcheck::run_case(case, &cfg, seed)?;
        println!(
            "{} {:<24} checked {:>5} kinks {:>4} unstable {:>3} max rel err {:.3e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.checked,
            r.kinks,
            r.unstable,
            r.max_error
        );
        if !r.passed() {
            println!("     worst: {}", r.worst);
            ok = false;
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Dataset {
            out,
            n_train,
            n_val,
            scale,
            seed,
            hr_size,
        } => {
            let spec = DatasetSpec {
                n_train,
                n_val,
                scale,
                seed,
                hr_size,
            };
            let manifest = data::build_dataset(&spec, &out)?;
            println!(
                "wrote {} image pairs and {}",
                manifest.records.len(),
                out.join("manifest.tsv").display()
            );
        }
        Command::Defaults => print!("{}", TrainConfig::default().to_text()),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => run_train(&config, &data, &out, resume.as_deref())?,
        Command::Eval { ckpt, data, out, images } => run_eval(&ckpt, &data, &out, images.as_deref())?,
        Command::Degrade { input, scale, out } => {
            let written = data::degrade_path(&input, scale, &out)?;
            if written.is_empty() {
                bail!("no .fatn or .pgm images found at {}", input.display());
            }
            println!("degraded {} image(s) into {}", written.len(), out.display());
        }
        Command::Metrics {
            reference,
            candidate,
            out,
        } => {
            let report = metrics::compare_dirs(&reference, &candidate)?;
            report.write_csv(&out)?;
            println!(
                "{} pairs: psnr {:.4} dB, ssim {:.4}, fid {:.6} -> {}",
                report.rows.len(),
                report.psnr,
                report.ssim,
                report.fid,
                out.display()
            );
        }
        Command::Ablate {
            config,
            data,
            out,
            budget,
        } => {
            let manifest = read_manifest(&data)?;
            let grids = ablate::ablate(&TrainConfig::read(&config)?, &manifest, budget)?;
            for path in grids.write_csvs(&out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Gradcheck {
            module,
            instances,
            seed,
            list,
        } => {
            if list {
                for case in gradcheck::CASES {
                    println!("{}", case.name);
                }
                return Ok(true);
            }
            return run_gradcheck(module.as_deref(), instances, seed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
