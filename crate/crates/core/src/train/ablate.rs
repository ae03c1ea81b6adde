//! Module ablation, fusion connection and α/β grids.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::{evaluate, Candidate, TrainConfig, Trainer};
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::nn::{Ablation, FusionMode, Module};

pub const CSV_HEADER: &str = "grid,label,fusion,alpha,beta,parameters,psnr,ssim";
pub const ALPHA_BETA: [(f64, f64); 3] = [(0.4, 0.6), (0.5, 0.5), (0.6, 0.4)];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub grid: &'static str,
    pub label: String,
    pub fusion: FusionMode,
    pub alpha: f64,
    pub beta: f64,
    pub parameters: usize,
    pub psnr: f64,
    pub ssim: f64,
}

impl AblationRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6}\n",
            self.grid, self.label, self.fusion, self.alpha, self.beta, self.parameters, self.psnr, self.ssim
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationGrids {
    pub ablation: Vec<AblationRow>,
    pub connections: Vec<AblationRow>,
    pub alpha_beta: Vec<AblationRow>,
}

fn run_row(grid: &'static str, label: String, cfg: TrainConfig, manifest: &DatasetManifest) -> Result<AblationRow> {
    let mut trainer = Trainer::new(cfg, manifest)?;
    trainer.run(None)?;
    let report = evaluate(&Candidate::Generator(&trainer.generator), manifest)?;
    let c = &trainer.config;
    log::info!("{grid} {label}: psnr {:.4} ssim {:.4}", report.psnr, report.ssim);
    Ok(AblationRow {
        grid,
        label,
        fusion: c.fusion_mode,
        alpha: c.alpha,
        beta: c.beta,
        parameters: trainer.generator.num_parameters(),
        psnr: report.psnr,
        ssim: report.ssim,
    })
}

/// Trains and scores every grid row for `budget` iterations on top of
/// `base` (whose own ablation, fusion and α/β settings are overridden per
/// row).
pub fn ablate(base: &TrainConfig, manifest: &DatasetManifest, budget: u64) -> Result<AblationGrids> {
    let mut base = base.clone();
    base.iterations = budget;
    base.val_interval = 0;
    base.checkpoint_interval = 0;
    base.validate()?;
    let mut grids = AblationGrids::default();
    for a in Ablation::GRID {
        let cfg = TrainConfig {
            ablation: a,
            ..base.clone()
        };
        grids.ablation.push(run_row("ablation", a.label(), cfg, manifest)?);
    }
    for mode in [FusionMode::Direct, FusionMode::Weighted] {
        let cfg = TrainConfig {
            ablation: Ablation::NONE,
            fusion_mode: mode,
            ..base.clone()
        };
        grids.connections.push(run_row("connections", mode.to_string(), cfg, manifest)?);
    }
    for (alpha, beta) in ALPHA_BETA {
        let cfg = TrainConfig {
            ablation: Ablation::NONE,
            alpha,
            beta,
            ..base.clone()
        };
        grids.alpha_beta.push(run_row("alpha_beta", format!("{alpha}/{beta}"), cfg, manifest)?);
    }
    Ok(grids)
}

pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv());
    }
    out
}

impl AblationGrids {
    /// Writes `ablation.csv`, `connections.csv` and `alpha_beta.csv`.
    pub fn write_csvs(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut paths = Vec::new();
        for (name, rows) in [
            ("ablation.csv", &self.ablation),
            ("connections.csv", &self.connections),
            ("alpha_beta.csv", &self.alpha_beta),
        ] {
            let path = out_dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(rows_to_csv(rows).as_bytes()).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}
