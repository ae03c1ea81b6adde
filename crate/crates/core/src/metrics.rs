//! Image quality metrics: PSNR, SSIM and the Fréchet distance between
//! Gaussian fits of extractor features.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{image_files, ImageBuffer};
use crate::error::{Error, Result};
use crate::losses::FeatureExtractor;
use crate::tensor::global_avg_pool;

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Seed of the frozen extractor used for FID.
pub const FID_EXTRACTOR_SEED: u64 = 0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Eigenvalues below `-PSD_TOLERANCE · max(1, λ_max)` are an error; smaller
/// negatives are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

fn same_dims(x: &ImageBuffer, y: &ImageBuffer) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::Dimension(format!(
            "images differ in size: {}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    Ok(())
}

/// `10 log10(peak² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(x: &ImageBuffer, y: &ImageBuffer, peak: f64) -> Result<f64> {
    same_dims(x, y)?;
    let mse = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsimMode {
    /// Whole-image means, variances and covariance.
    Global,
    /// Mean over all valid 11x11 Gaussian windows (σ = 1.5).
    Windowed,
}

impl fmt::Display for SsimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SsimMode::Global => "global",
            SsimMode::Windowed => "windowed",
        })
    }
}

impl FromStr for SsimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SsimMode::Global),
            "windowed" => Ok(SsimMode::Windowed),
            _ => Err(Error::Config(format!("unknown SSIM mode {s:?}"))),
        }
    }
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, l: f64) -> f64 {
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// SSIM with `C1 = (0.01 L)²`, `C2 = (0.03 L)²`, `L` taken from `x.range`.
pub fn ssim(x: &ImageBuffer, y: &ImageBuffer, mode: SsimMode) -> Result<f64> {
    same_dims(x, y)?;
    let l = x.range;
    match mode {
        SsimMode::Global => {
            let n = x.data.len() as f64;
            let mx = x.data.iter().sum::<f64>() / n;
            let my = y.data.iter().sum::<f64>() / n;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (a, b) in x.data.iter().zip(&y.data) {
                vx += (a - mx) * (a - mx);
                vy += (b - my) * (b - my);
                cxy += (a - mx) * (b - my);
            }
            Ok(ssim_formula(mx, my, vx / n, vy / n, cxy / n, l))
        }
        SsimMode::Windowed => windowed_ssim(x, y, l),
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn windowed_ssim(x: &ImageBuffer, y: &ImageBuffer, l: f64) -> Result<f64> {
    let (h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "windowed SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    // separable valid-mode filtering of x, y, x², y², xy
    let filter = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut rows = vec![0.0; h * ow];
        for yy in 0..h {
            for ox in 0..ow {
                rows[yy * ow + ox] = (0..SSIM_WINDOW).map(|k| g[k] * f(yy * w + ox + k)).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                out[oy * ow + ox] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(oy + k) * ow + ox]).sum();
            }
        }
        out
    };
    let (xd, yd) = (&x.data, &y.data);
    let mx = filter(&|i| xd[i]);
    let my = filter(&|i| yd[i]);
    let sxx = filter(&|i| xd[i] * xd[i]);
    let syy = filter(&|i| yd[i] * yd[i]);
    let sxy = filter(&|i| xd[i] * yd[i]);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (a, b) = (mx[i], my[i]);
        total += ssim_formula(a, b, sxx[i] - a * a, syy[i] - b * b, sxy[i] - a * b, l);
    }
    Ok(total / (oh * ow) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance of row vectors.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::Contract(format!(
                "feature statistics need at least 2 samples, got {}",
                vectors.len()
            )));
        }
        let d = vectors[0].len();
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::Dimension("feature vectors differ in length".into()));
        }
        let n = vectors.len();
        let mut mean = DVector::zeros(d);
        for v in vectors {
            mean += DVector::from_column_slice(v);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for v in vectors {
            let c = DVector::from_column_slice(v) - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        Ok(GaussianStats { mean, cov, n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Global-average-pooled extractor features, one vector per image.
pub fn feature_vectors(images: &[&ImageBuffer], fx: &FeatureExtractor<f64>) -> Result<Vec<Vec<f64>>> {
    images
        .iter()
        .map(|img| {
            let t = ImageBuffer::batch_to_tensor::<f64>(&[img])?;
            Ok(global_avg_pool(&fx.features(&t)?)?.to_vec())
        })
        .collect()
}

pub fn feature_stats(images: &[&ImageBuffer], fx: &FeatureExtractor<f64>) -> Result<GaussianStats> {
    if images.len() < 2 {
        return Err(Error::Contract(format!(
            "feature statistics need at least 2 images, got {}",
            images.len()
        )));
    }
    GaussianStats::from_vectors(&feature_vectors(images, fx)?)
}

fn checked_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = -PSD_TOLERANCE * max.max(1.0);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::Numerical(format!(
            "matrix is not positive semi-definite: eigenvalue {bad:e}"
        )));
    }
    Ok(eig)
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("sqrtm of {}x{} matrix", m.nrows(), m.ncols())));
    }
    let eig = checked_eigen(m)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2})`, with the trace of the
/// root taken from the symmetric matrix `Σa^{1/2} Σb Σa^{1/2}`. Rounding
/// can push the exact value 0 slightly negative; the result is floored at 0.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("FID of {}-d and {}-d statistics", a.dim(), b.dim())));
    }
    let root_a = sqrtm_psd(&a.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let eig = checked_eigen(&inner)?;
    let tr_root: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dm = &a.mean - &b.mean;
    Ok((dm.dot(&dm) + a.cov.trace() + b.cov.trace() - 2.0 * tr_root).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<PairMetrics>,
    pub psnr: f64,
    pub psnr_std: f64,
    pub ssim: f64,
    pub ssim_std: f64,
    pub fid: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

pub const REPORT_HEADER: &str = "name,psnr,ssim,psnr_std,ssim_std,fid";

impl MetricReport {
    /// `pairs` are `(name, reference, candidate)`; rows are sorted by name.
    /// PSNR uses the reference range as peak, SSIM is windowed.
    pub fn compute(pairs: &[(String, ImageBuffer, ImageBuffer)], fx: &FeatureExtractor<f64>) -> Result<Self> {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by(|&i, &j| pairs[i].0.cmp(&pairs[j].0));
        let mut rows = Vec::with_capacity(pairs.len());
        for &i in &order {
            let (name, reference, candidate) = &pairs[i];
            rows.push(PairMetrics {
                name: name.clone(),
                psnr: psnr(reference, candidate, reference.range)?,
                ssim: ssim(reference, candidate, SsimMode::Windowed)?,
            });
        }
        let refs: Vec<&ImageBuffer> = order.iter().map(|&i| &pairs[i].1).collect();
        let cands: Vec<&ImageBuffer> = order.iter().map(|&i| &pairs[i].2).collect();
        let fid = fid(&feature_stats(&refs, fx)?, &feature_stats(&cands, fx)?)?;
        let (psnr, psnr_std) = mean_std(&rows.iter().map(|r| r.psnr).collect::<Vec<_>>());
        let (ssim, ssim_std) = mean_std(&rows.iter().map(|r| r.ssim).collect::<Vec<_>>());
        Ok(MetricReport {
            rows,
            psnr,
            psnr_std,
            ssim,
            ssim_std,
            fid,
        })
    }

    /// Per-pair rows, then a `summary` row carrying means, standard
    /// deviations and FID.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.6},,,\n", r.name, r.psnr, r.ssim));
        }
        out.push_str(&format!(
            "summary,{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            self.psnr, self.ssim, self.psnr_std, self.ssim_std, self.fid
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Scores every image in `candidate_dir` against the reference image with
/// the same file stem in `reference_dir`. Both sides must hold the same set
/// of stems.
pub fn compare_dirs(reference_dir: &Path, candidate_dir: &Path) -> Result<MetricReport> {
    let stems = |dir: &Path| -> Result<Vec<(String, std::path::PathBuf)>> {
        Ok(image_files(dir)?
            .into_iter()
            .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
            .collect())
    };
    let refs = stems(reference_dir)?;
    let cands = stems(candidate_dir)?;
    let ref_names: Vec<&str> = refs.iter().map(|(n, _)| n.as_str()).collect();
    let cand_names: Vec<&str> = cands.iter().map(|(n, _)| n.as_str()).collect();
    if ref_names != cand_names {
        return Err(Error::Contract(format!(
            "image sets differ: {} has {ref_names:?}, {} has {cand_names:?}",
            reference_dir.display(),
            candidate_dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(refs.len());
    for ((name, r), (_, c)) in refs.into_iter().zip(cands) {
        pairs.push((name, ImageBuffer::read_any(&r)?, ImageBuffer::read_any(&c)?));
    }
    MetricReport::compute(&pairs, &fid_extractor())
}

/// Extractor used for FID throughout the crate.
pub fn fid_extractor() -> FeatureExtractor<f64> {
    FeatureExtractor::frozen_conv(FID_EXTRACTOR_SEED, 3).expect("depth 3 is valid")
}
