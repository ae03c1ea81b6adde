use std::path::Path;

use super::{load_generator, upscale, Checkpoint};
use crate::data::{bicubic_resize, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{fid_extractor, MetricReport};
use crate::nn::Generator;

/// What produces the candidate HR image for each validation LR.
pub enum Candidate<'a> {
    Generator(&'a Generator<f32>),
    /// Bicubic upscale of the LR input.
    Bicubic,
    /// The HR reference itself.
    Identity,
}

/// Scores a candidate on the validation split (the test split when there
/// is no validation split). Rows are sorted by image name.
pub fn evaluate(candidate: &Candidate<'_>, manifest: &DatasetManifest) -> Result<MetricReport> {
    let scale = manifest.scale()?;
    if let Candidate::Generator(g) = candidate {
        if g.config.scale != scale {
            return Err(Error::Config(format!(
                "generator scale {} does not match dataset scale {scale}",
                g.config.scale
            )));
        }
    }
    let split = if manifest.split(Split::Val).next().is_some() {
        Split::Val
    } else {
        Split::Test
    };
    let mut pairs = Vec::new();
    for (name, hr, lr) in manifest.load_split(split)? {
        let cand = match candidate {
            Candidate::Generator(g) => upscale(g, &lr)?,
            Candidate::Bicubic => bicubic_resize(&lr, hr.height, hr.width)?,
            Candidate::Identity => hr.clone(),
        };
        pairs.push((name, hr, cand));
    }
    MetricReport::compute(&pairs, &fid_extractor())
}

pub fn evaluate_checkpoint(path: &Path, manifest: &DatasetManifest) -> Result<MetricReport> {
    let (_, g) = load_generator(&Checkpoint::load(path)?)?;
    evaluate(&Candidate::Generator(&g), manifest)
}
