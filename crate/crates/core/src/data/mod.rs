//! Images, bicubic degradation, synthetic phantoms and dataset manifests.

pub mod bicubic;
pub mod image;
pub mod manifest;
pub mod phantom;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use bicubic::{bicubic_resize, degrade};
pub use image::{ImageBuffer, DEFAULT_RANGE};
pub use manifest::{check_scale, DatasetManifest, Record, Split};
pub use phantom::synthesize_phantom;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub scale: usize,
    pub seed: u64,
    pub hr_size: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_train: 64,
            n_val: 8,
            scale: 2,
            seed: 0,
            hr_size: 64,
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates phantoms, degrades them, and writes `hr/`, `lr/` (FATN plus a
/// PGM preview each) and `manifest.tsv` under `out_dir`.
pub fn build_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    if spec.n_train == 0 || spec.n_val == 0 {
        return Err(Error::Contract("dataset needs at least one train and one val image".into()));
    }
    check_scale(spec.scale)?;
    if spec.hr_size % spec.scale != 0 {
        return Err(Error::Config(format!(
            "HR size {} not divisible by scale {}",
            spec.hr_size, spec.scale
        )));
    }
    create_dir(&out_dir.join("hr"))?;
    create_dir(&out_dir.join("lr"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    for (split, count) in [(Split::Train, spec.n_train), (Split::Val, spec.n_val)] {
        for i in 0..count {
            let hr = synthesize_phantom(rng.random(), spec.hr_size)?;
            let lr = degrade(&hr, spec.scale)?;
            let stem = format!("{split}_{i:03}");
            let hr_rel = PathBuf::from("hr").join(format!("{stem}.fatn"));
            let lr_rel = PathBuf::from("lr").join(format!("{stem}.fatn"));
            hr.write_fatn(&out_dir.join(&hr_rel))?;
            lr.write_fatn(&out_dir.join(&lr_rel))?;
            hr.write_pgm(&out_dir.join("hr").join(format!("{stem}.pgm")))?;
            lr.write_pgm(&out_dir.join("lr").join(format!("{stem}.pgm")))?;
            records.push(Record {
                hr: hr_rel,
                lr: lr_rel,
                scale: spec.scale,
                split,
            });
        }
    }
    let manifest = DatasetManifest {
        seed: spec.seed,
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Degrades one image file, or every `.fatn`/`.pgm` in a directory, writing
/// `<stem>.fatn` and `<stem>.pgm` into `out_dir`. Returns the FATN paths.
pub fn degrade_path(input: &Path, scale: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    check_scale(scale)?;
    let inputs = image_files(input)?;
    create_dir(out_dir)?;
    let mut written = Vec::new();
    for path in inputs {
        let lr = degrade(&ImageBuffer::read_any(&path)?, scale)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let fatn = out_dir.join(format!("{stem}.fatn"));
        lr.write_fatn(&fatn)?;
        lr.write_pgm(&out_dir.join(format!("{stem}.pgm")))?;
        written.push(fatn);
    }
    Ok(written)
}

/// `path` itself if it is a file, otherwise the sorted `.fatn` and `.pgm`
/// files directly inside it. When both extensions exist for a stem, the
/// FATN file wins.
pub fn image_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        match p.extension().and_then(|e| e.to_str()) {
            Some("fatn") => files.push(p),
            Some("pgm") if !p.with_extension("fatn").exists() => files.push(p),
            _ => {}
        }
    }
    files.sort();
    Ok(files)
}
