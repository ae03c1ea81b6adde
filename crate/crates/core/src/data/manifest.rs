//! Plain-text dataset manifest.
//!
//! ```text
//! # seed: 7
//! # split: train
//! hr/train_000.fatn<TAB>lr/train_000.fatn<TAB>2
//! # split: val
//! hr/val_000.fatn<TAB>lr/val_000.fatn<TAB>2
//! ```
//!
//! Records are tab-separated `hr_path lr_path scale`, paths relative to the
//! manifest's directory. `# key: value` lines set the seed and the split of
//! the records that follow (default `train`); other `#` lines and blank lines
//! are ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::ImageBuffer;
use crate::error::{Error, Result};

pub const VALID_SCALES: [usize; 3] = [2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

pub fn check_scale(scale: usize) -> Result<()> {
    if VALID_SCALES.contains(&scale) {
        Ok(())
    } else {
        Err(Error::Config(format!("scale must be one of 2, 4, 8; got {scale}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub hr: PathBuf,
    pub lr: PathBuf,
    pub scale: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub records: Vec<Record>,
    /// Directory that record paths are relative to. Not serialized.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Common scale of all records.
    pub fn scale(&self) -> Result<usize> {
        let first = self
            .records
            .first()
            .ok_or_else(|| Error::Contract("manifest has no records".into()))?;
        if self.records.iter().any(|r| r.scale != first.scale) {
            return Err(Error::Config("manifest mixes scale factors".into()));
        }
        Ok(first.scale)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# seed: {}\n", self.seed);
        let mut current = None;
        for r in &self.records {
            if current != Some(r.split) {
                out.push_str(&format!("# split: {}\n", r.split));
                current = Some(r.split);
            }
            out.push_str(&format!("{}\t{}\t{}\n", r.hr.display(), r.lr.display(), r.scale));
        }
        out
    }

    pub fn parse(text: &str, root: &Path, origin: &str) -> Result<Self> {
        let mut seed = 0;
        let mut split = Split::Train;
        let mut records = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let bad = |m: String| Error::format(origin, format!("line {}: {m}", no + 1));
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    match k.trim() {
                        "seed" => {
                            seed = v.trim().parse().map_err(|_| bad(format!("bad seed {:?}", v.trim())))?
                        }
                        "split" => split = v.trim().parse().map_err(|e: Error| bad(e.to_string()))?,
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let scale: usize = fields[2]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad scale {:?}", fields[2])))?;
            check_scale(scale).map_err(|e| bad(e.to_string()))?;
            records.push(Record {
                hr: PathBuf::from(fields[0]),
                lr: PathBuf::from(fields[1]),
                scale,
                split,
            });
        }
        Ok(DatasetManifest {
            seed,
            records,
            root: root.to_path_buf(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new("."));
        DatasetManifest::parse(&text, root, &path.display().to_string())
    }

    /// Loads one `(hr, lr)` pair and checks `lr dims * scale == hr dims`.
    pub fn load(&self, record: &Record) -> Result<(ImageBuffer, ImageBuffer)> {
        let hr = ImageBuffer::read_any(&self.root.join(&record.hr))?;
        let lr = ImageBuffer::read_any(&self.root.join(&record.lr))?;
        if lr.height * record.scale != hr.height || lr.width * record.scale != hr.width {
            return Err(Error::Dimension(format!(
                "{}: lr {}x{} times scale {} does not give hr {}x{}",
                record.lr.display(),
                lr.height,
                lr.width,
                record.scale,
                hr.height,
                hr.width
            )));
        }
        Ok((hr, lr))
    }

    /// All pairs of a split, sorted by HR path.
    pub fn load_split(&self, split: Split) -> Result<Vec<(String, ImageBuffer, ImageBuffer)>> {
        let mut recs: Vec<&Record> = self.split(split).collect();
        recs.sort_by(|a, b| a.hr.cmp(&b.hr));
        recs.into_iter()
            .map(|r| {
                let (hr, lr) = self.load(r)?;
                let name = r
                    .hr
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok((name, hr, lr))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let m = DatasetManifest {
            seed: 42,
            records: vec![
                Record { hr: "hr/a.fatn".into(), lr: "lr/a.fatn".into(), scale: 4, split: Split::Train },
                Record { hr: "hr/b.fatn".into(), lr: "lr/b.fatn".into(), scale: 4, split: Split::Val },
            ],
            root: PathBuf::from("/x"),
        };
        let back = DatasetManifest::parse(&m.to_text(), Path::new("/x"), "mem").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), m.to_text());
    }

    #[test]
    fn bad_records_rejected() {
        assert!(DatasetManifest::parse("a\tb\n", Path::new("."), "mem").is_err());
        assert!(DatasetManifest::parse("a\tb\t3\n", Path::new("."), "mem").is_err());
        assert!(DatasetManifest::parse("# split: holdout\n", Path::new("."), "mem").is_err());
    }
}
