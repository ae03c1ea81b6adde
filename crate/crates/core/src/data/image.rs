use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{io as fatn, Element, Tensor};

/// Default intensity range for 8-bit style images.
pub const DEFAULT_RANGE: f64 = 255.0;

/// Single-channel image with real values in `[0, range]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub range: f64,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, data: Vec<f64>, range: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract(format!("image dims must be >= 1, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if !(range > 0.0) {
            return Err(Error::Contract(format!("image range must be positive, got {range}")));
        }
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0 && **v <= range)) {
            return Err(Error::Contract(format!("pixel value {v} outside [0, {range}]")));
        }
        Ok(ImageBuffer {
            height,
            width,
            data,
            range,
        })
    }

    /// Builds an image from arbitrary values, clamping into `[0, range]`.
    /// NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, data: Vec<f64>, range: f64) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, range) })
            .collect();
        ImageBuffer::new(height, width, data, range)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        ImageBuffer::new(height, width, vec![value; height * width], DEFAULT_RANGE)
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Crop of `h x w` pixels starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Dimension(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let data = (y0..y0 + h)
            .flat_map(|y| self.data[y * self.width + x0..y * self.width + x0 + w].iter().copied())
            .collect();
        ImageBuffer::new(h, w, data, self.range)
    }

    /// Stacks images into an `[N, 1, H, W]` tensor scaled to `[0, 1]`.
    pub fn batch_to_tensor<T: Element>(images: &[&ImageBuffer]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Contract("empty image batch".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.dims() != (h, w) {
                return Err(Error::Dimension(format!(
                    "batch mixes {h}x{w} and {}x{} images",
                    img.height, img.width
                )));
            }
            data.extend(img.data.iter().map(|v| T::of(v / img.range)));
        }
        Tensor::new(&[images.len(), 1, h, w], data)
    }

    /// Inverse of [`ImageBuffer::batch_to_tensor`]: one image per batch
    /// entry, rescaled to `range` and clamped.
    pub fn batch_from_tensor<T: Element>(t: &Tensor<T>, range: f64) -> Result<Vec<ImageBuffer>> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::Dimension(format!("expected [N,1,H,W], got {s:?}")));
        }
        let plane = s[2] * s[3];
        t.data()
            .chunks(plane)
            .map(|c| {
                let v = c.iter().map(|x| x.as_f64() * range).collect();
                ImageBuffer::from_clamped(s[2], s[3], v, range)
            })
            .collect()
    }

    /// Exact storage as an `[H, W]` f64 FATN tensor. The range is not
    /// stored; readers assume [`DEFAULT_RANGE`].
    pub fn write_fatn(&self, path: &Path) -> Result<()> {
        let t = Tensor::<f64>::new(&[self.height, self.width], self.data.clone())?;
        fatn::write_file(path, &t)
    }

    pub fn read_fatn(path: &Path) -> Result<Self> {
        let t = fatn::read_file::<f64>(path)?;
        if t.rank() != 2 {
            return Err(Error::format(
                path.display().to_string(),
                format!("image tensor must be rank 2, got shape {:?}", t.shape()),
            ));
        }
        ImageBuffer::new(t.shape()[0], t.shape()[1], t.to_vec(), DEFAULT_RANGE)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }

    /// 8-bit binary PGM (`P5`), values rounded and scaled to 0..=255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.data
                .iter()
                .map(|v| (v / self.range * 255.0).round().clamp(0.0, 255.0) as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn from_pgm(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |m: String| Error::format(origin, m);
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(bad(format!("unsupported magic {:?}, expected P5", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad header field {s:?}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad(format!("only 8-bit PGM is supported, maxval {maxval}")));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let n = width * height;
        if bytes.len() < pos + n {
            return Err(bad(format!("raster has {} bytes, need {n}", bytes.len().saturating_sub(pos))));
        }
        let scale = DEFAULT_RANGE / maxval as f64;
        let data = bytes[pos..pos + n].iter().map(|&b| b as f64 * scale).collect();
        ImageBuffer::new(height, width, data, DEFAULT_RANGE).map_err(|e| bad(e.to_string()))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ImageBuffer::from_pgm(&bytes, &path.display().to_string())
    }

    /// Reads `.fatn` or `.pgm` by extension.
    pub fn read_any(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("fatn") => ImageBuffer::read_fatn(path),
            Some("pgm") => ImageBuffer::read_pgm(path),
            _ => Err(Error::format(
                path.display().to_string(),
                "unknown image extension (expected .fatn or .pgm)",
            )),
        }
    }
}
