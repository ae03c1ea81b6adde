//! Seeded MRI-style phantoms: a bright outer ellipse holding smaller
//! overlapping ellipses of varied intensity, soft edges, and a faint
//! sinusoidal texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImageBuffer, DEFAULT_RANGE};
use crate::error::{Error, Result};

pub const MIN_SIZE: usize = 32;

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    /// Soft membership in `[0, 1]`; edge width about one pixel.
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (c * dx + s * dy) / self.ax;
        let v = (-s * dx + c * dy) / self.ay;
        let r = (u * u + v * v).sqrt();
        let dist = (r - 1.0) * self.ax.min(self.ay);
        0.5 * (1.0 - (dist / 0.75).tanh())
    }
}

pub fn synthesize_phantom(seed: u64, size: usize) -> Result<ImageBuffer> {
    if size < MIN_SIZE {
        return Err(Error::Contract(format!("phantom size must be >= {MIN_SIZE}, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let mid = n / 2.0;
    let outer = Ellipse {
        cy: mid + rng.random_range(-0.04..0.04) * n,
        cx: mid + rng.random_range(-0.04..0.04) * n,
        ay: rng.random_range(0.36..0.46) * n,
        ax: rng.random_range(0.30..0.42) * n,
        angle: rng.random_range(-0.3..0.3),
        value: rng.random_range(70.0..110.0),
    };
    let inner_count = rng.random_range(5..=9);
    let inner: Vec<Ellipse> = (0..inner_count)
        .map(|_| {
            let r = rng.random_range(0.0..0.6);
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Ellipse {
                cy: outer.cy + r * outer.ay * t.sin(),
                cx: outer.cx + r * outer.ax * t.cos(),
                ay: rng.random_range(0.04..0.2) * n,
                ax: rng.random_range(0.04..0.2) * n,
                angle: rng.random_range(0.0..std::f64::consts::PI),
                value: if rng.random_bool(0.7) {
                    rng.random_range(30.0..120.0)
                } else {
                    -rng.random_range(20.0..60.0)
                },
            }
        })
        .collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let freq = rng.random_range(0.25..0.9);
            let dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
            (
                freq * dir.cos(),
                freq * dir.sin(),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(2.0..6.0),
            )
        })
        .collect();

    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let body = outer.coverage(py, px);
            let mut v = outer.value * body;
            for e in &inner {
                v += e.value * e.coverage(py, px) * body;
            }
            let texture: f64 = waves
                .iter()
                .map(|(fy, fx, ph, amp)| amp * (fy * py + fx * px + ph).sin())
                .sum();
            v += texture * body;
            data.push(v);
        }
    }
    ImageBuffer::from_clamped(size, size, data, DEFAULT_RANGE)
}
