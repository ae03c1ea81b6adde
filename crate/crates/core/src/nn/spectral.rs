//! Spectral normalization by power iteration.
//!
//! A weight of shape `[out, ...]` is viewed as the matrix `W [out, rest]`.
//! The state keeps estimates `u` (left) and `v` (right singular vectors) that
//! persist across training steps; each update runs `v ← Wᵀu/‖Wᵀu‖`,
//! `u ← Wv/‖Wv‖`. The normalized weight is `W / σ̂` with `σ̂ = uᵀWv`, where
//! `u` and `v` are treated as constants and the gradient flows through both
//! `W` and `σ̂(W)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Estimates below this are treated as a zero matrix.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNormState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Power-iteration updates per normalization call.
    pub power_iterations: usize,
    /// Set when the last call saw `σ̂ < SIGMA_FLOOR` and left the weight untouched.
    pub degenerate: bool,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-300 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn matrix_dims(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Dimension(format!(
            "spectral normalization needs a weight of rank >= 2, got {shape:?}"
        )));
    }
    let rows = shape[0];
    Ok((rows, shape[1..].iter().product()))
}

impl SpectralNormState {
    /// Random unit `u`, `v` for a weight of the given shape.
    pub fn new(shape: &[usize], power_iterations: usize, rng: &mut impl Rng) -> Result<Self> {
        let (rows, cols) = matrix_dims(shape)?;
        let mut u: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut u);
        normalize(&mut v);
        Ok(SpectralNormState {
            u,
            v,
            power_iterations,
            degenerate: false,
        })
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if self.u.len() != rows || self.v.len() != cols {
            return Err(Error::Dimension(format!(
                "spectral state is {}x{}, weight is {rows}x{cols}",
                self.u.len(),
                self.v.len()
            )));
        }
        Ok(())
    }

    /// Runs `iterations` power-iteration updates against the row-major
    /// `rows x cols` matrix `w`.
    pub fn update(&mut self, w: &[f64], rows: usize, cols: usize, iterations: usize) -> Result<()> {
        self.check(rows, cols)?;
        for _ in 0..iterations {
            let mut v = vec![0.0; cols];
            for (r, &ur) in self.u.iter().enumerate() {
                for (vc, &wv) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                    *vc += wv * ur;
                }
            }
            normalize(&mut v);
            let mut u: Vec<f64> = (0..rows)
                .map(|r| w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            normalize(&mut u);
            self.u = u;
            self.v = v;
        }
        Ok(())
    }

    /// `σ̂ = uᵀ W v` for the current vectors.
    pub fn sigma(&self, w: &[f64], rows: usize, cols: usize) -> Result<f64> {
        self.check(rows, cols)?;
        Ok((0..rows)
            .map(|r| {
                self.u[r]
                    * w[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(&self.v)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .sum())
    }

    /// Iterates until successive estimates of `σ̂` change by less than
    /// `rel_tol` (relative), or `max_iterations` is reached. Returns `σ̂`.
    pub fn converge(&mut self, w: &[f64], rows: usize, cols: usize, rel_tol: f64, max_iterations: usize) -> Result<f64> {
        let mut prev = self.sigma(w, rows, cols)?;
        for _ in 0..max_iterations {
            self.update(w, rows, cols, 1)?;
            let s = self.sigma(w, rows, cols)?;
            if (s - prev).abs() <= rel_tol * s.abs().max(SIGMA_FLOOR) {
                return Ok(s);
            }
            prev = s;
        }
        Ok(prev)
    }
}

/// One (configurable) power-iteration update, then `W / σ̂`.
pub fn spectral_normalize<T: Element>(w: &Tensor<T>, state: &mut SpectralNormState) -> Result<Tensor<T>> {
    let (rows, cols) = matrix_dims(w.shape())?;
    let wd: Vec<f64> = w.data().iter().map(|x| x.as_f64()).collect();
    state.update(&wd, rows, cols, state.power_iterations)?;
    let (out, degenerate) = normalize_with(w, state, &wd, rows, cols)?;
    if degenerate && !state.degenerate {
        log::warn!("spectral norm estimate below {SIGMA_FLOOR:e}; weight left unnormalized");
    }
    state.degenerate = degenerate;
    Ok(out)
}

/// `W / σ̂` using the stored vectors without updating them.
pub fn spectral_normalize_frozen<T: Element>(w: &Tensor<T>, state: &SpectralNormState) -> Result<Tensor<T>> {
    let (rows, cols) = matrix_dims(w.shape())?;
    let wd: Vec<f64> = w.data().iter().map(|x| x.as_f64()).collect();
    Ok(normalize_with(w, state, &wd, rows, cols)?.0)
}

fn normalize_with<T: Element>(
    w: &Tensor<T>,
    state: &SpectralNormState,
    wd: &[f64],
    rows: usize,
    cols: usize,
) -> Result<(Tensor<T>, bool)> {
    let sigma = state.sigma(wd, rows, cols)?;
    if sigma.abs() < SIGMA_FLOOR {
        return Ok((w.clone(), true));
    }
    let outer: Vec<T> = state
        .u
        .iter()
        .flat_map(|&ur| state.v.iter().map(move |&vc| T::of(ur * vc)))
        .collect();
    let outer = Tensor::new(w.shape(), outer)?;
    let sigma_t = w.mul(&outer)?.sum();
    Ok((w.div(&sigma_t)?, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_three_one() {
        let w = Tensor::<f64>::new(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = SpectralNormState::new(w.shape(), 20, &mut rng).unwrap();
        let wn = spectral_normalize(&w, &mut st).unwrap();
        let sigma = st.sigma(w.data(), 2, 2).unwrap();
        assert!((sigma - 3.0).abs() < 1e-4, "sigma {sigma}");
        let d = wn.data();
        assert!((d[0] - 1.0).abs() < 1e-4 && (d[3] - 1.0 / 3.0).abs() < 1e-4);
        let un = (st.u.iter().map(|x| x * x).sum::<f64>()).sqrt();
        assert!((un - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_weight_unchanged() {
        let (c, s) = (0.6f64, 0.8f64);
        let w = Tensor::<f64>::new(&[2, 2], vec![c, -s, s, c]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut st = SpectralNormState::new(w.shape(), 5, &mut rng).unwrap();
        let wn = spectral_normalize(&w, &mut st).unwrap();
        for (a, b) in wn.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_weight_passes_through() {
        let w = Tensor::<f32>::zeros(&[3, 2, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = SpectralNormState::new(w.shape(), 1, &mut rng).unwrap();
        let wn = spectral_normalize(&w, &mut st).unwrap();
        assert!(st.degenerate);
        assert_eq!(wn.to_vec(), w.to_vec());
    }

    #[test]
    fn state_shape_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = SpectralNormState::new(&[2, 3], 1, &mut rng).unwrap();
        let w = Tensor::<f64>::zeros(&[3, 3]);
        assert!(spectral_normalize(&w, &mut st).is_err());
        assert!(SpectralNormState::new(&[4], 1, &mut rng).is_err());
    }
}
