//! Reproducible Brownian increments.
//!
//! Every normal variate is a pure function of `(seed, domain, level,
//! stream_id, position)`: a ChaCha8 keystream is keyed by `(seed, domain,
//! level)`, its 64-bit stream selector is the path's `stream_id`, and the
//! word position advances through `(step, component)` in order. Normals come
//! from the inverse CDF, so no draw is ever rejected and the position of each
//! variate is fixed.
//!
//! Increments are held as integer multiples of [`QUANTUM`]. Refining a grid
//! splits each increment by a Brownian-bridge midpoint draw and assigns the
//! second half as the exact integer remainder, so the two fine increments sum
//! to the coarse one with no rounding at all.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc_inv;

use super::TimeGrid;
use crate::error::{Error, Result};

/// Resolution of stored increments, `2^-36 ≈ 1.5e-11`.
pub const QUANTUM: f64 = 1.0 / (1u64 << 36) as f64;

/// Key domains keep increment streams and initial-state streams disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Domain {
    Increments = 1,
    InitialState = 2,
}

/// Inverse of the standard normal CDF.
pub fn std_normal_inv(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Counter-keyed normal variates for one `(seed, domain, level, stream)`.
pub(crate) struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub(crate) fn new(seed: u64, domain: Domain, level: u32, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
        key[16..20].copy_from_slice(&level.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        NormalStream { rng }
    }

    /// Uniform on the open interval (0, 1).
    pub(crate) fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub(crate) fn normal(&mut self) -> f64 {
        std_normal_inv(self.uniform())
    }
}

/// The Brownian motion driving one path, on a base grid refined `level` times.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianDriver {
    seed: u64,
    stream_id: u64,
    noise_dim: usize,
    base: TimeGrid,
    level: u32,
}

impl BrownianDriver {
    pub fn new(seed: u64, stream_id: u64, noise_dim: usize, grid: TimeGrid) -> Result<Self> {
        if noise_dim == 0 {
            return Err(Error::Config("noise dimension must be positive".into()));
        }
        Ok(BrownianDriver { seed, stream_id, noise_dim, base: grid, level: 0 })
    }

    /// The same Brownian path seen on a grid with half the step.
    pub fn refined(&self) -> Self {
        BrownianDriver { level: self.level + 1, ..self.clone() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn grid(&self) -> TimeGrid {
        (0..self.level).fold(self.base, |g, _| g.refine())
    }

    /// Increments in units of [`QUANTUM`], row-major by `(step, component)`.
    pub fn increment_quanta(&self) -> Vec<i64> {
        let l = self.noise_dim;
        let mut grid = self.base;
        let mut stream = NormalStream::new(self.seed, Domain::Increments, 0, self.stream_id);
        let scale = grid.step().sqrt() / QUANTUM;
        let mut q: Vec<i64> = (0..grid.n_steps() * l).map(|_| (scale * stream.normal()).round() as i64).collect();
        for level in 1..=self.level {
            grid = grid.refine();
            // W(mid) - W(start) given the coarse increment D has mean D/2 and
            // variance h_fine/2.
            let bridge = (grid.step() / 2.0).sqrt() / QUANTUM;
            let mut stream = NormalStream::new(self.seed, Domain::Increments, level, self.stream_id);
            let mut fine = vec![0i64; q.len() * 2];
            for (k, coarse) in q.chunks_exact(l).enumerate() {
                for (c, &d) in coarse.iter().enumerate() {
                    let first = (d as f64 / 2.0 + bridge * stream.normal()).round() as i64;
                    fine[2 * k * l + c] = first;
                    fine[(2 * k + 1) * l + c] = d - first;
                }
            }
            q = fine;
        }
        q
    }

    /// Increments `ΔW_k` as floats, row-major by `(step, component)`.
    pub fn increments(&self) -> Vec<f64> {
        self.increment_quanta().into_iter().map(|v| v as f64 * QUANTUM).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn increments_depend_only_on_seed_and_stream() {
        let a = BrownianDriver::new(7, 3, 2, grid(50)).unwrap().increments();
        let b = BrownianDriver::new(7, 3, 2, grid(50)).unwrap().increments();
        let c = BrownianDriver::new(7, 4, 2, grid(50)).unwrap().increments();
        let d = BrownianDriver::new(8, 3, 2, grid(50)).unwrap().increments();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a.len(), 100);
    }

    #[test]
    fn refinement_sums_exactly() {
        let coarse = BrownianDriver::new(11, 0, 2, grid(32)).unwrap();
        let mut prev = coarse.increments();
        let mut driver = coarse;
        for _ in 0..4 {
            driver = driver.refined();
            let fine = driver.increments();
            assert_eq!(fine.len(), prev.len() * 2);
            for k in 0..prev.len() / 2 {
                for c in 0..2 {
                    let sum = fine[2 * k * 2 + c] + fine[(2 * k + 1) * 2 + c];
                    assert_eq!(sum.to_bits(), prev[k * 2 + c].to_bits());
                }
            }
            prev = fine;
        }
        assert_eq!(driver.grid().n_steps(), 32 * 16);
    }

    #[test]
    fn increment_moments() {
        let h = 0.01;
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut n = 0.0;
        for stream in 0..200 {
            let d = BrownianDriver::new(1, stream, 1, TimeGrid::new(1.0, 100).unwrap()).unwrap().refined();
            for v in d.increments() {
                sum += v;
                sq += v * v;
                n += 1.0;
            }
        }
        let var = sq / n - (sum / n).powi(2);
        // fine step is h/2; 40_000 samples, relative SE of variance ≈ 0.7%
        assert!((var / (h / 2.0) - 1.0).abs() < 0.03, "{var}");
        assert!((sum / n).abs() < 4.0 * (h / 2.0 / n).sqrt());
    }

    #[test]
    fn inverse_normal_accuracy() {
        assert_eq!(std_normal_inv(0.5), 0.0);
        assert!((std_normal_inv(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((std_normal_inv(1e-10) + 6.361340902404056).abs() < 1e-9);
    }
}
