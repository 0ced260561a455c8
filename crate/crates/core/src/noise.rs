//! Momentum-space white-noise increments.
//!
//! Per time step, every independent mode receives a complex increment whose
//! real and imaginary parts are independent `N(0, D)` with
//! `D = Ω·dt / (2·(2π)^(2·dim))`; every self-conjugate mode receives a real
//! `N(0, 2D)` increment. Dependent modes carry the conjugate of their partner,
//! so `dW(−p) = dW*(p)` holds structurally.
//!
//! Streams are counter based: the generator for slice `k` of trajectory `i`
//! under master seed `s` is a ChaCha8 keyed by `(s, i, k)`. Any slice can be
//! regenerated on its own, and distinct keys give independent streams.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftDirection;

use crate::lattice::{fft_nd, ModeClass, ModeTable};

const STREAM_DOMAIN: u64 = 0x6e66_6e6f_6973_6531; // "nfnoise1"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamSpec {
    pub master_seed: u64,
    pub trajectory_id: u64,
}

impl StreamSpec {
    pub fn new(master_seed: u64, trajectory_id: u64) -> Self {
        StreamSpec { master_seed, trajectory_id }
    }

    /// Generator for one slice of this stream.
    pub fn slice_rng(&self, slice_index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.trajectory_id.to_le_bytes());
        key[16..24].copy_from_slice(&slice_index.to_le_bytes());
        key[24..].copy_from_slice(&STREAM_DOMAIN.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Per-component variance `D = Ω·dt / (2·(2π)^(2·dim))`.
pub fn component_variance(table: &ModeTable, dt: f64) -> f64 {
    let spec = table.spec();
    spec.volume() * dt / (2.0 * spec.two_pi_dim().powi(2))
}

/// One time step of noise, indexed by half-space slot.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSlice {
    pub dt: f64,
    pub increments: Vec<Complex64>,
}

impl NoiseSlice {
    pub fn zeros(table: &ModeTable, dt: f64) -> Self {
        NoiseSlice { dt, increments: vec![Complex64::new(0.0, 0.0); table.half_space().len()] }
    }

    /// Increment over the union of two consecutive steps.
    pub fn merged(&self, next: &NoiseSlice) -> NoiseSlice {
        NoiseSlice {
            dt: self.dt + next.dt,
            increments: self.increments.iter().zip(&next.increments).map(|(a, b)| a + b).collect(),
        }
    }
}

pub fn sample_slice(table: &ModeTable, dt: f64, stream: StreamSpec, slice_index: u64) -> NoiseSlice {
    let sigma = component_variance(table, dt).sqrt();
    let mut rng = stream.slice_rng(slice_index);
    let increments = table
        .half_space()
        .iter()
        .map(|&id| match table.mode(id).class {
            ModeClass::SelfConjugate => {
                let z: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(std::f64::consts::SQRT_2 * sigma * z, 0.0)
            }
            _ => {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(sigma * re, sigma * im)
            }
        })
        .collect();
    NoiseSlice { dt, increments }
}

/// Per-cell increments `dW(x) = ((2π)^d/N) Σ_p dW(p) e^{−ip·x}`, flattened
/// row-major like [`ModeTable::to_position_field`].
pub fn to_position_noise(slice: &NoiseSlice, table: &ModeTable) -> Vec<f64> {
    let spec = table.spec();
    let full = table.expand_half_space(&slice.increments);
    let n = spec.sites as i64;
    let mut grid = vec![Complex64::new(0.0, 0.0); table.len()];
    for m in table.modes() {
        let bin = m.index[..spec.dim].iter().fold(0usize, |acc, &c| acc * spec.sites + c.rem_euclid(n) as usize);
        grid[bin] = full[m.id];
    }
    fft_nd(&mut grid, spec.sites, spec.dim, FftDirection::Forward);
    let scale = spec.two_pi_dim() / table.len() as f64;
    grid.into_iter().map(|z| z.re * scale).collect()
}

/// Source of noise slices addressed by step index.
pub trait NoiseSource {
    fn dt(&self) -> f64;
    fn slice(&self, step: usize) -> NoiseSlice;
}

/// Fresh noise drawn from a seeded stream.
#[derive(Debug, Clone)]
pub struct StreamNoise<'a> {
    pub table: &'a ModeTable,
    pub dt: f64,
    pub stream: StreamSpec,
}

impl NoiseSource for StreamNoise<'_> {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn slice(&self, step: usize) -> NoiseSlice {
        sample_slice(self.table, self.dt, self.stream, step as u64)
    }
}

/// Coarse-grid view of a fine stream: step `k` is the sum of fine slices
/// `k·factor .. (k+1)·factor`, so grids of different `dt` see one Brownian path.
#[derive(Debug, Clone)]
pub struct CoarsenedNoise<'a> {
    pub fine: StreamNoise<'a>,
    pub factor: usize,
}

impl NoiseSource for CoarsenedNoise<'_> {
    fn dt(&self) -> f64 {
        self.fine.dt * self.factor as f64
    }

    fn slice(&self, step: usize) -> NoiseSlice {
        let start = step * self.factor;
        let mut acc = self.fine.slice(start);
        for k in 1..self.factor {
            acc = acc.merged(&self.fine.slice(start + k));
        }
        acc
    }
}

/// Replays recorded slices; steps past the end yield zero noise.
#[derive(Debug, Clone)]
pub struct RecordedNoise<'a> {
    pub dt: f64,
    pub slices: &'a [NoiseSlice],
}

impl NoiseSource for RecordedNoise<'_> {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn slice(&self, step: usize) -> NoiseSlice {
        match self.slices.get(step) {
            Some(s) => s.clone(),
            None => NoiseSlice {
                dt: self.dt,
                increments: vec![Complex64::new(0.0, 0.0); self.slices.first().map_or(0, |s| s.increments.len())],
            },
        }
    }
}

/// Noise that is identically zero (the λ-independent deterministic limit).
#[derive(Debug, Clone)]
pub struct Silence<'a> {
    pub table: &'a ModeTable,
    pub dt: f64,
}

impl NoiseSource for Silence<'_> {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn slice(&self, _step: usize) -> NoiseSlice {
        NoiseSlice::zeros(self.table, self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_mode_table, LatticeSpec};

    fn table(dim: usize, sites: usize) -> ModeTable {
        build_mode_table(LatticeSpec::new(dim, sites, 3.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_dt_gives_zero_noise() {
        let t = table(2, 4);
        let s = sample_slice(&t, 0.0, StreamSpec::new(1, 2), 3);
        assert!(s.increments.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn slices_are_deterministic() {
        let t = table(1, 8);
        let a = sample_slice(&t, 0.01, StreamSpec::new(42, 5), 7);
        let b = sample_slice(&t, 0.01, StreamSpec::new(42, 5), 7);
        let bits = |s: &NoiseSlice| -> Vec<u64> {
            s.increments.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = sample_slice(&t, 0.01, StreamSpec::new(42, 6), 7);
        assert_ne!(bits(&a), bits(&c));
        let d = sample_slice(&t, 0.01, StreamSpec::new(42, 5), 8);
        assert_ne!(bits(&a), bits(&d));
    }

    #[test]
    fn self_conjugate_increments_are_real() {
        let t = table(2, 4);
        let s = sample_slice(&t, 0.1, StreamSpec::new(3, 0), 0);
        for (slot, &id) in t.half_space().iter().enumerate() {
            if t.mode(id).class == ModeClass::SelfConjugate {
                assert_eq!(s.increments[slot].im, 0.0);
            }
        }
    }

    #[test]
    fn zero_slice_gives_zero_position_noise() {
        let t = table(2, 4);
        assert!(to_position_noise(&NoiseSlice::zeros(&t, 0.1), &t).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarsened_noise_sums_fine_slices() {
        let t = table(1, 4);
        let fine = StreamNoise { table: &t, dt: 0.01, stream: StreamSpec::new(9, 1) };
        let coarse = CoarsenedNoise { fine: fine.clone(), factor: 2 };
        let c = coarse.slice(3);
        let a = fine.slice(6);
        let b = fine.slice(7);
        assert!((coarse.dt() - 0.02).abs() < 1e-15);
        for k in 0..c.increments.len() {
            assert_eq!(c.increments[k], a.increments[k] + b.increments[k]);
        }
    }
}
