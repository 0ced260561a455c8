//! Periodic momentum lattice.
//!
//! A cubic box of side `L` with `N_s` sites per axis carries the momenta
//! `p = (2π/L)·n` with integer components `n_j ∈ (−N_s/2, N_s/2]`. Reality of
//! the field pairs every mode with its conjugate `−n (mod N_s)`. Modes that are
//! their own conjugate (zero mode, Nyquist planes) carry a real amplitude; the
//! remaining modes split into an independent half and its conjugate image.
//!
//! Continuum integrals are transcribed with one dictionary throughout the
//! crate: `∫dᵈp → ((2π)ᵈ/Ω) Σ_p` over every lattice mode, and the
//! momentum-space delta at zero becomes `Ω/(2π)ᵈ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Relative tolerance used when checking conjugation symmetry of amplitudes.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub dim: usize,
    pub sites: usize,
    pub length: f64,
    pub mass: f64,
}

impl LatticeSpec {
    pub fn new(dim: usize, sites: usize, length: f64, mass: f64) -> Result<Self> {
        let spec = LatticeSpec { dim, sites, length, mass };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DIM).contains(&self.dim) {
            return Err(Error::InvalidLattice(format!("dim must be 1, 2 or 3 (got {})", self.dim)));
        }
        if self.sites < 2 {
            return Err(Error::InvalidLattice(format!("sites must be >= 2 (got {})", self.sites)));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::InvalidLattice(format!("length must be > 0 (got {})", self.length)));
        }
        if !(self.mass.is_finite() && self.mass >= 0.0) {
            return Err(Error::InvalidLattice(format!("mass must be >= 0 (got {})", self.mass)));
        }
        Ok(())
    }

    /// Box volume `Ω = L^dim`.
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Momentum spacing `Δp = 2π/L`.
    pub fn momentum_spacing(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Lattice spacing `a = L/N_s`.
    pub fn spacing(&self) -> f64 {
        self.length / self.sites as f64
    }

    /// Volume of one position cell, `a^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Volume of one momentum cell, `(2π)^dim/Ω`.
    pub fn momentum_cell(&self) -> f64 {
        self.momentum_spacing().powi(self.dim as i32)
    }

    pub fn full_mode_count(&self) -> usize {
        self.sites.pow(self.dim as u32)
    }

    /// `(2π)^dim`.
    pub fn two_pi_dim(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    /// The weight `κ = (2π)^(2·dim)/Ω` multiplying every lattice sum in the
    /// Gaussian exponent and the momentum-space Hamiltonian.
    pub fn kappa(&self) -> f64 {
        self.two_pi_dim().powi(2) / self.volume()
    }
}

/// Relativistic dispersion `sqrt(p·p + m²)`.
pub fn dispersion(p: &[f64], m: f64) -> f64 {
    let p2: f64 = p.iter().map(|c| c * c).sum();
    (p2 + m * m).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeClass {
    Independent,
    SelfConjugate,
    Dependent,
}

impl ModeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeClass::Independent => "independent",
            ModeClass::SelfConjugate => "self_conjugate",
            ModeClass::Dependent => "dependent",
        }
    }

    /// Number of full-lattice modes represented by one half-space entry.
    pub fn multiplicity(&self) -> usize {
        match self {
            ModeClass::Independent => 2,
            ModeClass::SelfConjugate => 1,
            ModeClass::Dependent => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub id: usize,
    /// Integer index vector; components beyond `dim` are zero.
    pub index: [i64; MAX_DIM],
    pub momentum: [f64; MAX_DIM],
    pub energy: f64,
    pub class: ModeClass,
    /// Id of the mode at `−n (mod N_s)`; equal to `id` for self-conjugate modes.
    pub partner: usize,
}

/// Every lattice mode in lexicographic order of `n`, with conjugate links and
/// the half-space selection.
#[derive(Debug, Clone)]
pub struct ModeTable {
    spec: LatticeSpec,
    modes: Vec<Mode>,
    half_space: Vec<usize>,
    half_slot: Vec<Option<usize>>,
}

fn wrap(n: i64, sites: i64) -> i64 {
    // representative in (−N/2, N/2]
    let half = sites / 2;
    let mut r = n.rem_euclid(sites);
    if r > half {
        r -= sites;
    }
    r
}

fn lex_index(index: &[i64], sites: usize) -> usize {
    // components run over (−N/2, N/2] in increasing order
    let low = -((sites as i64 - 1) / 2);
    index.iter().fold(0usize, |acc, &c| acc * sites + (c - low) as usize)
}

pub fn build_mode_table(spec: LatticeSpec) -> Result<ModeTable> {
    spec.validate()?;
    let sites = spec.sites as i64;
    let low = -((sites - 1) / 2);
    let high = sites / 2;
    let dim = spec.dim;
    let dp = spec.momentum_spacing();

    let total = spec.full_mode_count();
    let mut modes = Vec::with_capacity(total);
    let mut counter = vec![low; dim];
    for id in 0..total {
        let mut index = [0i64; MAX_DIM];
        index[..dim].copy_from_slice(&counter);
        let mut momentum = [0.0; MAX_DIM];
        for j in 0..dim {
            momentum[j] = dp * index[j] as f64;
        }
        let conj: Vec<i64> = counter.iter().map(|&c| wrap(-c, sites)).collect();
        let partner = lex_index(&conj, spec.sites);
        // Lexicographic comparison against the conjugate representative. This
        // reduces to "first nonzero component positive" away from the Nyquist
        // planes and stays a strict total rule on them.
        let class = match counter.as_slice().cmp(conj.as_slice()) {
            std::cmp::Ordering::Equal => ModeClass::SelfConjugate,
            std::cmp::Ordering::Greater => ModeClass::Independent,
            std::cmp::Ordering::Less => ModeClass::Dependent,
        };
        modes.push(Mode { id, index, momentum, energy: dispersion(&momentum[..dim], spec.mass), class, partner });

        for j in (0..dim).rev() {
            if counter[j] < high {
                counter[j] += 1;
                break;
            }
            counter[j] = low;
        }
    }

    let half_space: Vec<usize> = modes.iter().filter(|m| m.class != ModeClass::Dependent).map(|m| m.id).collect();
    let mut half_slot = vec![None; total];
    for (slot, &id) in half_space.iter().enumerate() {
        half_slot[id] = Some(slot);
    }
    Ok(ModeTable { spec, modes, half_space, half_slot })
}

impl ModeTable {
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, id: usize) -> &Mode {
        &self.modes[id]
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Ids of the independent and self-conjugate modes, in table order. These
    /// are the degrees of freedom carried by kernel and noise data.
    pub fn half_space(&self) -> &[usize] {
        &self.half_space
    }

    /// Position of a mode within [`ModeTable::half_space`], if it belongs there.
    pub fn half_slot(&self, id: usize) -> Option<usize> {
        self.half_slot[id]
    }

    pub fn conjugate(&self, id: usize) -> usize {
        self.modes[id].partner
    }

    pub fn count(&self, class: ModeClass) -> usize {
        self.modes.iter().filter(|m| m.class == class).count()
    }

    pub fn max_energy(&self) -> f64 {
        self.modes.iter().map(|m| m.energy).fold(0.0, f64::max)
    }

    /// Maps a half-space vector onto the full lattice, filling dependent modes
    /// with the conjugate of their partner.
    pub fn expand_half_space(&self, values: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.half_space.len());
        self.modes
            .iter()
            .map(|m| match self.half_slot[m.id] {
                Some(slot) => values[slot],
                None => values[self.half_slot[m.partner].expect("partner is independent")].conj(),
            })
            .collect()
    }

    /// Flat FFT bin of a mode (row-major over `n_j mod N_s`).
    fn bin(&self, id: usize) -> usize {
        let n = self.spec.sites as i64;
        self.modes[id].index[..self.spec.dim]
            .iter()
            .fold(0usize, |acc, &c| acc * self.spec.sites + c.rem_euclid(n) as usize)
    }

    /// Largest violation of `a(−p) = a*(p)` relative to the largest amplitude.
    pub fn symmetry_violation(&self, amplitudes: &[Complex64]) -> Result<(usize, f64)> {
        if amplitudes.len() != self.len() {
            return Err(Error::Mismatch(format!("expected {} amplitudes, got {}", self.len(), amplitudes.len())));
        }
        let scale = amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max);
        let mut worst = (0, 0.0);
        for m in &self.modes {
            let dev = (amplitudes[m.partner] - amplitudes[m.id].conj()).norm();
            let rel = if scale > 0.0 { dev / scale } else { 0.0 };
            if rel > worst.1 {
                worst = (m.id, rel);
            }
        }
        Ok(worst)
    }

    /// Real position-space field `φ(x) = ((2π)^d/Ω) Σ_p a(p) e^{ip·x}` on the
    /// grid `x = a·j`, flattened row-major in `j`.
    pub fn to_position_field(&self, amplitudes: &[Complex64]) -> Result<Vec<f64>> {
        let (mode, deviation) = self.symmetry_violation(amplitudes)?;
        if deviation > SYMMETRY_TOLERANCE {
            return Err(Error::AsymmetricAmplitudes { mode, deviation });
        }
        let mut grid = vec![Complex64::new(0.0, 0.0); self.len()];
        for m in &self.modes {
            grid[self.bin(m.id)] = amplitudes[m.id];
        }
        fft_nd(&mut grid, self.spec.sites, self.spec.dim, FftDirection::Inverse);
        let scale = self.spec.momentum_cell();
        Ok(grid.into_iter().map(|z| z.re * scale).collect())
    }

    /// Fourier amplitudes `φ(p) = (2π)^(−d) a^d Σ_x φ(x) e^{−ip·x}` indexed by
    /// mode id. Inverse of [`ModeTable::to_position_field`].
    pub fn from_position_field(&self, field: &[f64]) -> Result<Vec<Complex64>> {
        if field.len() != self.len() {
            return Err(Error::Mismatch(format!("expected {} field values, got {}", self.len(), field.len())));
        }
        let mut grid: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut grid, self.spec.sites, self.spec.dim, FftDirection::Forward);
        let scale = self.spec.cell_volume() / self.spec.two_pi_dim();
        Ok(self.modes.iter().map(|m| grid[self.bin(m.id)] * scale).collect())
    }

    /// Position of grid point `j` (flat row-major index).
    pub fn position(&self, flat: usize) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        let mut rest = flat;
        for j in (0..self.spec.dim).rev() {
            out[j] = (rest % self.spec.sites) as f64 * self.spec.spacing();
            rest /= self.spec.sites;
        }
        out
    }
}

/// Unnormalized multidimensional DFT over a row-major `sites^dim` grid.
pub(crate) fn fft_nd(data: &mut [Complex64], sites: usize, dim: usize, direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft(sites, direction);
    let mut line = vec![Complex64::new(0.0, 0.0); sites];
    for axis in 0..dim {
        let stride = sites.pow((dim - 1 - axis) as u32);
        let block = stride * sites;
        for start in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + k * stride];
                }
                fft.process(&mut line);
                for (k, value) in line.iter().enumerate() {
                    data[base + k * stride] = *value;
                }
            }
        }
    }
}
