//! Physical quantities reconstructed from a kernel state.
//!
//! With `κ = (2π)^(2·dim)/Ω`, an independent mode pair has the probability
//! density `exp(−2κ V_R [(φ_R − c_R)² + (φ_I − c_I)²])`, so each quadrature
//! has variance `1/(4κ V_R)` around the centre `(μ₊* + μ₋)/(2V_R)`. A
//! self-conjugate mode is a single real coordinate with density
//! `exp(−κ V_R (φ − c)²)` and variance `1/(2κ V_R)`.
//!
//! The energy splits into the μ-independent part
//! `E0 = Σ_p (E_p² + |V₀|²)/(4 Re V₀)`, which is conserved, and the
//! noise-induced part
//!
//! ```text
//! E1 = (κ/2) Σ_p [ (E_p² − V²)|φ̄(p)|² − μ(p)μ(−p) + 2 μ(p) V φ̄(p) ]
//! ```
//!
//! summed over all lattice modes. E1 is real algebraically; its imaginary
//! residue is checked as a guard against convention errors.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::{InitialKernel, KernelInit, KernelState, ModeLaw};
use crate::lattice::ModeTable;
use crate::quadrature;

/// Relative tolerance on the imaginary residue of E1.
pub const REALITY_TOLERANCE: f64 = 1e-10;

fn check_kernel(table: &ModeTable, state: &KernelState, slot: usize) -> Result<Complex64> {
    let v = state.v[slot];
    let id = table.half_space()[slot];
    let scale = v.norm() + table.mode(id).energy;
    if !(v.re.is_finite() && v.re > 1e-14 * scale) {
        return Err(Error::DegenerateKernel { mode: id, re_v: v.re });
    }
    Ok(v)
}

/// `⟨φ(p)⟩ = (μ(p)* + μ(−p)) / (2 Re V)` for the half-space slot.
pub fn field_expectation(table: &ModeTable, state: &KernelState, slot: usize) -> Result<Complex64> {
    let v = check_kernel(table, state, slot)?;
    Ok((state.mu_plus[slot].conj() + state.mu_minus[slot]) / (2.0 * v.re))
}

/// Gaussian variance of the field amplitude: per quadrature for an
/// independent mode, of the real amplitude for a self-conjugate one.
pub fn field_variance(table: &ModeTable, state: &KernelState, slot: usize) -> Result<f64> {
    let v = check_kernel(table, state, slot)?;
    let id = table.half_space()[slot];
    let kappa = table.spec().kappa();
    let per_quadrature = 1.0 / (4.0 * kappa * v.re);
    Ok(match table.mode(id).class.multiplicity() {
        1 => 2.0 * per_quadrature,
        _ => per_quadrature,
    })
}

/// Field expectation on every lattice mode (dependent modes by conjugation).
pub fn full_field_expectation(table: &ModeTable, state: &KernelState) -> Result<Vec<Complex64>> {
    let half =
        (0..table.half_space().len()).map(|slot| field_expectation(table, state, slot)).collect::<Result<Vec<_>>>()?;
    Ok(table.expand_half_space(&half))
}

/// Centres and per-coordinate variance of the field probability density.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityParams {
    pub center_r: Vec<f64>,
    pub center_i: Vec<f64>,
    pub width: Vec<f64>,
}

pub fn density_params(table: &ModeTable, state: &KernelState) -> Result<DensityParams> {
    let n = table.half_space().len();
    let mut out = DensityParams {
        center_r: Vec::with_capacity(n),
        center_i: Vec::with_capacity(n),
        width: Vec::with_capacity(n),
    };
    for slot in 0..n {
        let c = field_expectation(table, state, slot)?;
        out.center_r.push(c.re);
        out.center_i.push(c.im);
        out.width.push(field_variance(table, state, slot)?);
    }
    Ok(out)
}

/// Conserved μ-independent energy `Σ_p (E_p² + |V₀(p)|²) / (4 Re V₀(p))`.
pub fn energy_free_from_kernels(table: &ModeTable, kernels: &[InitialKernel]) -> Result<f64> {
    let mut total = 0.0;
    for (slot, &id) in table.half_space().iter().enumerate() {
        let mode = table.mode(id);
        let v0 = match kernels[slot] {
            InitialKernel::Finite(v) if v.re > 0.0 => v,
            InitialKernel::Finite(v) => return Err(Error::DegenerateKernel { mode: id, re_v: v.re }),
            InitialKernel::Infinite => return Err(Error::DegenerateKernel { mode: id, re_v: f64::INFINITY }),
        };
        let e2 = mode.energy * mode.energy;
        total += mode.class.multiplicity() as f64 * (e2 + v0.norm_sqr()) / (4.0 * v0.re);
    }
    Ok(total)
}

pub fn energy_free(table: &ModeTable, init: &KernelInit) -> Result<f64> {
    energy_free_from_kernels(table, &init.initial_kernels(table)?)
}

/// Noise-induced energy of one half-space slot (covering its conjugate
/// partner), as a complex number whose imaginary part should vanish.
fn slot_energy_noise(table: &ModeTable, state: &KernelState, slot: usize) -> Result<(Complex64, f64)> {
    let v = state.v[slot];
    let id = table.half_space()[slot];
    let mode = table.mode(id);
    let phi = field_expectation(table, state, slot)?;
    let (plus, minus) = (state.mu_plus[slot], state.mu_minus[slot]);
    let e2 = mode.energy * mode.energy;
    let terms = [(e2 - v * v) * phi.norm_sqr(), -plus * minus, v * (plus * phi + minus * phi.conj())];
    let weight = 0.5 * mode.class.multiplicity() as f64 * table.spec().kappa();
    let value: Complex64 = terms.iter().sum::<Complex64>() * weight;
    let scale = terms.iter().map(|z| z.norm()).sum::<f64>() * weight;
    Ok((value, scale))
}

/// Noise-induced energy E1, summed over the lattice.
pub fn energy_noise(table: &ModeTable, state: &KernelState) -> Result<f64> {
    let mut total = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for slot in 0..table.half_space().len() {
        let (value, s) = slot_energy_noise(table, state, slot)?;
        total += value;
        scale += s;
    }
    if total.im.abs() > REALITY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonRealEnergy { real: total.re, imag: total.im });
    }
    Ok(total.re)
}

/// Per-slot noise-induced energy (for single-mode comparisons).
pub fn mode_energy_noise(table: &ModeTable, state: &KernelState, slot: usize) -> Result<f64> {
    let (value, scale) = slot_energy_noise(table, state, slot)?;
    if value.im.abs() > REALITY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonRealEnergy { real: value.re, imag: value.im });
    }
    Ok(value.re)
}

/// Per-slot conserved energy.
pub fn mode_energy_free(table: &ModeTable, law: &ModeLaw, slot: usize) -> Result<f64> {
    let id = table.half_space()[slot];
    let v0 = match law.v0 {
        InitialKernel::Finite(v) if v.re > 0.0 => v,
        InitialKernel::Finite(v) => return Err(Error::DegenerateKernel { mode: id, re_v: v.re }),
        InitialKernel::Infinite => return Err(Error::DegenerateKernel { mode: id, re_v: f64::INFINITY }),
    };
    let e2 = law.energy * law.energy;
    Ok(table.mode(id).class.multiplicity() as f64 * (e2 + v0.norm_sqr()) / (4.0 * v0.re))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableRecord {
    pub t: f64,
    /// Field expectation per lattice mode.
    pub field_expectation: Vec<Complex64>,
    /// Field variance per lattice mode (see [`field_variance`]).
    pub variance: Vec<f64>,
    pub e0: f64,
    pub e1: f64,
    pub e_total: f64,
    pub e_density: f64,
}

/// All observables of one snapshot; `e0` is the run's conserved energy.
pub fn observe(table: &ModeTable, state: &KernelState, e0: f64) -> Result<ObservableRecord> {
    let field = full_field_expectation(table, state)?;
    let half_var =
        (0..table.half_space().len()).map(|slot| field_variance(table, state, slot)).collect::<Result<Vec<_>>>()?;
    let variance = table
        .modes()
        .iter()
        .map(|m| {
            half_var[table.half_slot(m.id).or_else(|| table.half_slot(m.partner)).expect("half-space covers all modes")]
        })
        .collect();
    let e1 = energy_noise(table, state)?;
    let e_total = e0 + e1;
    Ok(ObservableRecord {
        t: state.t,
        field_expectation: field,
        variance,
        e0,
        e1,
        e_total,
        e_density: e_total / table.spec().volume(),
    })
}

/// Ensemble predictions for `μ₀ = 0`:
/// `(mean[μ(p)μ(−p)], mean[|μ(p)|²])`
/// `= (−(λ²/κ) ∫₀ᵗ P(τ,t)² dτ, (λ²/κ) ∫₀ᵗ |P(τ,t)|² dτ)` with the propagator
/// `P(τ,t) = exp(−i∫_τ^t V)`.
pub fn ensemble_mu_correlators(table: &ModeTable, law: &ModeLaw, lambda: f64, t: f64) -> Result<(Complex64, f64)> {
    if t == 0.0 {
        return Ok((Complex64::new(0.0, 0.0), 0.0));
    }
    let strength = lambda * lambda / table.spec().kappa();
    let prop = |tau: f64| law.propagator(tau, t);
    // surface poles before integrating
    prop(0.0)?;
    let abs_tol = 1e-12 * t.max(1.0);
    let pair = quadrature::integrate(
        |tau| prop(tau).map(|p| p * p).unwrap_or(Complex64::new(f64::NAN, 0.0)),
        0.0,
        t,
        abs_tol,
        1e-11,
    )?;
    let modulus = quadrature::integrate(
        |tau| prop(tau).map(|p| Complex64::new(p.norm_sqr(), 0.0)).unwrap_or(Complex64::new(f64::NAN, 0.0)),
        0.0,
        t,
        abs_tol,
        1e-11,
    )?;
    Ok((-strength * pair, strength * modulus.re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelEngine, Scheme};
    use crate::lattice::{build_mode_table, LatticeSpec};
    use crate::noise::{sample_slice, StreamSpec};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn table() -> ModeTable {
        build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0).unwrap()).unwrap()
    }

    fn state_with(table: &ModeTable, v: Complex64, plus: Complex64, minus: Complex64) -> KernelState {
        let n = table.half_space().len();
        KernelState { step: 0, t: 0.0, v: vec![v; n], mu_plus: vec![plus; n], mu_minus: vec![minus; n] }
    }

    #[test]
    fn expectation_values() {
        let t = table();
        let s = state_with(&t, c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
        assert_eq!(field_expectation(&t, &s, 0).unwrap(), c(0.0, 0.0));
        let s = state_with(&t, c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        assert_eq!(field_expectation(&t, &s, 0).unwrap(), c(0.5, 0.0));
    }

    #[test]
    fn degenerate_kernel_rejected() {
        let t = table();
        let s = state_with(&t, c(0.0, 1.0), c(1.0, 0.0), c(1.0, 0.0));
        assert!(matches!(field_expectation(&t, &s, 0), Err(Error::DegenerateKernel { .. })));
        assert!(matches!(field_variance(&t, &s, 0), Err(Error::DegenerateKernel { .. })));
    }

    #[test]
    fn vacuum_variance() {
        let t = table();
        let engine = KernelEngine::new(&t, &KernelInit::vacuum(), 0.0, Scheme::Exact, 0.1).unwrap();
        let s = engine.initial_state();
        let spec = t.spec();
        for (slot, &id) in t.half_space().iter().enumerate() {
            let e = t.mode(id).energy;
            let per_quad = spec.volume() / (4.0 * spec.two_pi_dim().powi(2) * e);
            let expected = if t.mode(id).class.multiplicity() == 1 { 2.0 * per_quad } else { per_quad };
            assert!((field_variance(&t, &s, slot).unwrap() / expected - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_mu_has_no_noise_energy() {
        let t = table();
        let s = state_with(&t, c(1.3, 0.4), c(0.0, 0.0), c(0.0, 0.0));
        assert_eq!(energy_noise(&t, &s).unwrap(), 0.0);
    }

    #[test]
    fn free_energy_values() {
        let t = build_mode_table(LatticeSpec::new(1, 2, 2.0, 1.0).unwrap()).unwrap();
        let e: Vec<f64> = t.modes().iter().map(|m| m.energy).collect();
        let vac = energy_free(&t, &KernelInit::vacuum()).unwrap();
        assert!((vac - (e[0] + e[1]) / 2.0).abs() < 1e-15);
        let t = table();
        let zero_point: f64 = t.modes().iter().map(|m| m.energy / 2.0).sum();
        for &scale in &[0.5, 1.0, 2.0, 3.0] {
            let e0 = energy_free(&t, &KernelInit::scaled(c(scale, 0.0))).unwrap();
            let expected: f64 = t.modes().iter().map(|m| m.energy * (1.0 + scale * scale) / (4.0 * scale)).sum();
            assert!((e0 - expected).abs() < 1e-12 * expected);
            assert!(e0 >= zero_point - 1e-12);
        }
    }

    #[test]
    fn noisy_step_expectation_matches_hand_expansion() {
        let t = table();
        let (lambda, dt) = (0.2, 0.01);
        let engine = KernelEngine::new(&t, &KernelInit::vacuum(), lambda, Scheme::Exact, dt).unwrap();
        let slice = sample_slice(&t, dt, StreamSpec::new(11, 3), 0);
        let s = engine.evolve(&engine.initial_state(), &slice).unwrap();
        let i = c(0.0, 1.0);
        for (slot, &id) in t.half_space().iter().enumerate() {
            let e = t.mode(id).energy;
            let prop = Complex64::from_polar(1.0, -e * dt);
            let dw = slice.increments[slot];
            let expected = ((i * lambda * prop * dw).conj() + i * lambda * prop * dw.conj()) / (2.0 * e);
            assert!((field_expectation(&t, &s, slot).unwrap() - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn correlator_predictions_at_zero_time_and_vacuum() {
        let t = table();
        let law = ModeLaw { v0: InitialKernel::Finite(c(1.0, 0.0)), energy: 1.0 };
        assert_eq!(ensemble_mu_correlators(&t, &law, 0.1, 0.0).unwrap(), (c(0.0, 0.0), 0.0));
        let time = 3.7;
        let (_, abs2) = ensemble_mu_correlators(&t, &law, 0.1, time).unwrap();
        let spec = t.spec();
        let expected = 0.01 * spec.volume() * time / spec.two_pi_dim().powi(2);
        assert!((abs2 / expected - 1.0).abs() < 1e-12);
    }
}
