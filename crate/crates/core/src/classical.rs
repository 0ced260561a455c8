//! Classical stochastic Klein–Gordon dynamics in momentum space.
//!
//! Each mode obeys `d²φ/dt² + E²φ = λ dW*/dt`. The exact integrator kicks the
//! velocity by `λ dW*` at the left endpoint and then applies the harmonic
//! rotation over the step, matching the kernel engine's kick-then-propagate
//! ordering so the quantum field expectation and the classical field agree
//! on the grid.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{Dynamics, KernelEngine, KernelInit, Scheme};
use crate::lattice::ModeTable;
use crate::noise::{NoiseSlice, NoiseSource};
use crate::observables::field_expectation;

/// Classical field and velocity per half-space slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalState {
    pub step: usize,
    pub t: f64,
    pub phi: Vec<Complex64>,
    pub pi: Vec<Complex64>,
}

impl ClassicalState {
    pub fn at_rest(table: &ModeTable) -> Self {
        let n = table.half_space().len();
        ClassicalState {
            step: 0,
            t: 0.0,
            phi: vec![Complex64::new(0.0, 0.0); n],
            pi: vec![Complex64::new(0.0, 0.0); n],
        }
    }
}

fn check_slice(table: &ModeTable, state: &ClassicalState, slice: &NoiseSlice) -> Result<()> {
    if slice.increments.len() != table.half_space().len() || state.phi.len() != slice.increments.len() {
        return Err(Error::Mismatch("noise slice does not match the lattice".into()));
    }
    Ok(())
}

fn finish(table: &ModeTable, mut next: ClassicalState, dt: f64) -> Result<ClassicalState> {
    if let Some(slot) = (0..next.phi.len()).find(|&k| !(next.phi[k].is_finite() && next.pi[k].is_finite())) {
        return Err(Error::NumericalFailure {
            step: next.step,
            reason: format!("non-finite classical field in mode {}", table.half_space()[slot]),
        });
    }
    next.step += 1;
    next.t = next.step as f64 * dt;
    Ok(next)
}

/// Kick `π += λ dW*`, then rotate `(φ, π)` exactly over `dt`.
pub fn classical_step_exact(
    table: &ModeTable,
    state: &ClassicalState,
    slice: &NoiseSlice,
    lambda: f64,
) -> Result<ClassicalState> {
    check_slice(table, state, slice)?;
    let dt = slice.dt;
    let mut next = state.clone();
    for (slot, &id) in table.half_space().iter().enumerate() {
        let e = table.mode(id).energy;
        let (c, s) = ((e * dt).cos(), (e * dt).sin());
        let sinc = if e == 0.0 { dt } else { s / e };
        let phi = state.phi[slot];
        let pi = state.pi[slot] + lambda * slice.increments[slot].conj();
        next.phi[slot] = phi * c + pi * sinc;
        next.pi[slot] = -phi * (e * s) + pi * c;
    }
    finish(table, next, dt)
}

/// Explicit Euler–Maruyama: `dφ = π dt`, `dπ = −E²φ dt + λ dW*`.
pub fn classical_step_em(
    table: &ModeTable,
    state: &ClassicalState,
    slice: &NoiseSlice,
    lambda: f64,
) -> Result<ClassicalState> {
    check_slice(table, state, slice)?;
    let dt = slice.dt;
    let mut next = state.clone();
    for (slot, &id) in table.half_space().iter().enumerate() {
        let e2 = table.mode(id).energy.powi(2);
        let (phi, pi) = (state.phi[slot], state.pi[slot]);
        next.phi[slot] = phi + pi * dt;
        next.pi[slot] = pi - phi * (e2 * dt) + lambda * slice.increments[slot].conj();
    }
    finish(table, next, dt)
}

pub fn classical_step(
    scheme: Scheme,
    table: &ModeTable,
    state: &ClassicalState,
    slice: &NoiseSlice,
    lambda: f64,
) -> Result<ClassicalState> {
    match scheme {
        Scheme::Exact => classical_step_exact(table, state, slice, lambda),
        Scheme::Euler => classical_step_em(table, state, slice, lambda),
    }
}

/// Classical field energy `(κ/2) Σ_p (|π(p)|² + E_p²|φ(p)|²)` over all modes.
pub fn classical_energy(table: &ModeTable, state: &ClassicalState) -> f64 {
    let kappa = table.spec().kappa();
    table
        .half_space()
        .iter()
        .enumerate()
        .map(|(slot, &id)| {
            let m = table.mode(id);
            0.5 * kappa
                * m.class.multiplicity() as f64
                * (state.pi[slot].norm_sqr() + m.energy.powi(2) * state.phi[slot].norm_sqr())
        })
        .sum()
}

/// Strided classical snapshots from rest.
pub fn run_classical<N: NoiseSource + ?Sized>(
    table: &ModeTable,
    dynamics: &Dynamics,
    noise: &N,
) -> Result<Vec<ClassicalState>> {
    let stride = dynamics.snapshot_stride.max(1);
    let steps = dynamics.steps();
    let mut state = ClassicalState::at_rest(table);
    let mut out = vec![state.clone()];
    for k in 0..steps {
        state = classical_step(dynamics.scheme, table, &state, &noise.slice(k), dynamics.lambda)?;
        if state.step.is_multiple_of(stride) || state.step == steps {
            out.push(state.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EhrenfestReport {
    /// Largest `|φ^(q) − φ_classical|` over time and modes.
    pub max_discrepancy: f64,
    /// `max_discrepancy` divided by the largest classical amplitude seen.
    pub relative_discrepancy: f64,
    pub field_scale: f64,
    pub argmax_t: f64,
    pub argmax_mode: usize,
    pub quantum_scheme: Scheme,
    pub classical_scheme: Scheme,
    pub steps: usize,
}

/// Drives the kernel engine and the classical integrator with the same noise
/// and records the largest gap between `⟨φ(p)⟩` and the classical `φ(p)`.
pub fn ehrenfest_compare<N: NoiseSource + ?Sized>(
    table: &ModeTable,
    init: &KernelInit,
    dynamics: &Dynamics,
    classical_scheme: Scheme,
    noise: &N,
) -> Result<EhrenfestReport> {
    if !init.has_zero_mu() {
        return Err(Error::InvalidArgument(
            "the Ehrenfest comparison needs mu0 = 0 (classical field starts at rest)".into(),
        ));
    }
    if (noise.dt() - dynamics.dt).abs() > 1e-12 * dynamics.dt {
        return Err(Error::Mismatch(format!("noise grid dt {} != dynamics dt {}", noise.dt(), dynamics.dt)));
    }
    let engine = KernelEngine::new(table, init, dynamics.lambda, dynamics.scheme, dynamics.dt)?;
    let mut quantum = engine.initial_state();
    let mut classical = ClassicalState::at_rest(table);
    let mut report = EhrenfestReport {
        max_discrepancy: 0.0,
        relative_discrepancy: 0.0,
        field_scale: 0.0,
        argmax_t: 0.0,
        argmax_mode: table.half_space().first().copied().unwrap_or(0),
        quantum_scheme: dynamics.scheme,
        classical_scheme,
        steps: dynamics.steps(),
    };
    for k in 0..dynamics.steps() {
        let slice = noise.slice(k);
        engine.advance(&mut quantum, &slice)?;
        classical = classical_step(classical_scheme, table, &classical, &slice, dynamics.lambda)?;
        for (slot, &id) in table.half_space().iter().enumerate() {
            let q = field_expectation(table, &quantum, slot)?;
            let cl = classical.phi[slot];
            report.field_scale = report.field_scale.max(cl.norm());
            let gap = (q - cl).norm();
            if gap > report.max_discrepancy {
                report.max_discrepancy = gap;
                report.argmax_t = quantum.t;
                report.argmax_mode = id;
            }
        }
    }
    report.relative_discrepancy =
        if report.field_scale > 0.0 { report.max_discrepancy / report.field_scale } else { report.max_discrepancy };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_mode_table, LatticeSpec};
    use crate::noise::{sample_slice, Silence, StreamNoise, StreamSpec};
    use std::f64::consts::PI;

    fn single_mode_table() -> ModeTable {
        // N_s = 2, m = 1, L chosen so both modes exist; slot 0 is the zero mode with E = 1
        build_mode_table(LatticeSpec::new(1, 2, 2.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn quarter_period_rotation() {
        let table = single_mode_table();
        let mut state = ClassicalState::at_rest(&table);
        state.phi[0] = Complex64::new(1.0, 0.0);
        let slice = NoiseSlice::zeros(&table, PI / 2.0);
        let next = classical_step_exact(&table, &state, &slice, 0.0).unwrap();
        assert!((next.phi[0] - Complex64::new(0.0, 0.0)).norm() < 1e-15);
        assert!((next.pi[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn free_rotation_conserves_energy() {
        let table = build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0).unwrap()).unwrap();
        let mut state = ClassicalState::at_rest(&table);
        for (slot, p) in state.phi.iter_mut().enumerate() {
            *p = Complex64::new(0.1 * slot as f64, -0.05);
        }
        // self-conjugate amplitudes are real
        for (slot, &id) in table.half_space().iter().enumerate() {
            if table.mode(id).class.multiplicity() == 1 {
                state.phi[slot].im = 0.0;
            }
        }
        let e0 = classical_energy(&table, &state);
        let slice = NoiseSlice::zeros(&table, 0.01);
        for _ in 0..100 {
            let next = classical_step_exact(&table, &state, &slice, 0.0).unwrap();
            let e = classical_energy(&table, &next);
            assert!((e / classical_energy(&table, &state) - 1.0).abs() < 1e-12);
            state = next;
        }
        assert!((classical_energy(&table, &state) / e0 - 1.0).abs() < 1e-11);
    }

    #[test]
    fn one_step_from_rest() {
        let table = build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0).unwrap()).unwrap();
        let (lambda, dt) = (0.1, 0.02);
        let slice = sample_slice(&table, dt, StreamSpec::new(2, 2), 0);
        let next = classical_step_exact(&table, &ClassicalState::at_rest(&table), &slice, lambda).unwrap();
        for (slot, &id) in table.half_space().iter().enumerate() {
            let e = table.mode(id).energy;
            let expected = lambda * slice.increments[slot].conj() * (e * dt).sin() / e;
            assert!((next.phi[slot] - expected).norm() < 1e-16);
        }
    }

    #[test]
    fn euler_step_without_noise() {
        let table = single_mode_table();
        let mut state = ClassicalState::at_rest(&table);
        state.phi[0] = Complex64::new(0.5, 0.0);
        state.pi[0] = Complex64::new(0.2, 0.0);
        let dt = 0.1;
        let next = classical_step_em(&table, &state, &NoiseSlice::zeros(&table, dt), 0.0).unwrap();
        assert!((next.phi[0].re - (0.5 + 0.2 * dt)).abs() < 1e-15);
        assert!((next.pi[0].re - (0.2 - 0.5 * dt)).abs() < 1e-15);
        let rest =
            classical_step_em(&table, &ClassicalState::at_rest(&table), &NoiseSlice::zeros(&table, dt), 0.3).unwrap();
        assert!(rest.phi.iter().chain(&rest.pi).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn silent_comparison_is_identically_zero() {
        let table = build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0).unwrap()).unwrap();
        let dynamics = Dynamics { dt: 0.01, t_max: 1.0, lambda: 0.0, scheme: Scheme::Exact, snapshot_stride: 10 };
        let noise = StreamNoise { table: &table, dt: 0.01, stream: StreamSpec::new(1, 1) };
        let report = ehrenfest_compare(&table, &KernelInit::vacuum(), &dynamics, Scheme::Exact, &noise).unwrap();
        assert_eq!(report.max_discrepancy, 0.0);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let table = build_mode_table(LatticeSpec::new(1, 4, 4.0, 1.0).unwrap()).unwrap();
        let dynamics = Dynamics { dt: 0.01, t_max: 1.0, lambda: 0.1, scheme: Scheme::Exact, snapshot_stride: 1 };
        let noise = Silence { table: &table, dt: 0.02 };
        assert!(matches!(
            ehrenfest_compare(&table, &KernelInit::vacuum(), &dynamics, Scheme::Exact, &noise),
            Err(Error::Mismatch(_))
        ));
    }
}
