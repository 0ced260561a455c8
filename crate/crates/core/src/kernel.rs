//! Gaussian wave-functional kernels and their evolution.
//!
//! Every half-space mode carries a quadratic kernel `V(t)` and the linear
//! kernels `μ(t,p)`, `μ(t,−p)`. `V` obeys the noise-free Riccati equation
//! `dV/dt = −iV² + iE²`, whose solution is
//!
//! ```text
//! V(t) = (V₀ cos(tE) + iE² s(t)) / f(t),   f(t) = cos(tE) + i V₀ s(t),   s(t) = sin(tE)/E
//! ```
//!
//! and `f` is the phase function with `exp(−i∫₀ᵗ V) = 1/f(t)`. The linear
//! kernels follow the Ito SDE `dμ = −iVμ dt + iλ dW`; the exact scheme applies
//! the noise kick at the left endpoint and then the propagator `f(t)/f(t+dt)`,
//! so the discrete solution is the Ito sum of the closed-form solution.
//!
//! Self-conjugate modes store the same value in `mu_plus` and `mu_minus`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{ModeClass, ModeTable};
use crate::noise::{NoiseSlice, NoiseSource};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `sin(tE)/E`, continuous at `E = 0`.
fn sinc_t(e: f64, t: f64) -> f64 {
    if e == 0.0 {
        t
    } else {
        (t * e).sin() / e
    }
}

/// Closed-form quadratic kernel.
pub fn riccati_exact(v0: Complex64, e: f64, t: f64) -> Result<Complex64> {
    if v0 == Complex64::new(e, 0.0) {
        return Ok(v0);
    }
    let c = (t * e).cos();
    let s = sinc_t(e, t);
    let den = c + I * v0 * s;
    if den.norm() <= f64::EPSILON * (1.0 + v0.norm() * s.abs()) {
        return Err(Error::SingularKernel { mode: 0, t });
    }
    Ok((v0 * c + I * e * e * s) / den)
}

pub fn riccati_rhs(v: Complex64, e: f64) -> Complex64 {
    -I * v * v + I * e * e
}

/// Phase function `f(t) = cos(tE) + i(V₀/E) sin(tE)`.
pub fn phase_fn(v0: Complex64, e: f64, t: f64) -> Complex64 {
    (t * e).cos() + I * v0 * sinc_t(e, t)
}

/// `exp(−i∫_{t1}^{t2} V) = f(t1)/f(t2)`.
pub fn propagator(v0: Complex64, e: f64, t1: f64, t2: f64) -> Result<Complex64> {
    if t2 < t1 {
        return Err(Error::InvalidArgument(format!("propagator needs t1 <= t2 (got {t1} > {t2})")));
    }
    let den = phase_fn(v0, e, t2);
    if den.norm() == 0.0 {
        return Err(Error::SingularKernel { mode: 0, t: t2 });
    }
    Ok(phase_fn(v0, e, t1) / den)
}

/// Euler–Maruyama update of a linear kernel, noise at the left endpoint.
pub fn mu_step_em(mu: Complex64, v: Complex64, dw: Complex64, dt: f64, lambda: f64) -> Complex64 {
    mu + (-I * dt * mu * v + I * lambda * dw)
}

/// Kick-then-propagate update; `prop` is the propagator over the step.
pub fn mu_step_exact(mu: Complex64, dw: Complex64, prop: Complex64, lambda: f64) -> Complex64 {
    prop * (mu + I * lambda * dw)
}

/// Initial quadratic kernel of one mode. `Infinite` is the sharp-field limit
/// `V₀ → ∞`, evolved as `V(t) = −iE cot(tE)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialKernel {
    Finite(Complex64),
    Infinite,
}

/// Closed-form time dependence of one mode's quadratic kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeLaw {
    pub v0: InitialKernel,
    pub energy: f64,
}

impl ModeLaw {
    /// Phase function up to a constant factor (which cancels in propagators).
    fn phase(&self, t: f64) -> Complex64 {
        match self.v0 {
            InitialKernel::Finite(v0) => phase_fn(v0, self.energy, t),
            InitialKernel::Infinite => Complex64::new(sinc_t(self.energy, t), 0.0),
        }
    }

    pub fn kernel_at(&self, t: f64) -> Complex64 {
        match self.v0 {
            InitialKernel::Finite(v0) if v0 == Complex64::new(self.energy, 0.0) => v0,
            InitialKernel::Finite(v0) => {
                let c = (t * self.energy).cos();
                let s = sinc_t(self.energy, t);
                (v0 * c + I * self.energy * self.energy * s) / (c + I * v0 * s)
            }
            InitialKernel::Infinite => {
                let s = sinc_t(self.energy, t);
                if s == 0.0 {
                    Complex64::new(f64::INFINITY, 0.0)
                } else {
                    -I * (t * self.energy).cos() / s
                }
            }
        }
    }

    /// First pole of `V` in `(t1, t2]`, if any. Only the analytic edge
    /// cases (`Re V₀ = 0` or `V₀ = ∞`) have poles.
    pub fn singular_time_in(&self, t1: f64, t2: f64) -> Option<f64> {
        let e = self.energy;
        let first_root = |theta0: f64| -> Option<f64> {
            if e == 0.0 {
                return None;
            }
            let k = (((t1 * e - theta0) / std::f64::consts::PI).floor() + 1.0).max(0.0);
            let t = (theta0 + k * std::f64::consts::PI) / e;
            (t > t1 && t <= t2).then_some(t)
        };
        match self.v0 {
            InitialKernel::Infinite => {
                if e == 0.0 {
                    return None;
                }
                // roots of sin(tE) at t = kπ/E, k >= 1
                let k = ((t1 * e / std::f64::consts::PI).floor() + 1.0).max(1.0);
                let t = k * std::f64::consts::PI / e;
                (t > t1 && t <= t2).then_some(t)
            }
            InitialKernel::Finite(v0) if v0.re == 0.0 => {
                let beta = v0.im;
                if e == 0.0 {
                    // f = 1 − βt
                    let t = 1.0 / beta;
                    return (beta > 0.0 && t > t1 && t <= t2).then_some(t);
                }
                // cos(tE) − β sin(tE)/E = 0  ⇔  tE ≡ atan2(E, β) (mod π)
                first_root(e.atan2(beta))
            }
            InitialKernel::Finite(_) => None,
        }
    }

    pub fn propagator(&self, t1: f64, t2: f64) -> Result<Complex64> {
        if let Some(t) = self.singular_time_in(t1, t2) {
            return Err(Error::SingularKernel { mode: 0, t });
        }
        Ok(self.phase(t1) / self.phase(t2))
    }
}

/// How the initial quadratic kernel is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelChoice {
    /// `V₀ = E_p`, the free vacuum.
    Vacuum,
    /// `V₀ = c·E_p` with `Re c > 0`.
    Scaled(Complex64),
    /// `V₀ = 0` (infinitely broad distribution).
    Zero,
    /// `V₀ → ∞` (sharp initial field).
    Deterministic,
    /// Explicit `V₀` per half-space slot.
    Custom(Vec<Complex64>),
}

impl KernelChoice {
    /// Analytic edge cases that are only usable with the exact scheme.
    pub fn is_edge_case(&self) -> bool {
        matches!(self, KernelChoice::Zero | KernelChoice::Deterministic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelInit {
    pub v0: KernelChoice,
    /// `(μ₀(p), μ₀(−p))` per half-space slot; `None` means zero.
    pub mu0: Option<Vec<(Complex64, Complex64)>>,
}

impl KernelInit {
    pub fn vacuum() -> Self {
        KernelInit { v0: KernelChoice::Vacuum, mu0: None }
    }

    pub fn scaled(c: Complex64) -> Self {
        KernelInit { v0: KernelChoice::Scaled(c), mu0: None }
    }

    pub fn initial_kernels(&self, table: &ModeTable) -> Result<Vec<InitialKernel>> {
        let half = table.half_space();
        let kernels: Vec<InitialKernel> = match &self.v0 {
            KernelChoice::Vacuum => {
                half.iter().map(|&id| InitialKernel::Finite(table.mode(id).energy.into())).collect()
            }
            KernelChoice::Scaled(c) => {
                if c.re <= 0.0 {
                    return Err(Error::InvalidArgument(format!("scale factor needs Re c > 0 (got {c})")));
                }
                half.iter().map(|&id| InitialKernel::Finite(c * table.mode(id).energy)).collect()
            }
            KernelChoice::Zero => half.iter().map(|_| InitialKernel::Finite(0.0.into())).collect(),
            KernelChoice::Deterministic => half.iter().map(|_| InitialKernel::Infinite).collect(),
            KernelChoice::Custom(values) => {
                if values.len() != half.len() {
                    return Err(Error::Mismatch(format!(
                        "custom V0 has {} entries, lattice has {} half-space modes",
                        values.len(),
                        half.len()
                    )));
                }
                if let Some((slot, v)) = values.iter().enumerate().find(|(_, v)| !(v.re >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "custom V0 for mode {} must be finite with Re V0 >= 0 (got {v})",
                        half[slot]
                    )));
                }
                values.iter().map(|&v| InitialKernel::Finite(v)).collect()
            }
        };
        Ok(kernels)
    }

    pub fn initial_mu(&self, table: &ModeTable) -> Result<Vec<(Complex64, Complex64)>> {
        let half = table.half_space();
        match &self.mu0 {
            None => Ok(vec![(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); half.len()]),
            Some(values) => {
                if values.len() != half.len() {
                    return Err(Error::Mismatch(format!(
                        "mu0 has {} entries, lattice has {} half-space modes",
                        values.len(),
                        half.len()
                    )));
                }
                for (slot, &(plus, minus)) in values.iter().enumerate() {
                    let id = half[slot];
                    if table.mode(id).class == ModeClass::SelfConjugate && plus != minus {
                        return Err(Error::InvalidArgument(format!("self-conjugate mode {id} needs mu0(p) = mu0(-p)")));
                    }
                }
                Ok(values.clone())
            }
        }
    }

    pub fn has_zero_mu(&self) -> bool {
        match &self.mu0 {
            None => true,
            Some(v) => v.iter().all(|(a, b)| a.norm() == 0.0 && b.norm() == 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Exact,
    Euler,
}

/// Full quantum state of one trajectory, per half-space slot.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelState {
    pub step: usize,
    pub t: f64,
    pub v: Vec<Complex64>,
    pub mu_plus: Vec<Complex64>,
    pub mu_minus: Vec<Complex64>,
}

/// Per-trajectory stepping of the kernels for one lattice and coupling.
#[derive(Debug, Clone)]
pub struct KernelEngine<'a> {
    table: &'a ModeTable,
    laws: Vec<ModeLaw>,
    mu0: Vec<(Complex64, Complex64)>,
    lambda: f64,
    scheme: Scheme,
    dt: f64,
}

impl<'a> KernelEngine<'a> {
    pub fn new(table: &'a ModeTable, init: &KernelInit, lambda: f64, scheme: Scheme, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be > 0 (got {dt})")));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0 (got {lambda})")));
        }
        if scheme == Scheme::Euler && init.v0.is_edge_case() {
            return Err(Error::InvalidArgument(
                "zero and deterministic initial kernels require the exact scheme".into(),
            ));
        }
        let laws = init
            .initial_kernels(table)?
            .into_iter()
            .zip(table.half_space())
            .map(|(v0, &id)| ModeLaw { v0, energy: table.mode(id).energy })
            .collect();
        let mu0 = init.initial_mu(table)?;
        Ok(KernelEngine { table, laws, mu0, lambda, scheme, dt })
    }

    pub fn table(&self) -> &'a ModeTable {
        self.table
    }

    pub fn laws(&self) -> &[ModeLaw] {
        &self.laws
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time_at(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn initial_state(&self) -> KernelState {
        KernelState {
            step: 0,
            t: 0.0,
            v: self.laws.iter().map(|l| l.kernel_at(0.0)).collect(),
            mu_plus: self.mu0.iter().map(|m| m.0).collect(),
            mu_minus: self.mu0.iter().map(|m| m.1).collect(),
        }
    }

    pub fn evolve(&self, state: &KernelState, slice: &NoiseSlice) -> Result<KernelState> {
        let mut next = state.clone();
        self.advance(&mut next, slice)?;
        Ok(next)
    }

    /// In-place version of [`KernelEngine::evolve`].
    pub fn advance(&self, state: &mut KernelState, slice: &NoiseSlice) -> Result<()> {
        if (slice.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::Mismatch(format!("noise slice dt {} != grid dt {}", slice.dt, self.dt)));
        }
        if slice.increments.len() != self.laws.len() {
            return Err(Error::Mismatch(format!(
                "noise slice has {} modes, engine has {}",
                slice.increments.len(),
                self.laws.len()
            )));
        }
        let t0 = self.time_at(state.step);
        let t1 = self.time_at(state.step + 1);
        let half = self.table.half_space();
        for (slot, law) in self.laws.iter().enumerate() {
            let dw = slice.increments[slot];
            let (plus, minus) = (state.mu_plus[slot], state.mu_minus[slot]);
            let (plus, minus) = match self.scheme {
                Scheme::Exact => {
                    let prop = law.propagator(t0, t1).map_err(|e| match e {
                        Error::SingularKernel { t, .. } => Error::SingularKernel { mode: half[slot], t },
                        other => other,
                    })?;
                    (mu_step_exact(plus, dw, prop, self.lambda), mu_step_exact(minus, dw.conj(), prop, self.lambda))
                }
                Scheme::Euler => {
                    let v = state.v[slot];
                    (
                        mu_step_em(plus, v, dw, self.dt, self.lambda),
                        mu_step_em(minus, v, dw.conj(), self.dt, self.lambda),
                    )
                }
            };
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NumericalFailure {
                    step: state.step,
                    reason: format!("non-finite linear kernel in mode {}", half[slot]),
                });
            }
            state.mu_plus[slot] = plus;
            state.mu_minus[slot] = minus;
            state.v[slot] = law.kernel_at(t1);
        }
        state.step += 1;
        state.t = t1;
        Ok(())
    }

    /// Number of grid steps needed to reach `t_max`.
    pub fn steps_for(&self, t_max: f64) -> usize {
        (t_max / self.dt).round() as usize
    }

    /// Runs `steps` steps from the initial state, calling `visit` at steps
    /// `0, stride, 2·stride, …` and at the final step.
    pub fn run_with<N, F>(&self, noise: &N, steps: usize, stride: usize, mut visit: F) -> Result<KernelState>
    where
        N: NoiseSource + ?Sized,
        F: FnMut(&KernelState) -> Result<()>,
    {
        let stride = stride.max(1);
        let mut state = self.initial_state();
        visit(&state)?;
        for k in 0..steps {
            let slice = noise.slice(k);
            self.advance(&mut state, &slice)?;
            if state.step.is_multiple_of(stride) || state.step == steps {
                visit(&state)?;
            }
        }
        Ok(state)
    }
}

/// Time-grid parameters of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub dt: f64,
    pub t_max: f64,
    pub lambda: f64,
    pub scheme: Scheme,
    pub snapshot_stride: usize,
}

impl Dynamics {
    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// Strided snapshots of one trajectory.
pub fn run_trajectory<N: NoiseSource + ?Sized>(
    table: &ModeTable,
    init: &KernelInit,
    dynamics: &Dynamics,
    noise: &N,
) -> Result<Vec<KernelState>> {
    if !(dynamics.t_max >= 0.0) {
        return Err(Error::InvalidArgument(format!("t_max must be >= 0 (got {})", dynamics.t_max)));
    }
    if dynamics.snapshot_stride == 0 {
        return Err(Error::InvalidArgument("snapshot stride must be >= 1".into()));
    }
    let engine = KernelEngine::new(table, init, dynamics.lambda, dynamics.scheme, dynamics.dt)?;
    let mut out = Vec::new();
    engine.run_with(noise, dynamics.steps(), dynamics.snapshot_stride, |s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_mode_table, LatticeSpec};
    use crate::noise::{sample_slice, Silence, StreamNoise, StreamSpec};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn riccati_special_values() {
        for &t in &[0.0, 0.3, 2.0, 17.0] {
            let v = riccati_exact(c(1.7, 0.0), 1.7, t).unwrap();
            assert!((v - c(1.7, 0.0)).norm() < 1e-12);
        }
        let v0 = c(0.4, -0.3);
        assert_eq!(riccati_exact(v0, 2.0, 0.0).unwrap(), v0);
        let v = riccati_exact(c(2.0, 0.0), 1.0, PI / 2.0).unwrap();
        assert!((v - c(0.5, 0.0)).norm() < 1e-12);
        let (e, t) = (1.3, 0.4);
        let v = riccati_exact(c(0.0, 0.0), e, t).unwrap();
        assert!((v - I * e * (t * e).tan()).norm() < 1e-12);
    }

    #[test]
    fn riccati_pole_is_reported() {
        let e = 1.0;
        let err = riccati_exact(c(0.0, 0.0), e, PI / 2.0).unwrap_err();
        assert!(matches!(err, Error::SingularKernel { .. }));
    }

    #[test]
    fn rhs_values() {
        assert_eq!(riccati_rhs(c(3.0, 0.0), 3.0), c(0.0, 0.0));
        assert_eq!(riccati_rhs(c(0.0, 0.0), 2.0), c(0.0, 4.0));
        assert_eq!(riccati_rhs(c(2.0, 0.0), 1.0), c(0.0, -3.0));
    }

    #[test]
    fn phase_and_propagator_basics() {
        assert_eq!(phase_fn(c(0.3, 0.2), 1.1, 0.0), c(1.0, 0.0));
        let (e, t) = (0.9, 2.3);
        let f = phase_fn(c(e, 0.0), e, t);
        assert!((f - Complex64::from_polar(1.0, t * e)).norm() < 1e-14);
        assert_eq!(propagator(c(0.5, 0.1), 1.0, 1.2, 1.2).unwrap(), c(1.0, 0.0));
        let p = propagator(c(e, 0.0), e, 0.5, 1.7).unwrap();
        assert!((p - Complex64::from_polar(1.0, -e * 1.2)).norm() < 1e-14);
        assert!(propagator(c(1.0, 0.0), 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn mu_updates() {
        assert_eq!(mu_step_em(c(0.3, 0.4), c(0.0, 0.0), c(1.0, 1.0), 0.1, 0.0), c(0.3, 0.4));
        assert_eq!(mu_step_em(c(0.0, 0.0), c(1.0, 0.0), c(0.2, 0.5), 0.1, 2.0), I * 2.0 * c(0.2, 0.5));
        let dt = 0.01;
        assert_eq!(mu_step_em(c(1.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), dt, 0.0), c(1.0, -dt * 2.0));
        let prop = Complex64::from_polar(1.0, -0.2);
        assert_eq!(mu_step_exact(c(0.5, 0.1), c(3.0, 3.0), prop, 0.0), prop * c(0.5, 0.1));
        assert_eq!(mu_step_exact(c(0.0, 0.0), c(0.25, -1.0), c(1.0, 0.0), 0.5), I * 0.5 * c(0.25, -1.0));
    }

    #[test]
    fn exact_minus_euler_is_first_order() {
        // with dW ∝ sqrt(dt) the one-step gap is O(dt·|dW|) + O(dt²)
        let (v0, e, lambda, mu) = (c(1.5, 0.2), 1.2, 0.7, c(0.3, -0.4));
        let mut prev = None;
        for &dt in &[1e-2, 1e-3, 1e-4] {
            let dw = c(0.8, -0.6) * f64::sqrt(dt);
            let t = 0.37;
            let prop = propagator(v0, e, t, t + dt).unwrap();
            let v = riccati_exact(v0, e, t).unwrap();
            let gap = (mu_step_exact(mu, dw, prop, lambda) - mu_step_em(mu, v, dw, dt, lambda)).norm();
            if let Some(p) = prev {
                let ratio: f64 = p / gap;
                // between dt-scaling (10) and dt^1.5-scaling (31.6)
                assert!(ratio > 9.0 && ratio < 33.0, "ratio {ratio}");
            }
            prev = Some(gap);
        }
    }

    #[test]
    fn edge_laws_match_closed_forms() {
        let e = 1.4;
        let zero = ModeLaw { v0: InitialKernel::Finite(c(0.0, 0.0)), energy: e };
        let sharp = ModeLaw { v0: InitialKernel::Infinite, energy: e };
        for &t in &[0.1, 0.5, 1.0, 2.9] {
            assert!((zero.kernel_at(t) - I * e * (t * e).tan()).norm() < 1e-9 * (1.0 + (t * e).tan().abs()));
            assert!((sharp.kernel_at(t) + I * e / (t * e).tan()).norm() < 1e-9 * (1.0 + 1.0 / (t * e).tan().abs()));
        }
        assert_eq!(zero.singular_time_in(0.0, 1.0), None);
        let t = zero.singular_time_in(1.0, 1.2).unwrap();
        assert!((t - PI / (2.0 * e)).abs() < 1e-14);
        let t = sharp.singular_time_in(0.0, 2.3).unwrap();
        assert!((t - PI / e).abs() < 1e-14);
        assert_eq!(sharp.singular_time_in(0.0, 2.0), None);
        assert!(zero.propagator(1.0, 1.2).is_err());
        // sharp initial field forgets μ₀
        assert_eq!(sharp.propagator(0.0, 0.5).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn massless_zero_mode_limit() {
        let law = ModeLaw { v0: InitialKernel::Finite(c(2.0, 0.0)), energy: 0.0 };
        let t = 0.7;
        let expected = c(2.0, 0.0) / (c(1.0, 0.0) + I * 2.0 * t);
        assert!((law.kernel_at(t) - expected).norm() < 1e-14);
        assert!((riccati_exact(c(2.0, 0.0), 0.0, t).unwrap() - expected).norm() < 1e-14);
    }

    fn table() -> ModeTable {
        build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn vacuum_without_noise_is_stationary() {
        let table = table();
        let engine = KernelEngine::new(&table, &KernelInit::vacuum(), 0.0, Scheme::Exact, 0.01).unwrap();
        let noise = StreamNoise { table: &table, dt: 0.01, stream: StreamSpec::new(1, 0) };
        let init = engine.initial_state();
        let last = engine
            .run_with(&noise, 1000, 100, |s| {
                for (slot, v) in s.v.iter().enumerate() {
                    assert_eq!(v.to_bits_pair(), init.v[slot].to_bits_pair());
                }
                assert!(s.mu_plus.iter().chain(&s.mu_minus).all(|m| m.norm() == 0.0));
                Ok(())
            })
            .unwrap();
        assert_eq!(last.step, 1000);
    }

    trait Bits {
        fn to_bits_pair(&self) -> (u64, u64);
    }

    impl Bits for Complex64 {
        fn to_bits_pair(&self) -> (u64, u64) {
            (self.re.to_bits(), self.im.to_bits())
        }
    }

    #[test]
    fn single_step_from_rest() {
        let table = table();
        let lambda = 0.3;
        let dt = 0.05;
        let engine = KernelEngine::new(&table, &KernelInit::vacuum(), lambda, Scheme::Exact, dt).unwrap();
        let slice = sample_slice(&table, dt, StreamSpec::new(5, 5), 0);
        let next = engine.evolve(&engine.initial_state(), &slice).unwrap();
        for (slot, &id) in table.half_space().iter().enumerate() {
            let e = table.mode(id).energy;
            let prop = Complex64::from_polar(1.0, -e * dt);
            let dw = slice.increments[slot];
            assert!((next.mu_plus[slot] - I * lambda * prop * dw).norm() < 1e-15);
            assert!((next.mu_minus[slot] - I * lambda * prop * dw.conj()).norm() < 1e-15);
        }
        assert_eq!(next.step, 1);
    }

    #[test]
    fn euler_rejects_edge_inits() {
        let table = table();
        let init = KernelInit { v0: KernelChoice::Zero, mu0: None };
        assert!(KernelEngine::new(&table, &init, 0.1, Scheme::Euler, 0.01).is_err());
        assert!(KernelEngine::new(&table, &init, 0.1, Scheme::Exact, 0.01).is_ok());
    }

    #[test]
    fn zero_init_run_stops_at_pole() {
        let table = table();
        let init = KernelInit { v0: KernelChoice::Zero, mu0: None };
        let engine = KernelEngine::new(&table, &init, 0.1, Scheme::Exact, 0.01).unwrap();
        let noise = Silence { table: &table, dt: 0.01 };
        let err = engine.run_with(&noise, 1000, 1, |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::SingularKernel { .. }), "{err}");
    }

    #[test]
    fn zero_duration_run_returns_initial_state() {
        let table = table();
        let dynamics = Dynamics { dt: 0.01, t_max: 0.0, lambda: 0.1, scheme: Scheme::Exact, snapshot_stride: 5 };
        let noise = Silence { table: &table, dt: 0.01 };
        let snaps = run_trajectory(&table, &KernelInit::vacuum(), &dynamics, &noise).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].t, 0.0);
    }

    #[test]
    fn mismatched_slice_rejected() {
        let table = table();
        let engine = KernelEngine::new(&table, &KernelInit::vacuum(), 0.1, Scheme::Exact, 0.01).unwrap();
        let slice = NoiseSlice::zeros(&table, 0.02);
        assert!(matches!(engine.evolve(&engine.initial_state(), &slice), Err(Error::Mismatch(_))));
    }
}
