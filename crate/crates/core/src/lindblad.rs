//! Single-mode master equation on a truncated Fock space.
//!
//! `dρ/dt = −i[H, ρ] + λ²(x ρ x − ½{x², ρ})` with `H = diag(n·E)` and the
//! unit-mass quadrature `x = (a + a†)/sqrt(2E)`. Both operators are banded,
//! so the generator is applied in `O(n²)` without forming products.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::ensemble::{run_ensemble, EnsembleOptions};
use crate::error::{Error, Result};
use crate::kernel::{Dynamics, KernelInit, Scheme};
use crate::lattice::{build_mode_table, LatticeSpec, ModeClass};

/// Default Fock truncation.
pub const DEFAULT_N_MAX: usize = 60;
/// Top-level population that triggers a retry with a larger truncation.
pub const TOP_POPULATION_LIMIT: f64 = 1e-8;
/// Negative eigenvalue beyond which integration aborts.
pub const POSITIVITY_LIMIT: f64 = 1e-6;

const MAX_N: usize = 960;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub n_max: usize,
    pub rho: DMatrix<Complex64>,
    pub energy: f64,
}

impl DensityMatrix {
    /// Projector on the Fock vacuum.
    pub fn vacuum(n_max: usize, energy: f64) -> Self {
        let mut rho = DMatrix::zeros(n_max + 1, n_max + 1);
        rho[(0, 0)] = Complex64::new(1.0, 0.0);
        DensityMatrix { n_max, rho, energy }
    }

    /// Pure coherent state with amplitude `alpha`, truncated and renormalized.
    pub fn coherent(n_max: usize, energy: f64, alpha: Complex64) -> Self {
        let mut amp = vec![Complex64::new(0.0, 0.0); n_max + 1];
        amp[0] = Complex64::new(1.0, 0.0);
        for n in 1..=n_max {
            amp[n] = amp[n - 1] * alpha / (n as f64).sqrt();
        }
        let norm = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let psi = DMatrix::from_iterator(n_max + 1, 1, amp.into_iter().map(|a| a / norm));
        let rho = &psi * psi.adjoint();
        DensityMatrix { n_max, rho, energy }
    }

    /// Copy into a larger truncation, padding with zeros.
    pub fn embedded(&self, n_max: usize) -> Self {
        let mut rho = DMatrix::zeros(n_max + 1, n_max + 1);
        let k = (self.n_max + 1).min(n_max + 1);
        rho.view_mut((0, 0), (k, k)).copy_from(&self.rho.view((0, 0), (k, k)));
        DensityMatrix { n_max, rho, energy: self.energy }
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let hermitian = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        hermitian.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn top_population(&self) -> f64 {
        self.rho[(self.n_max, self.n_max)].re
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleModeGenerator {
    pub energy: f64,
    pub lambda: f64,
    pub n_max: usize,
    /// `x_{n,n+1}` for `n = 0..n_max`.
    offdiag: Vec<f64>,
}

impl SingleModeGenerator {
    pub fn new(energy: f64, lambda: f64, n_max: usize) -> Result<Self> {
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::InvalidArgument(format!("mode energy must be positive (got {energy})")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0 (got {lambda})")));
        }
        if n_max < 2 {
            return Err(Error::InvalidArgument(format!("n_max must be >= 2 (got {n_max})")));
        }
        let offdiag = (0..n_max).map(|n| ((n + 1) as f64 / (2.0 * energy)).sqrt()).collect();
        Ok(SingleModeGenerator { energy, lambda, n_max, offdiag })
    }

    pub fn hamiltonian(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n_max + 1, self.n_max + 1, |i, j| {
            Complex64::new(if i == j { i as f64 * self.energy } else { 0.0 }, 0.0)
        })
    }

    pub fn jump(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n_max + 1, self.n_max + 1, |i, j| {
            let x = if j == i + 1 {
                self.offdiag[i]
            } else if i == j + 1 {
                self.offdiag[j]
            } else {
                0.0
            };
            Complex64::new(x, 0.0)
        })
    }

    fn left_x(&self, m: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        let n = self.n_max;
        for j in 0..=n {
            for i in 0..=n {
                let mut acc = Complex64::new(0.0, 0.0);
                if i > 0 {
                    acc += m[(i - 1, j)] * self.offdiag[i - 1];
                }
                if i < n {
                    acc += m[(i + 1, j)] * self.offdiag[i];
                }
                out[(i, j)] = acc;
            }
        }
    }

    fn right_x(&self, m: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        let n = self.n_max;
        for j in 0..=n {
            for i in 0..=n {
                let mut acc = Complex64::new(0.0, 0.0);
                if j > 0 {
                    acc += m[(i, j - 1)] * self.offdiag[j - 1];
                }
                if j < n {
                    acc += m[(i, j + 1)] * self.offdiag[j];
                }
                out[(i, j)] = acc;
            }
        }
    }

    /// Stiffness estimate `dt·(n_max·E + λ²·n_max/E)`.
    pub fn stiffness(&self, dt: f64) -> f64 {
        dt * (self.n_max as f64 * self.energy + self.lambda * self.lambda * self.n_max as f64 / self.energy)
    }
}

struct Workspace {
    xr: DMatrix<Complex64>,
    rx: DMatrix<Complex64>,
    tmp: DMatrix<Complex64>,
}

impl Workspace {
    fn new(size: usize) -> Self {
        Workspace { xr: DMatrix::zeros(size, size), rx: DMatrix::zeros(size, size), tmp: DMatrix::zeros(size, size) }
    }
}

fn rhs_into(rho: &DMatrix<Complex64>, gen: &SingleModeGenerator, ws: &mut Workspace, out: &mut DMatrix<Complex64>) {
    let n = gen.n_max;
    let l2 = gen.lambda * gen.lambda;
    gen.left_x(rho, &mut ws.xr);
    gen.right_x(rho, &mut ws.rx);
    // x ρ x
    gen.left_x(&ws.rx, out);
    for j in 0..=n {
        for i in 0..=n {
            let comm = Complex64::new(0.0, -((i as f64 - j as f64) * gen.energy)) * rho[(i, j)];
            out[(i, j)] = comm + out[(i, j)] * l2;
        }
    }
    // − ½ x²ρ
    gen.left_x(&ws.xr, &mut ws.tmp);
    out.zip_apply(&ws.tmp, |o, t| *o -= t * (0.5 * l2));
    // − ½ ρx²
    gen.right_x(&ws.rx, &mut ws.tmp);
    out.zip_apply(&ws.tmp, |o, t| *o -= t * (0.5 * l2));
}

/// Generator applied to `rho`.
pub fn lindblad_rhs(rho: &DensityMatrix, gen: &SingleModeGenerator) -> Result<DMatrix<Complex64>> {
    if rho.n_max != gen.n_max {
        return Err(Error::Mismatch(format!("density matrix has n_max {} but generator {}", rho.n_max, gen.n_max)));
    }
    let size = gen.n_max + 1;
    let mut ws = Workspace::new(size);
    let mut out = DMatrix::zeros(size, size);
    rhs_into(&rho.rho, gen, &mut ws, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LindbladSample {
    pub t: f64,
    /// `⟨H⟩ + E/2`, so that the vacuum reads `E/2`.
    pub energy: f64,
    pub x_mean: f64,
    pub x2_mean: f64,
    pub trace_err: f64,
    pub min_eig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindbladSeries {
    pub n_max: usize,
    pub samples: Vec<LindbladSample>,
    /// Largest population of the top Fock level seen at the output times.
    pub top_population: f64,
    pub stiffness: f64,
}

impl LindbladSeries {
    pub fn stiffness_warning(&self) -> Option<String> {
        (self.stiffness > 0.5)
            .then(|| format!("step is stiff for the truncation: dt·(n_max·E + λ²·n_max/E) = {:.3}", self.stiffness))
    }
}

fn sample(rho: &DensityMatrix, gen: &SingleModeGenerator, t: f64, ws: &mut Workspace) -> LindbladSample {
    let n = gen.n_max;
    let h: f64 = (0..=n).map(|k| k as f64 * gen.energy * rho.rho[(k, k)].re).sum();
    let x_mean: f64 = (0..n).map(|k| 2.0 * gen.offdiag[k] * rho.rho[(k + 1, k)].re).sum();
    gen.left_x(&rho.rho, &mut ws.xr);
    gen.left_x(&ws.xr, &mut ws.tmp);
    LindbladSample {
        t,
        energy: h + 0.5 * gen.energy,
        x_mean,
        x2_mean: ws.tmp.trace().re,
        trace_err: (rho.trace() - 1.0).norm(),
        min_eig: rho.min_eigenvalue(),
    }
}

/// Fixed-step RK4 from `rho0` to `t_max`, sampling every `stride` steps
/// (and at the end).
pub fn integrate(
    rho0: &DensityMatrix,
    gen: &SingleModeGenerator,
    dt: f64,
    t_max: f64,
    stride: usize,
) -> Result<LindbladSeries> {
    if rho0.n_max != gen.n_max || rho0.energy != gen.energy {
        return Err(Error::Mismatch("initial state and generator disagree on n_max or E".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) || !(t_max >= 0.0 && t_max.is_finite()) || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0, t_max >= 0, stride >= 1 (got {dt}, {t_max}, {stride})"
        )));
    }
    let steps = (t_max / dt - 1e-9).ceil().max(0.0) as usize;
    let size = gen.n_max + 1;
    let mut ws = Workspace::new(size);
    let mut rho = rho0.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (
        DMatrix::zeros(size, size),
        DMatrix::zeros(size, size),
        DMatrix::zeros(size, size),
        DMatrix::zeros(size, size),
    );
    let mut stage = DMatrix::zeros(size, size);
    let mut samples = Vec::with_capacity(steps / stride + 2);
    let mut top = rho.top_population();
    let record = |rho: &DensityMatrix, t: f64, ws: &mut Workspace, samples: &mut Vec<LindbladSample>| -> Result<()> {
        let s = sample(rho, gen, t, ws);
        if !s.energy.is_finite() {
            return Err(Error::NumericalFailure {
                step: (t / dt).round() as usize,
                reason: "non-finite density matrix".into(),
            });
        }
        if s.min_eig < -POSITIVITY_LIMIT {
            let diagnosis = format!(
                "top Fock population {:.3e} at n_max = {}; the truncation or the step is too coarse",
                rho.top_population(),
                rho.n_max
            );
            return Err(Error::Positivity { t, min_eig: s.min_eig, diagnosis });
        }
        samples.push(s);
        Ok(())
    };
    record(&rho, 0.0, &mut ws, &mut samples)?;
    let h = Complex64::new(dt, 0.0);
    for step in 1..=steps {
        rhs_into(&rho.rho, gen, &mut ws, &mut k1);
        stage.copy_from(&rho.rho);
        stage.zip_apply(&k1, |s, k| *s += k * (0.5 * dt));
        rhs_into(&stage, gen, &mut ws, &mut k2);
        stage.copy_from(&rho.rho);
        stage.zip_apply(&k2, |s, k| *s += k * (0.5 * dt));
        rhs_into(&stage, gen, &mut ws, &mut k3);
        stage.copy_from(&rho.rho);
        stage.zip_apply(&k3, |s, k| *s += k * dt);
        rhs_into(&stage, gen, &mut ws, &mut k4);
        let sixth = h / 6.0;
        for idx in 0..size * size {
            rho.rho[idx] += sixth * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
        }
        if step % stride == 0 || step == steps {
            top = top.max(rho.top_population());
            record(&rho, step as f64 * dt, &mut ws, &mut samples)?;
        }
    }
    Ok(LindbladSeries { n_max: gen.n_max, samples, top_population: top, stiffness: gen.stiffness(dt) })
}

/// Integrates and, while the top Fock level is populated beyond
/// `TOP_POPULATION_LIMIT`, doubles the truncation and starts over.
pub fn integrate_adaptive(
    rho0: &DensityMatrix,
    energy: f64,
    lambda: f64,
    dt: f64,
    t_max: f64,
    stride: usize,
) -> Result<LindbladSeries> {
    let mut n_max = rho0.n_max;
    loop {
        let gen = SingleModeGenerator::new(energy, lambda, n_max)?;
        let series = integrate(&rho0.embedded(n_max), &gen, dt, t_max, stride)?;
        if series.top_population <= TOP_POPULATION_LIMIT {
            return Ok(series);
        }
        if 2 * n_max > MAX_N {
            return Err(Error::NumericalFailure {
                step: 0,
                reason: format!("top Fock population {:.3e} even at n_max = {n_max}", series.top_population),
            });
        }
        n_max *= 2;
    }
}

/// Parameters of a trajectory-ensemble vs master-equation comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnravelingConfig {
    pub energy: f64,
    pub lambda: f64,
    pub dt: f64,
    pub t_max: f64,
    pub stride: usize,
    pub trajectories: u64,
    pub master_seed: u64,
    pub n_max: usize,
    /// Step of the master-equation integrator; the trajectory side uses `dt`.
    pub lindblad_dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnravelingRow {
    pub t: f64,
    pub lindblad_energy: f64,
    pub ensemble_energy: f64,
    pub energy_stderr: f64,
    pub lindblad_x: f64,
    pub ensemble_x: f64,
    pub x_stderr: f64,
    pub lindblad_x2: f64,
    pub ensemble_x2: f64,
    pub x2_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnravelingReport {
    pub rows: Vec<UnravelingRow>,
    /// Largest `|difference|/stderr` over output times with nonzero error.
    pub max_energy_z: f64,
    pub max_x_z: f64,
    pub max_x2_z: f64,
}

fn z(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Compares the noise-averaged wave-functional dynamics of a single real
/// (zero) mode with the master equation, starting both from the vacuum.
///
/// The zero mode of a two-site line with mass `E` has frequency `E`. Its
/// coordinate `q` carries mass `κ`, so `x = sqrt(κ)·q` is the unit-mass
/// quadrature of the master equation.
pub fn unraveling_consistency(cfg: &UnravelingConfig) -> Result<UnravelingReport> {
    if !(cfg.dt > 0.0) || !(cfg.lindblad_dt > 0.0) || cfg.stride == 0 {
        return Err(Error::InvalidArgument("unraveling needs positive steps and stride".into()));
    }
    let ratio = cfg.dt / cfg.lindblad_dt;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
        return Err(Error::Mismatch(format!(
            "trajectory step {} must be a whole multiple of the master-equation step {}",
            cfg.dt, cfg.lindblad_dt
        )));
    }
    let table = build_mode_table(LatticeSpec::new(1, 2, 2.0, cfg.energy)?)?;
    let zero = table.mode(table.half_space()[0]);
    debug_assert!(zero.class == ModeClass::SelfConjugate && zero.energy == cfg.energy);
    let kappa = table.spec().kappa();
    let dynamics = Dynamics {
        dt: cfg.dt,
        t_max: cfg.t_max,
        lambda: cfg.lambda,
        scheme: Scheme::Exact,
        snapshot_stride: cfg.stride,
    };
    let stats = run_ensemble(
        &table,
        &KernelInit::vacuum(),
        &dynamics,
        cfg.trajectories,
        cfg.master_seed,
        EnsembleOptions { per_mode: true, threads: None },
    )?;
    let id = zero.id;
    let energy = stats.series(&format!("energy[{id}]")).expect("per-mode tracking");
    let phi = stats.series(&format!("phi_re[{id}]")).expect("per-mode tracking");
    let phi2 = stats.series(&format!("phi_abs2[{id}]")).expect("per-mode tracking");
    // vacuum kernel stays V = E, so the per-trajectory variance is fixed
    let variance = 1.0 / (2.0 * kappa * cfg.energy);

    let sub = ratio.round() as usize;
    let series = integrate_adaptive(
        &DensityMatrix::vacuum(cfg.n_max, cfg.energy),
        cfg.energy,
        cfg.lambda,
        cfg.lindblad_dt,
        cfg.t_max,
        cfg.stride * sub,
    )?;
    if series.samples.len() != stats.times.len() {
        return Err(Error::Mismatch("output grids of the two sides differ".into()));
    }
    let mut rows = Vec::with_capacity(stats.times.len());
    let (mut ez, mut xz, mut x2z) = (0.0f64, 0.0f64, 0.0f64);
    for (k, lb) in series.samples.iter().enumerate() {
        let t = stats.times[k];
        if (lb.t - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::Mismatch(format!("output times differ: {} vs {}", lb.t, t)));
        }
        let row = UnravelingRow {
            t,
            lindblad_energy: lb.energy,
            ensemble_energy: energy[k].mean,
            energy_stderr: energy[k].stderr(),
            lindblad_x: lb.x_mean,
            ensemble_x: kappa.sqrt() * phi[k].mean,
            x_stderr: kappa.sqrt() * phi[k].stderr(),
            lindblad_x2: lb.x2_mean,
            ensemble_x2: kappa * (variance + phi2[k].mean),
            x2_stderr: kappa * phi2[k].stderr(),
        };
        ez = ez.max(z(row.ensemble_energy - row.lindblad_energy, row.energy_stderr));
        xz = xz.max(z(row.ensemble_x - row.lindblad_x, row.x_stderr));
        x2z = x2z.max(z(row.ensemble_x2 - row.lindblad_x2, row.x2_stderr));
        rows.push(row);
    }
    Ok(UnravelingReport { rows, max_energy_z: ez, max_x_z: xz, max_x2_z: x2z })
}
