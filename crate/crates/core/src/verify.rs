//! The acceptance battery: each check runs a cross-oracle comparison at a
//! fixed configuration and reports its measured value against the target.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::classical::ehrenfest_compare;
use crate::ensemble::{energy_slope, expected_energy_slope, fit_linear, run_ensemble, EnsembleOptions, Moments};
use crate::error::{Error, Result};
use crate::io::ensemble_csv;
use crate::kernel::{
    mu_step_exact, phase_fn, propagator, riccati_exact, riccati_rhs, Dynamics, InitialKernel, KernelEngine, KernelInit,
    KernelState, ModeLaw, Scheme,
};
use crate::lattice::{build_mode_table, LatticeSpec, ModeClass, ModeTable};
use crate::lindblad::{integrate, unraveling_consistency, DensityMatrix, SingleModeGenerator, UnravelingConfig};
use crate::noise::{component_variance, sample_slice, to_position_noise, CoarsenedNoise, StreamNoise, StreamSpec};
use crate::observables::{energy_free, energy_free_from_kernels, ensemble_mu_correlators};
use crate::quadrature;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub measured: String,
    pub target: String,
    pub seconds: f64,
    pub time_limit: f64,
}

/// `(id, name, runtime limit in seconds)`.
pub const CRITERIA: [(u32, &str, f64); 11] = [
    (1, "Riccati closed form vs RK4", 5.0),
    (2, "kernel special cases", 1.0),
    (3, "propagator identity and composition", 5.0),
    (4, "noise statistics and determinism", 30.0),
    (5, "Ehrenfest correspondence", 30.0),
    (6, "vacuum energy and free-energy conservation", 1.0),
    (7, "energy production rate", 300.0),
    (8, "single-mode master equation", 60.0),
    (9, "unraveling vs master equation", 180.0),
    (10, "mu-correlator predictions", 120.0),
    (11, "noise cancellation in mu+* + mu-", 60.0),
];

struct Check {
    pass: bool,
    measured: String,
    target: String,
}

fn sub_seed(seed: u64, id: u32) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(u64::from(id) << 40)
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Runs one criterion. Errors count as failures and are reported as the
/// measured value.
pub fn run_criterion(id: u32, seed: u64) -> Outcome {
    let (_, name, time_limit) = *CRITERIA.iter().find(|c| c.0 == id).expect("known criterion id");
    let start = Instant::now();
    let s = sub_seed(seed, id);
    let result = match id {
        1 => riccati_oracle(s),
        2 => kernel_special_cases(s),
        3 => propagator_identity(s),
        4 => noise_statistics(s),
        5 => ehrenfest(s),
        6 => vacuum_energy(s),
        7 => energy_rate(s),
        8 => master_equation(),
        9 => unraveling(s),
        10 => mu_correlators(s),
        11 => noise_cancellation_check(s),
        _ => unreachable!(),
    };
    let seconds = start.elapsed().as_secs_f64();
    let check =
        result.unwrap_or_else(|e| Check { pass: false, measured: format!("error: {e}"), target: String::new() });
    Outcome {
        id,
        name,
        pass: check.pass && seconds < time_limit,
        measured: check.measured,
        target: check.target,
        seconds,
        time_limit,
    }
}

pub fn run_battery(seed: u64, mut progress: impl FnMut(&Outcome)) -> Vec<Outcome> {
    CRITERIA
        .iter()
        .map(|c| {
            let o = run_criterion(c.0, seed);
            progress(&o);
            o
        })
        .collect()
}

pub fn format_line(o: &Outcome) -> String {
    format!(
        "[{}] {:>2}. {:<44} {} | target {} | {:.2}s (limit {}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.measured,
        o.target,
        o.seconds,
        o.time_limit
    )
}

pub fn format_table(outcomes: &[Outcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        out.push_str(&format_line(o));
        out.push('\n');
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    out.push_str(&format!("{passed}/{} criteria passed\n", outcomes.len()));
    out
}

fn random_v0(rng: &mut ChaCha8Rng, e: f64) -> Complex64 {
    Complex64::new(rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0)) * e
}

fn riccati_oracle(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let e: f64 = rng.random_range(0.5..5.0);
        let v0 = random_v0(&mut rng, e);
        let dt = 1e-3 / e;
        let steps = 10_000;
        let mut v = v0;
        for k in 1..=steps {
            let k1 = riccati_rhs(v, e);
            let k2 = riccati_rhs(v + k1 * (0.5 * dt), e);
            let k3 = riccati_rhs(v + k2 * (0.5 * dt), e);
            let k4 = riccati_rhs(v + k3 * dt, e);
            v += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
            worst = worst.max(rel(v, riccati_exact(v0, e, k as f64 * dt)?));
        }
    }
    Ok(Check { pass: worst <= 1e-8, measured: format!("max rel err {worst:.2e}"), target: "<= 1e-8".into() })
}

fn kernel_special_cases(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stationary = 0.0f64;
    let mut periodic = 0.0f64;
    let mut edge = 0.0f64;
    for _ in 0..20 {
        let e: f64 = rng.random_range(0.5..5.0);
        let v0 = random_v0(&mut rng, e);
        for k in 0..50 {
            let t = k as f64 * 0.37 / e;
            stationary = stationary.max(rel(riccati_exact(Complex64::new(e, 0.0), e, t)?, Complex64::new(e, 0.0)));
        }
        let period = std::f64::consts::PI / e;
        for n in 0..=3 {
            let n = n as f64;
            if n > 0.0 {
                periodic = periodic.max(rel(riccati_exact(v0, e, n * period)?, v0));
            }
            periodic = periodic.max(rel(riccati_exact(v0, e, (n + 0.5) * period)?, e * e / v0));
        }
        let zero = ModeLaw { v0: InitialKernel::Finite(Complex64::new(0.0, 0.0)), energy: e };
        let sharp = ModeLaw { v0: InitialKernel::Infinite, energy: e };
        let huge = Complex64::new(1e13 * e, 0.0);
        for _ in 0..200 {
            let t = rng.random_range(0.0..10.0) / e;
            let (s, c) = (t * e).sin_cos();
            if s.abs() < 0.1 || c.abs() < 0.1 {
                continue;
            }
            let tan = Complex64::new(0.0, e * s / c);
            let cot = Complex64::new(0.0, -e * c / s);
            edge = edge.max(rel(zero.kernel_at(t), tan)).max(rel(riccati_exact(Complex64::new(0.0, 0.0), e, t)?, tan));
            edge = edge.max(rel(sharp.kernel_at(t), cot)).max(rel(riccati_exact(huge, e, t)?, cot));
        }
    }
    let pass = stationary <= 1e-12 && periodic <= 1e-9 && edge <= 1e-9;
    Ok(Check {
        pass,
        measured: format!("stationary {stationary:.1e}, periodic {periodic:.1e}, tan/cot {edge:.1e}"),
        target: "<= 1e-12, 1e-9, 1e-9".into(),
    })
}

fn propagator_identity(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut identity = 0.0f64;
    let mut composition = 0.0f64;
    let i = Complex64::new(0.0, 1.0);
    for _ in 0..100 {
        let e: f64 = rng.random_range(0.5..5.0);
        let v0 = random_v0(&mut rng, e);
        let law = ModeLaw { v0: InitialKernel::Finite(v0), energy: e };
        let t1 = rng.random_range(0.0..5.0) / e;
        let t2 = t1 + rng.random_range(0.0..5.0) / e;
        let t3 = t2 + rng.random_range(0.0..5.0) / e;
        let integral = quadrature::integrate(|s| law.kernel_at(s), t1, t2, 1e-13, 1e-13)?;
        let p12 = propagator(v0, e, t1, t2)?;
        identity = identity.max(((-i * integral).exp() - p12).norm());
        let p13 = propagator(v0, e, t1, t3)?;
        composition = composition.max(rel(p12 * propagator(v0, e, t2, t3)?, p13));
        // also against the phase function directly
        identity = identity.max((phase_fn(v0, e, t1) / phase_fn(v0, e, t2) - p12).norm());
    }
    Ok(Check {
        pass: identity <= 1e-8 && composition <= 1e-12,
        measured: format!("identity {identity:.1e}, composition {composition:.1e}"),
        target: "<= 1e-8, 1e-12".into(),
    })
}

/// `(Σx²/σ² − n)/sqrt(2n)`: standardized χ² statistic of zero-mean samples.
fn chi2_z(sum_sq: f64, variance: f64, n: usize) -> f64 {
    (sum_sq / variance - n as f64) / (2.0 * n as f64).sqrt()
}

fn noise_statistics(seed: u64) -> Result<Check> {
    const SAMPLES: usize = 100_000;
    let dt = 0.01;
    let mut worst_z = 0.0f64;
    let mut parseval = 0.0f64;
    for (dim, sites) in [(1usize, 8usize), (2, 4), (3, 4)] {
        let table = build_mode_table(LatticeSpec::new(dim, sites, 8.0, 1.0)?)?;
        let d = component_variance(&table, dt);
        let slots = table.half_space().len();
        let cell_var = dt * table.spec().cell_volume();
        let cells = table.len();
        // per-thread partial sums of squares, merged in order
        let partial: Vec<(Vec<[f64; 2]>, Vec<f64>, f64)> = (0..SAMPLES as u64)
            .collect::<Vec<_>>()
            .par_chunks(4096)
            .map(|chunk| {
                let mut comp = vec![[0.0; 2]; slots];
                let mut pos = vec![0.0; cells];
                let mut worst = 0.0f64;
                for &k in chunk {
                    let slice = sample_slice(&table, dt, StreamSpec::new(seed, dim as u64), k);
                    let mut power = 0.0;
                    for (slot, z) in slice.increments.iter().enumerate() {
                        comp[slot][0] += z.re * z.re;
                        comp[slot][1] += z.im * z.im;
                        let mult = table.mode(table.half_space()[slot]).class.multiplicity() as f64;
                        power += mult * z.norm_sqr();
                    }
                    let field = to_position_noise(&slice, &table);
                    for (acc, x) in pos.iter_mut().zip(&field) {
                        *acc += x * x;
                    }
                    let direct: f64 = field.iter().map(|x| x * x).sum();
                    let spectral = table.spec().two_pi_dim().powi(2) / cells as f64 * power;
                    worst = worst.max((direct - spectral).abs() / spectral.max(f64::MIN_POSITIVE));
                }
                (comp, pos, worst)
            })
            .collect();
        let mut comp = vec![[0.0; 2]; slots];
        let mut pos = vec![0.0; cells];
        for (c, p, w) in &partial {
            for (a, b) in comp.iter_mut().zip(c) {
                a[0] += b[0];
                a[1] += b[1];
            }
            for (a, b) in pos.iter_mut().zip(p) {
                *a += b;
            }
            parseval = parseval.max(*w);
        }
        for (slot, sums) in comp.iter().enumerate() {
            match table.mode(table.half_space()[slot]).class {
                ModeClass::SelfConjugate => {
                    worst_z = worst_z.max(chi2_z(sums[0], 2.0 * d, SAMPLES).abs());
                    if sums[1] != 0.0 {
                        return Err(Error::Mismatch("self-conjugate increment has an imaginary part".into()));
                    }
                }
                _ => {
                    worst_z = worst_z.max(chi2_z(sums[0], d, SAMPLES).abs());
                    worst_z = worst_z.max(chi2_z(sums[1], d, SAMPLES).abs());
                }
            }
        }
        for &s in &pos {
            // cells are correlated only through the transform, which is orthogonal; each is N(0, dt·a^d)
            worst_z = worst_z.max(chi2_z(s, cell_var, SAMPLES).abs());
        }
    }
    // determinism across worker counts, byte for byte
    let table = build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0)?)?;
    let dynamics = Dynamics { dt: 0.01, t_max: 1.0, lambda: 0.1, scheme: Scheme::Exact, snapshot_stride: 10 };
    let csv = |threads| -> Result<String> {
        let opts = EnsembleOptions { per_mode: true, threads: Some(threads) };
        Ok(ensemble_csv(&run_ensemble(&table, &KernelInit::vacuum(), &dynamics, 300, seed, opts)?))
    };
    let deterministic = csv(1)? == csv(3)? && csv(8)? == csv(1)?;
    let replay = sample_slice(&table, 0.01, StreamSpec::new(seed, 0), 7)
        == sample_slice(&table, 0.01, StreamSpec::new(seed, 0), 7);
    Ok(Check {
        pass: worst_z <= 5.0 && parseval <= 1e-10 && deterministic && replay,
        measured: format!(
            "max |chi2 z| {worst_z:.2}, Parseval {parseval:.1e}, byte-identical across threads: {}",
            deterministic && replay
        ),
        target: "<= 5 sigma, <= 1e-10, true".into(),
    })
}

fn ehrenfest(seed: u64) -> Result<Check> {
    let table = build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0)?)?;
    let dynamics = Dynamics { dt: 1e-3, t_max: 10.0, lambda: 0.1, scheme: Scheme::Exact, snapshot_stride: 1 };
    let noise = StreamNoise { table: &table, dt: 1e-3, stream: StreamSpec::new(seed, 0) };
    let matched = ehrenfest_compare(&table, &KernelInit::vacuum(), &dynamics, Scheme::Exact, &noise)?;
    let ratios = euler_convergence(&table, seed)?;
    let ok_ratio = ratios.iter().all(|r| (r - 2.0).abs() <= 0.2);
    Ok(Check {
        pass: matched.relative_discrepancy <= 1e-9 && ok_ratio,
        measured: format!(
            "matched rel {:.1e}; Euler ratios {:.3}, {:.3}",
            matched.relative_discrepancy, ratios[0], ratios[1]
        ),
        target: "<= 1e-9; 2 +/- 0.2".into(),
    })
}

/// Euler-vs-Euler discrepancy at dt ∈ {1e-2, 5e-3, 2.5e-3}, averaged over
/// noise paths that are shared across the three grids. Starts from
/// `V₀ = 2E` because from the vacuum both Euler recursions coincide.
pub fn euler_convergence(table: &ModeTable, seed: u64) -> Result<[f64; 2]> {
    const PATHS: u64 = 64;
    let fine = 2.5e-3 / 4.0;
    let factors = [16usize, 8, 4];
    let init = KernelInit::scaled(Complex64::new(2.0, 0.0));
    let per_path: Vec<[f64; 3]> = (0..PATHS)
        .into_par_iter()
        .map(|path| -> Result<[f64; 3]> {
            let mut out = [0.0; 3];
            for (k, &factor) in factors.iter().enumerate() {
                let dt = fine * factor as f64;
                let noise = CoarsenedNoise {
                    fine: StreamNoise { table, dt: fine, stream: StreamSpec::new(seed, path) },
                    factor,
                };
                let dynamics = Dynamics { dt, t_max: 10.0, lambda: 0.1, scheme: Scheme::Euler, snapshot_stride: 1 };
                out[k] = ehrenfest_compare(table, &init, &dynamics, Scheme::Euler, &noise)?.max_discrepancy;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut mean = [0.0; 3];
    for p in &per_path {
        for k in 0..3 {
            mean[k] += p[k] / PATHS as f64;
        }
    }
    Ok([mean[0] / mean[1], mean[1] / mean[2]])
}

fn vacuum_energy(seed: u64) -> Result<Check> {
    let mut zero_point = 0.0f64;
    for (dim, sites, length, mass) in [(1, 8, 8.0, 1.0), (1, 2, 2.0, 1.0), (2, 6, 5.0, 0.5), (3, 4, 4.0, 1.0)] {
        let table = build_mode_table(LatticeSpec::new(dim, sites, length, mass)?)?;
        let expected: f64 = table.modes().iter().map(|m| 0.5 * m.energy).sum();
        let got = energy_free(&table, &KernelInit::vacuum())?;
        zero_point = zero_point.max((got - expected).abs() / expected);
    }
    // the free energy evaluated from V(t) is conserved along noisy runs
    let table = build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0)?)?;
    let mut drift = 0.0f64;
    for init in [KernelInit::vacuum(), KernelInit::scaled(Complex64::new(2.0, 0.5))] {
        let e0 = energy_free(&table, &init)?;
        let engine = KernelEngine::new(&table, &init, 0.5, Scheme::Exact, 0.01)?;
        let noise = StreamNoise { table: &table, dt: 0.01, stream: StreamSpec::new(seed, 0) };
        engine.run_with(&noise, 1000, 10, |state: &KernelState| {
            let kernels: Vec<InitialKernel> = state.v.iter().map(|&v| InitialKernel::Finite(v)).collect();
            drift = drift.max((energy_free_from_kernels(&table, &kernels)? - e0).abs() / e0);
            Ok(())
        })?;
    }
    Ok(Check {
        pass: zero_point <= 1e-12 && drift <= 1e-10,
        measured: format!("zero-point rel {zero_point:.1e}, drift {drift:.1e}"),
        target: "<= 1e-12, 1e-10".into(),
    })
}

fn slope_for(sites: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let table = build_mode_table(LatticeSpec::new(1, sites, 8.0, 1.0)?)?;
    let dt = 0.01 / table.max_energy();
    let stride = ((0.25 / dt).round() as usize).max(1);
    let dynamics = Dynamics { dt, t_max: 10.0, lambda: 0.1, scheme: Scheme::Exact, snapshot_stride: stride };
    let stats = run_ensemble(&table, &KernelInit::vacuum(), &dynamics, 4000, seed, EnsembleOptions::default())?;
    let expected = expected_energy_slope(&table, 0.1);
    let report = energy_slope(&stats, expected)?;
    Ok((report.slope, report.stderr, expected))
}

fn energy_rate(seed: u64) -> Result<Check> {
    let (s8, se8, x8) = slope_for(8, seed)?;
    let (s16, se16, x16) = slope_for(16, seed.wrapping_add(1))?;
    let z8 = (s8 - x8) / se8;
    let z16 = (s16 - x16) / se16;
    let z_double = (s16 - 2.0 * s8) / (se16 * se16 + 4.0 * se8 * se8).sqrt();
    Ok(Check {
        pass: z8.abs() <= 3.0 && z16.abs() <= 3.0 && z_double.abs() <= 3.0,
        measured: format!(
            "N_s=8 slope {s8:.5} +/- {se8:.5} (z {z8:.2}); N_s=16 {s16:.5} +/- {se16:.5} (z {z16:.2}); doubling z {z_double:.2}"
        ),
        target: format!("{x8} and {x16} within 3 SE"),
    })
}

fn master_equation() -> Result<Check> {
    let energies = [0.5, 1.0, 2.0];
    let results: Vec<(f64, f64)> = energies
        .par_iter()
        .map(|&e| -> Result<(f64, f64)> {
            let gen = SingleModeGenerator::new(e, 0.1, 60)?;
            let series = integrate(&DensityMatrix::vacuum(60, e), &gen, 2e-3, 20.0, 100)?;
            let t: Vec<f64> = series.samples.iter().map(|s| s.t).collect();
            let y: Vec<f64> = series.samples.iter().map(|s| s.energy).collect();
            let fit = fit_linear(&t, &y, None)?;
            let drift = series.samples.iter().map(|s| s.trace_err).fold(0.0, f64::max) / 20.0;
            Ok(((fit.slope / 0.005 - 1.0).abs(), drift))
        })
        .collect::<Result<_>>()?;
    let worst_rate = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_drift = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(Check {
        pass: worst_rate <= 1e-3 && worst_drift <= 1e-10,
        measured: format!("max rel rate err {worst_rate:.1e}, trace drift {worst_drift:.1e}/time"),
        target: "<= 1e-3, 1e-10".into(),
    })
}

fn unraveling(seed: u64) -> Result<Check> {
    let cfg = UnravelingConfig {
        energy: 1.0,
        lambda: 0.2,
        dt: 0.01,
        t_max: 10.0,
        stride: 50,
        trajectories: 10_000,
        master_seed: seed,
        n_max: 60,
        lindblad_dt: 2e-3,
    };
    let report = unraveling_consistency(&cfg)?;
    Ok(Check {
        pass: report.max_energy_z <= 3.0 && report.max_x_z <= 3.0,
        measured: format!(
            "max energy z {:.2}, max <x> z {:.2} (<x^2> z {:.2}, not gated) over {} times",
            report.max_energy_z,
            report.max_x_z,
            report.max_x2_z,
            report.rows.len()
        ),
        target: "<= 3".into(),
    })
}

fn mu_correlators(seed: u64) -> Result<Check> {
    let table = build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0)?)?;
    let lambda = 0.1;
    let kappa = table.spec().kappa();
    // the vacuum prediction is exact
    let vacuum = KernelEngine::new(&table, &KernelInit::vacuum(), lambda, Scheme::Exact, 1e-3)?;
    let mut vacuum_err = 0.0f64;
    for law in vacuum.laws() {
        for t in [0.5, 2.0, 7.0] {
            let (pair, modulus) = ensemble_mu_correlators(&table, law, lambda, t)?;
            let e = law.energy;
            let pair_exact = -lambda * lambda / kappa * (1.0 - Complex64::new(0.0, -2.0 * e * t).exp())
                / Complex64::new(0.0, 2.0 * e);
            vacuum_err = vacuum_err.max((modulus - lambda * lambda * t / kappa).abs() / (lambda * lambda * t / kappa));
            vacuum_err = vacuum_err.max(rel(pair, pair_exact));
        }
    }
    let init = KernelInit::scaled(Complex64::new(1.5, 0.5));
    let dynamics = Dynamics { dt: 1e-3, t_max: 2.0, lambda, scheme: Scheme::Exact, snapshot_stride: 500 };
    let stats =
        run_ensemble(&table, &init, &dynamics, 10_000, seed, EnsembleOptions { per_mode: true, threads: None })?;
    let engine = KernelEngine::new(&table, &init, lambda, Scheme::Exact, 1e-3)?;
    let mut worst = 0.0f64;
    for (slot, &id) in table.half_space().iter().enumerate() {
        let abs2 = stats.series(&format!("mu_abs2[{id}]")).expect("tracked");
        let pair_re = stats.series(&format!("mu_pair_re[{id}]")).expect("tracked");
        let pair_im = stats.series(&format!("mu_pair_im[{id}]")).expect("tracked");
        for (k, &t) in stats.times.iter().enumerate().skip(1) {
            let (pair, modulus) = ensemble_mu_correlators(&table, &engine.laws()[slot], lambda, t)?;
            let z = |m: &Moments, x: f64| (m.mean - x).abs() / m.stderr();
            worst = worst.max(z(&abs2[k], modulus)).max(z(&pair_re[k], pair.re));
            if table.mode(id).class == ModeClass::Independent {
                worst = worst.max(z(&pair_im[k], pair.im));
            }
        }
    }
    Ok(Check {
        pass: worst <= 5.0 && vacuum_err <= 1e-9,
        measured: format!("max z {worst:.2}; vacuum prediction rel err {vacuum_err:.1e}"),
        target: "<= 5 sigma; exact".into(),
    })
}

/// Per-step increment variance of `μ₊* + μ₋` for each `dt`, taken from one
/// ensemble of states prepared at `t_prep`. Returns, per half-space slot,
/// the variances in the order of `dts`.
pub fn noise_cancellation(
    table: &ModeTable,
    init: &KernelInit,
    lambda: f64,
    trajectories: u64,
    seed: u64,
    t_prep: f64,
    dts: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let prep_dt = 1e-3;
    let engine = KernelEngine::new(table, init, lambda, Scheme::Exact, prep_dt)?;
    let steps = engine.steps_for(t_prep);
    let states: Vec<KernelState> = (0..trajectories)
        .into_par_iter()
        .map(|id| {
            let noise = StreamNoise { table, dt: prep_dt, stream: StreamSpec::new(seed, id) };
            engine.run_with(&noise, steps, steps.max(1), |_| Ok(()))
        })
        .collect::<Result<_>>()?;
    let slots = table.half_space().len();
    let mut out = vec![Vec::with_capacity(dts.len()); slots];
    for (k, &dt) in dts.iter().enumerate() {
        let mut acc = vec![[Moments::default(); 2]; slots];
        for (id, state) in states.iter().enumerate() {
            // fresh increments, from a stream no trajectory has used
            let slice = sample_slice(table, dt, StreamSpec::new(seed ^ 0x5eed_5eed, id as u64), k as u64);
            for (slot, law) in engine.laws().iter().enumerate() {
                let prop = law.propagator(state.t, state.t + dt)?;
                let dw = slice.increments[slot];
                let plus = mu_step_exact(state.mu_plus[slot], dw, prop, lambda);
                let minus = mu_step_exact(state.mu_minus[slot], dw.conj(), prop, lambda);
                let delta = (plus.conj() + minus) - (state.mu_plus[slot].conj() + state.mu_minus[slot]);
                acc[slot][0].push(delta.re);
                acc[slot][1].push(delta.im);
            }
        }
        for (slot, m) in acc.iter().enumerate() {
            out[slot].push(m[0].variance() + m[1].variance());
        }
    }
    Ok(out)
}

fn noise_cancellation_check(seed: u64) -> Result<Check> {
    let table = build_mode_table(LatticeSpec::new(1, 8, 8.0, 1.0)?)?;
    let dts = [1e-2, 1e-3, 1e-4];
    let variances = noise_cancellation(&table, &KernelInit::vacuum(), 0.1, 10_000, seed, 1.0, &dts)?;
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let mut worst = 0.0f64;
    let mut slopes = Vec::new();
    for v in &variances {
        let y: Vec<f64> = v.iter().map(|s| s.ln()).collect();
        let slope = fit_linear(&x, &y, None)?.slope;
        worst = worst.max((slope - 2.0).abs());
        slopes.push(slope);
    }
    let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Check {
        pass: worst <= 0.1,
        measured: format!("log-log slopes in [{lo:.3}, {hi:.3}] over {} modes", slopes.len()),
        target: "2.0 +/- 0.1".into(),
    })
}
