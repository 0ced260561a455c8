//! Independent-trajectory ensembles and their statistics.
//!
//! Trajectory `i` draws its noise from `StreamSpec(master_seed, i)`. Work is
//! split into fixed-size chunks of consecutive trajectory ids, each chunk is
//! accumulated sequentially and the chunk aggregates are merged in id order,
//! so results are bit-identical for any worker count.

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{Dynamics, KernelEngine, KernelInit, KernelState};
use crate::lattice::ModeTable;
use crate::noise::{StreamNoise, StreamSpec};
use crate::observables::{energy_free, field_expectation, mode_energy_free, mode_energy_noise};

/// Trajectories per work item.
pub const CHUNK: usize = 32;

/// Streaming count/mean/M2 with pairwise merging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.count = n;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `t`. With `stderr` given, points are
/// weighted by `1/σ²` and the slope error follows from the stated errors;
/// otherwise it follows from the residual scatter.
pub fn fit_linear(t: &[f64], y: &[f64], stderr: Option<&[f64]>) -> Result<SlopeFit> {
    if t.len() != y.len() || stderr.is_some_and(|s| s.len() != t.len()) {
        return Err(Error::Mismatch("series lengths differ".into()));
    }
    if t.len() < 3 {
        return Err(Error::InvalidArgument(format!("a linear fit needs at least 3 points (got {})", t.len())));
    }
    let weights: Vec<f64> = match stderr {
        Some(se) => {
            if let Some(bad) = se.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::InvalidArgument(format!("weighted fit needs positive standard errors (got {bad})")));
            }
            se.iter().map(|s| 1.0 / (s * s)).collect()
        }
        None => vec![1.0; t.len()],
    };
    let w_sum: f64 = weights.iter().sum();
    let t_mean = weights.iter().zip(t).map(|(w, x)| w * x).sum::<f64>() / w_sum;
    let y_mean = weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>() / w_sum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((&w, &x), &v) in weights.iter().zip(t).zip(y) {
        sxx += w * (x - t_mean).powi(2);
        sxy += w * (x - t_mean) * (v - y_mean);
        syy += w * (v - y_mean).powi(2);
    }
    if !(sxx > 0.0) || sxx <= 1e-14 * weights.iter().zip(t).map(|(w, x)| w * x * x).sum::<f64>() {
        return Err(Error::InvalidArgument("degenerate abscissa: all t are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let rss: f64 = weights.iter().zip(t).zip(y).map(|((&w, &x), &v)| w * (v - intercept - slope * x).powi(2)).sum();
    let slope_stderr = match stderr {
        Some(_) => (1.0 / sxx).sqrt(),
        None => (rss / (t.len() - 2) as f64 / sxx).sqrt(),
    };
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    Ok(SlopeFit { slope, intercept, slope_stderr, r_squared })
}

/// Unweighted OLS slope, used per trajectory.
fn ols_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let sxx: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnsembleOptions {
    /// Track per-mode kernel moments and energies in addition to totals.
    pub per_mode: bool,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Aggregated observables at each output time, plus per-trajectory slope
/// statistics of the energies.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `moments[time][observable]`.
    pub moments: Vec<Vec<Moments>>,
    /// Per-trajectory OLS slopes, keyed like `names` for the energy series.
    pub slope_names: Vec<String>,
    pub slopes: Vec<Moments>,
}

impl EnsembleStats {
    fn empty(times: Vec<f64>, names: Vec<String>, slope_names: Vec<String>) -> Self {
        let moments = vec![vec![Moments::default(); names.len()]; times.len()];
        let slopes = vec![Moments::default(); slope_names.len()];
        EnsembleStats { times, names, moments, slope_names, slopes }
    }

    pub fn count(&self) -> u64 {
        self.slopes.first().map_or(0, |m| m.count)
    }

    /// Pairwise merge of two aggregates over disjoint trajectory sets.
    pub fn merge(&mut self, other: &EnsembleStats) -> Result<()> {
        if self.times != other.times || self.names != other.names || self.slope_names != other.slope_names {
            return Err(Error::Mismatch("ensemble aggregates have different layouts".into()));
        }
        for (row, other_row) in self.moments.iter_mut().zip(&other.moments) {
            for (m, o) in row.iter_mut().zip(other_row) {
                m.merge(o);
            }
        }
        for (m, o) in self.slopes.iter_mut().zip(&other.slopes) {
            m.merge(o);
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Moments of one observable at every output time.
    pub fn series(&self, name: &str) -> Option<Vec<Moments>> {
        let k = self.index_of(name)?;
        Some(self.moments.iter().map(|row| row[k]).collect())
    }

    pub fn slope(&self, name: &str) -> Option<Moments> {
        self.slope_names.iter().position(|n| n == name).map(|k| self.slopes[k])
    }
}

fn observable_names(table: &ModeTable, per_mode: bool) -> Vec<String> {
    let mut names = vec!["E1".to_string(), "E_total".to_string(), "E_density".to_string()];
    if per_mode {
        for &id in table.half_space() {
            for kind in ["mu_abs2", "mu_pair_re", "mu_pair_im", "phi_re", "phi_im", "phi_abs2", "energy"] {
                names.push(format!("{kind}[{id}]"));
            }
        }
    }
    names
}

fn record(
    table: &ModeTable,
    state: &KernelState,
    e0: f64,
    per_mode: bool,
    engine: &KernelEngine,
    out: &mut Vec<f64>,
) -> Result<()> {
    let e1 = crate::observables::energy_noise(table, state)?;
    let total = e0 + e1;
    out.push(e1);
    out.push(total);
    out.push(total / table.spec().volume());
    if per_mode {
        for slot in 0..table.half_space().len() {
            let (plus, minus) = (state.mu_plus[slot], state.mu_minus[slot]);
            let pair = plus * minus;
            let phi = field_expectation(table, state, slot)?;
            let energy = mode_energy_free(table, &engine.laws()[slot], slot)? + mode_energy_noise(table, state, slot)?;
            out.extend([plus.norm_sqr(), pair.re, pair.im, phi.re, phi.im, phi.norm_sqr(), energy]);
        }
    }
    Ok(())
}

struct Job<'a> {
    table: &'a ModeTable,
    init: &'a KernelInit,
    dynamics: &'a Dynamics,
    master_seed: u64,
    per_mode: bool,
    e0: f64,
    times: Vec<f64>,
    names: Vec<String>,
}

impl Job<'_> {
    fn run_chunk(&self, ids: Range<u64>) -> Result<EnsembleStats> {
        let slope_names = vec!["E1".to_string(), "E_total".to_string()];
        let mut stats = EnsembleStats::empty(self.times.clone(), self.names.clone(), slope_names);
        let engine =
            KernelEngine::new(self.table, self.init, self.dynamics.lambda, self.dynamics.scheme, self.dynamics.dt)?;
        let width = self.names.len();
        let mut row = Vec::with_capacity(width);
        let mut e1_series = Vec::with_capacity(self.times.len());
        for id in ids {
            let noise =
                StreamNoise { table: self.table, dt: self.dynamics.dt, stream: StreamSpec::new(self.master_seed, id) };
            let mut k = 0;
            e1_series.clear();
            engine
                .run_with(&noise, self.dynamics.steps(), self.dynamics.snapshot_stride, |state| {
                    row.clear();
                    record(self.table, state, self.e0, self.per_mode, &engine, &mut row)?;
                    for (m, &x) in stats.moments[k].iter_mut().zip(&row) {
                        m.push(x);
                    }
                    e1_series.push(row[0]);
                    k += 1;
                    Ok(())
                })
                .map_err(|e| Error::Trajectory { trajectory: id, source: Box::new(e) })?;
            let slope = if self.times.len() >= 2 { ols_slope(&self.times, &e1_series) } else { 0.0 };
            // E_total differs from E1 by the conserved E0, so the slopes coincide
            stats.slopes[0].push(slope);
            stats.slopes[1].push(slope);
        }
        Ok(stats)
    }
}

/// Output times of a run: steps `0, stride, 2·stride, …` and the last step.
pub fn output_times(dynamics: &Dynamics) -> Vec<f64> {
    let stride = dynamics.snapshot_stride.max(1);
    let steps = dynamics.steps();
    let mut out: Vec<f64> = (0..=steps).step_by(stride).map(|k| k as f64 * dynamics.dt).collect();
    if !steps.is_multiple_of(stride) {
        out.push(steps as f64 * dynamics.dt);
    }
    out
}

/// Runs trajectories `ids` and aggregates their observables.
pub fn run_ensemble_range(
    table: &ModeTable,
    init: &KernelInit,
    dynamics: &Dynamics,
    ids: Range<u64>,
    master_seed: u64,
    options: EnsembleOptions,
) -> Result<EnsembleStats> {
    if dynamics.snapshot_stride == 0 {
        return Err(Error::InvalidArgument("snapshot stride must be >= 1".into()));
    }
    // validates init and grid before spawning work
    KernelEngine::new(table, init, dynamics.lambda, dynamics.scheme, dynamics.dt)?;
    let job = Job {
        table,
        init,
        dynamics,
        master_seed,
        per_mode: options.per_mode,
        e0: energy_free(table, init)?,
        times: output_times(dynamics),
        names: observable_names(table, options.per_mode),
    };
    let chunks: Vec<Range<u64>> =
        (ids.start..ids.end).step_by(CHUNK).map(|start| start..(start + CHUNK as u64).min(ids.end)).collect();
    let work = || chunks.par_iter().map(|r| job.run_chunk(r.clone())).collect::<Result<Vec<_>>>();
    let parts = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut total = EnsembleStats::empty(job.times.clone(), job.names.clone(), vec!["E1".into(), "E_total".into()]);
    for part in &parts {
        total.merge(part)?;
    }
    Ok(total)
}

/// Runs trajectories `0..trajectories`.
pub fn run_ensemble(
    table: &ModeTable,
    init: &KernelInit,
    dynamics: &Dynamics,
    trajectories: u64,
    master_seed: u64,
    options: EnsembleOptions,
) -> Result<EnsembleStats> {
    if trajectories < 2 {
        return Err(Error::InvalidArgument(format!("an ensemble needs at least 2 trajectories (got {trajectories})")));
    }
    run_ensemble_range(table, init, dynamics, 0..trajectories, master_seed, options)
}

/// Fitted energy growth compared with the expected slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeReport {
    pub slope: f64,
    pub stderr: f64,
    pub expected_slope: f64,
    pub z_score: f64,
    pub trajectories: u64,
}

/// Growth rate of the ensemble-mean energy. The slope is the OLS slope of
/// the mean curve; its error comes from the spread of per-trajectory slopes,
/// which accounts for the correlation between output times.
pub fn energy_slope(stats: &EnsembleStats, expected_slope: f64) -> Result<SlopeReport> {
    let m = stats.slope("E1").ok_or_else(|| Error::Mismatch("ensemble has no E1 slope data".into()))?;
    let stderr = m.stderr();
    let z_score = if stderr > 0.0 {
        (m.mean - expected_slope) / stderr
    } else if m.mean == expected_slope {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SlopeReport { slope: m.mean, stderr, expected_slope, z_score, trajectories: m.count })
}

/// Expected growth rate of the total energy, `λ² N_full / 2`.
pub fn expected_energy_slope(table: &ModeTable, lambda: f64) -> f64 {
    0.5 * lambda * lambda * table.len() as f64
}
