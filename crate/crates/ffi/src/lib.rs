//! C ABI over the `noisefield` simulator.
//!
//! Every fallible call returns an [`NfStatus`]; on failure the message is
//! available from [`nf_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_run` and released with the matching
//! `*_free`. Panics never cross the boundary: they surface as
//! [`NfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use noisefield::ensemble::{energy_slope, expected_energy_slope, run_ensemble, EnsembleOptions};
use noisefield::lindblad::{integrate_adaptive, DensityMatrix, LindbladSeries};
use noisefield::noise::sample_slice;
use noisefield::observables::{energy_free, full_field_expectation, observe};
use noisefield::{
    build_mode_table, Dynamics, Error, KernelChoice, KernelEngine, KernelInit, KernelState, LatticeSpec, ModeClass,
    ModeTable, NoiseSlice, Scheme, StreamSpec,
};
use num_complex::Complex64;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidLattice = 3,
    /// Array lengths or grids that do not fit together.
    Mismatch = 4,
    /// Singular kernel, non-finite values, positivity loss.
    Numerical = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfComplex {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for NfComplex {
    fn from(z: Complex64) -> Self {
        NfComplex { re: z.re, im: z.im }
    }
}

impl From<NfComplex> for Complex64 {
    fn from(z: NfComplex) -> Self {
        Complex64::new(z.re, z.im)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfModeClass {
    Independent = 0,
    SelfConjugate = 1,
    Dependent = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfScheme {
    Exact = 0,
    Euler = 1,
}

/// Initial quadratic kernel family. `Scaled` uses the `scale` argument.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfKernelChoice {
    Vacuum = 0,
    Scaled = 1,
    Zero = 2,
    Deterministic = 3,
}

/// One lattice mode. Index and momentum components beyond `dim` are zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfMode {
    pub id: usize,
    pub index: [i64; 3],
    pub momentum: [f64; 3],
    pub energy: f64,
    pub mode_class: NfModeClass,
    pub partner: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfObservables {
    pub t: f64,
    pub e0: f64,
    pub e1: f64,
    pub e_total: f64,
    pub e_density: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfSlope {
    pub slope: f64,
    pub slope_stderr: f64,
    pub expected_slope: f64,
    pub z_score: f64,
    pub trajectories: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfLindbladSample {
    pub t: f64,
    pub energy: f64,
    pub x_mean: f64,
    pub x2_mean: f64,
    pub trace_err: f64,
    pub min_eig: f64,
}

/// Mode table of a periodic lattice.
pub struct NfLattice {
    table: Arc<ModeTable>,
}

/// One trajectory driven by its seeded noise stream or by caller-supplied increments.
pub struct NfTrajectory {
    table: Arc<ModeTable>,
    init: KernelInit,
    lambda: f64,
    scheme: Scheme,
    dt: f64,
    stream: StreamSpec,
    e0: f64,
    state: KernelState,
}

/// Time series of a single-mode master-equation integration.
pub struct NfLindblad {
    series: LindbladSeries,
}

struct Failure {
    status: NfStatus,
    message: String,
}

impl Failure {
    fn new(status: NfStatus, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }
}

fn status_of(e: &Error) -> NfStatus {
    match e {
        Error::Trajectory { source, .. } => status_of(source),
        e if e.is_numerical() => NfStatus::Numerical,
        Error::InvalidLattice(_) => NfStatus::InvalidLattice,
        Error::Mismatch(_) | Error::Format(_) => NfStatus::Mismatch,
        Error::Io(_) => NfStatus::Io,
        _ => NfStatus::InvalidArgument,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { status: status_of(&e), message: e.to_string() }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> NfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NfStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            NfStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure::new(NfStatus::NullPointer, format!("{name} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn as_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn check_len(name: &str, got: usize, want: usize) -> Result<(), Failure> {
    if got == want {
        Ok(())
    } else {
        Err(Failure::new(NfStatus::Mismatch, format!("{name} has length {got}, expected {want}")))
    }
}

fn scheme_of(s: NfScheme) -> Scheme {
    match s {
        NfScheme::Exact => Scheme::Exact,
        NfScheme::Euler => Scheme::Euler,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Static name of a status code, e.g. `"NULL_POINTER"`.
#[no_mangle]
pub extern "C" fn nf_status_name(status: NfStatus) -> *const c_char {
    let s: &'static CStr = match status {
        NfStatus::Ok => c"OK",
        NfStatus::NullPointer => c"NULL_POINTER",
        NfStatus::InvalidArgument => c"INVALID_ARGUMENT",
        NfStatus::InvalidLattice => c"INVALID_LATTICE",
        NfStatus::Mismatch => c"MISMATCH",
        NfStatus::Numerical => c"NUMERICAL",
        NfStatus::Io => c"IO",
        NfStatus::OutOfRange => c"OUT_OF_RANGE",
        NfStatus::Panic => c"PANIC",
    };
    s.as_ptr()
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn nf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds the mode table of a `dim`-dimensional lattice with `sites` points
/// per axis, box length `length` and mass `mass`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nf_lattice_new(
    dim: usize,
    sites: usize,
    length: f64,
    mass: f64,
    out: *mut *mut NfLattice,
) -> NfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let table = build_mode_table(LatticeSpec::new(dim, sites, length, mass)?)?;
        write(out, Box::into_raw(Box::new(NfLattice { table: Arc::new(table) })), "out")
    })
}

/// # Safety
/// `lattice` must be null or a handle from [`nf_lattice_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nf_lattice_free(lattice: *mut NfLattice) {
    if !lattice.is_null() {
        drop(Box::from_raw(lattice));
    }
}

/// Number of lattice modes, `sites^dim`.
///
/// # Safety
/// `lattice` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_lattice_mode_count(lattice: *const NfLattice, out: *mut usize) -> NfStatus {
    guard(|| write(out, as_ref(lattice, "lattice")?.table.len(), "out"))
}

/// Number of independent (half-space) modes; trajectory arrays use this length.
///
/// # Safety
/// `lattice` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_lattice_half_count(lattice: *const NfLattice, out: *mut usize) -> NfStatus {
    guard(|| write(out, as_ref(lattice, "lattice")?.table.half_space().len(), "out"))
}

/// # Safety
/// `lattice` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_lattice_mode(lattice: *const NfLattice, id: usize, out: *mut NfMode) -> NfStatus {
    guard(|| {
        let table = &as_ref(lattice, "lattice")?.table;
        let m = table
            .modes()
            .get(id)
            .ok_or_else(|| Failure::new(NfStatus::OutOfRange, format!("mode {id} out of range 0..{}", table.len())))?;
        let mode_class = match m.class {
            ModeClass::Independent => NfModeClass::Independent,
            ModeClass::SelfConjugate => NfModeClass::SelfConjugate,
            ModeClass::Dependent => NfModeClass::Dependent,
        };
        let mode =
            NfMode { id: m.id, index: m.index, momentum: m.momentum, energy: m.energy, mode_class, partner: m.partner };
        write(out, mode, "out")
    })
}

/// Mode ids of the half-space slots, in slot order. `len` must equal the half count.
///
/// # Safety
/// `ids` must point to `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn nf_lattice_half_space(lattice: *const NfLattice, ids: *mut usize, len: usize) -> NfStatus {
    guard(|| {
        let half = as_ref(lattice, "lattice")?.table.half_space();
        check_len("ids", len, half.len())?;
        if ids.is_null() {
            return Err(null("ids"));
        }
        ptr::copy_nonoverlapping(half.as_ptr(), ids, len);
        Ok(())
    })
}

/// Creates a trajectory at `t = 0`.
///
/// `scale` is only read for [`NfKernelChoice::Scaled`]. `mu0_plus` and
/// `mu0_minus` hold the initial linear kernels per half-space slot; pass
/// null for both (with `mu0_len = 0`) to start from zero. The noise stream
/// is keyed by `(master_seed, trajectory_id)`, matching the CLI.
///
/// # Safety
/// `lattice` must be a live handle, the μ₀ arrays must hold `mu0_len`
/// elements each, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_trajectory_new(
    lattice: *const NfLattice,
    kernel: NfKernelChoice,
    scale: NfComplex,
    mu0_plus: *const NfComplex,
    mu0_minus: *const NfComplex,
    mu0_len: usize,
    lambda: f64,
    scheme: NfScheme,
    dt: f64,
    master_seed: u64,
    trajectory_id: u64,
    out: *mut *mut NfTrajectory,
) -> NfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let table = Arc::clone(&as_ref(lattice, "lattice")?.table);
        let v0 = match kernel {
            NfKernelChoice::Vacuum => KernelChoice::Vacuum,
            NfKernelChoice::Scaled => KernelChoice::Scaled(scale.into()),
            NfKernelChoice::Zero => KernelChoice::Zero,
            NfKernelChoice::Deterministic => KernelChoice::Deterministic,
        };
        let mu0 = if mu0_len == 0 && mu0_plus.is_null() && mu0_minus.is_null() {
            None
        } else {
            let plus = slice_in(mu0_plus, mu0_len, "mu0_plus")?;
            let minus = slice_in(mu0_minus, mu0_len, "mu0_minus")?;
            Some(plus.iter().zip(minus).map(|(&a, &b)| (a.into(), b.into())).collect())
        };
        let init = KernelInit { v0, mu0 };
        let scheme = scheme_of(scheme);
        let engine = KernelEngine::new(&table, &init, lambda, scheme, dt)?;
        let state = engine.initial_state();
        let e0 = if init.v0.is_edge_case() { f64::NAN } else { energy_free(&table, &init)? };
        let traj = NfTrajectory {
            table: Arc::clone(&table),
            init,
            lambda,
            scheme,
            dt,
            stream: StreamSpec::new(master_seed, trajectory_id),
            e0,
            state,
        };
        write(out, Box::into_raw(Box::new(traj)), "out")
    })
}

/// # Safety
/// `trajectory` must be null or a handle from [`nf_trajectory_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nf_trajectory_free(trajectory: *mut NfTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

impl NfTrajectory {
    fn advance(&mut self, slices: impl Iterator<Item = NoiseSlice>) -> Result<(), Failure> {
        let engine = KernelEngine::new(&self.table, &self.init, self.lambda, self.scheme, self.dt)?;
        // the state is only replaced when every step succeeds
        let mut next = self.state.clone();
        for slice in slices {
            engine.advance(&mut next, &slice)?;
        }
        self.state = next;
        Ok(())
    }
}

/// Advances `steps` grid steps using the trajectory's own noise stream.
/// On failure the trajectory keeps its previous state.
///
/// # Safety
/// `trajectory` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nf_trajectory_step(trajectory: *mut NfTrajectory, steps: usize) -> NfStatus {
    guard(|| {
        let traj = as_mut(trajectory, "trajectory")?;
        let start = traj.state.step;
        let (table, dt, stream) = (Arc::clone(&traj.table), traj.dt, traj.stream);
        traj.advance((start..start + steps).map(|k| sample_slice(&table, dt, stream, k as u64)))
    })
}

/// Advances one step with caller-supplied increments `dW` per half-space slot.
///
/// # Safety
/// `increments` must point to `len` readable elements.
#[no_mangle]
pub unsafe extern "C" fn nf_trajectory_step_with_noise(
    trajectory: *mut NfTrajectory,
    increments: *const NfComplex,
    len: usize,
) -> NfStatus {
    guard(|| {
        let traj = as_mut(trajectory, "trajectory")?;
        check_len("increments", len, traj.table.half_space().len())?;
        let dw = slice_in(increments, len, "increments")?;
        let slice = NoiseSlice { dt: traj.dt, increments: dw.iter().map(|&z| z.into()).collect() };
        traj.advance(std::iter::once(slice))
    })
}

/// Current time and step count. Either output may be null.
///
/// # Safety
/// `trajectory` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_trajectory_time(trajectory: *const NfTrajectory, t: *mut f64, step: *mut u64) -> NfStatus {
    guard(|| {
        let traj = as_ref(trajectory, "trajectory")?;
        if !t.is_null() {
            t.write(traj.state.t);
        }
        if !step.is_null() {
            step.write(traj.state.step as u64);
        }
        Ok(())
    })
}

/// Copies the kernels `V`, `μ(p)` and `μ(−p)` per half-space slot. Any
/// output may be null; non-null outputs need `len` = half count elements.
///
/// # Safety
/// Non-null outputs must point to `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn nf_trajectory_kernels(
    trajectory: *const NfTrajectory,
    v: *mut NfComplex,
    mu_plus: *mut NfComplex,
    mu_minus: *mut NfComplex,
    len: usize,
) -> NfStatus {
    guard(|| {
        let traj = as_ref(trajectory, "trajectory")?;
        check_len("output arrays", len, traj.state.v.len())?;
        for (dst, src) in [(v, &traj.state.v), (mu_plus, &traj.state.mu_plus), (mu_minus, &traj.state.mu_minus)] {
            if !dst.is_null() {
                for (k, z) in src.iter().enumerate() {
                    dst.add(k).write((*z).into());
                }
            }
        }
        Ok(())
    })
}

/// Field expectation `⟨φ(p)⟩` for every lattice mode (length = mode count).
///
/// # Safety
/// `out` must point to `len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn nf_trajectory_field(
    trajectory: *const NfTrajectory,
    out: *mut NfComplex,
    len: usize,
) -> NfStatus {
    guard(|| {
        let traj = as_ref(trajectory, "trajectory")?;
        check_len("out", len, traj.table.len())?;
        if out.is_null() {
            return Err(null("out"));
        }
        for (k, z) in full_field_expectation(&traj.table, &traj.state)?.into_iter().enumerate() {
            out.add(k).write(z.into());
        }
        Ok(())
    })
}

/// Energies at the current time. Fails with `INVALID_ARGUMENT` for the
/// zero and deterministic initial kernels, whose energy is unbounded.
///
/// # Safety
/// `trajectory` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_trajectory_observe(trajectory: *const NfTrajectory, out: *mut NfObservables) -> NfStatus {
    guard(|| {
        let traj = as_ref(trajectory, "trajectory")?;
        if traj.init.v0.is_edge_case() {
            return Err(Failure::new(NfStatus::InvalidArgument, "energy is unbounded for this initial kernel"));
        }
        let r = observe(&traj.table, &traj.state, traj.e0)?;
        write(out, NfObservables { t: r.t, e0: r.e0, e1: r.e1, e_total: r.e_total, e_density: r.e_density }, "out")
    })
}

/// Vacuum-started ensemble of `trajectories` runs; fits the growth rate of
/// the mean noise energy and compares it with `λ² N / 2`.
///
/// # Safety
/// `lattice` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_energy_slope(
    lattice: *const NfLattice,
    lambda: f64,
    dt: f64,
    t_max: f64,
    snapshot_stride: usize,
    trajectories: u64,
    master_seed: u64,
    out: *mut NfSlope,
) -> NfStatus {
    guard(|| {
        let table = &as_ref(lattice, "lattice")?.table;
        if out.is_null() {
            return Err(null("out"));
        }
        let dynamics = Dynamics { dt, t_max, lambda, scheme: Scheme::Exact, snapshot_stride };
        let stats = run_ensemble(
            table,
            &KernelInit::vacuum(),
            &dynamics,
            trajectories,
            master_seed,
            EnsembleOptions::default(),
        )?;
        let r = energy_slope(&stats, expected_energy_slope(table, lambda))?;
        write(
            out,
            NfSlope {
                slope: r.slope,
                slope_stderr: r.stderr,
                expected_slope: r.expected_slope,
                z_score: r.z_score,
                trajectories: r.trajectories,
            },
            "out",
        )
    })
}

/// Integrates the single-mode master equation from the coherent state
/// `alpha` (zero gives the vacuum). The Fock cutoff starts at `n_max` and
/// is doubled until the top level stays unpopulated.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_lindblad_run(
    energy: f64,
    lambda: f64,
    alpha: NfComplex,
    n_max: usize,
    dt: f64,
    t_max: f64,
    stride: usize,
    out: *mut *mut NfLindblad,
) -> NfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n_max < 2 {
            return Err(Failure::new(NfStatus::InvalidArgument, format!("n_max must be >= 2 (got {n_max})")));
        }
        let rho0 = DensityMatrix::coherent(n_max, energy, alpha.into());
        let series = integrate_adaptive(&rho0, energy, lambda, dt, t_max, stride)?;
        write(out, Box::into_raw(Box::new(NfLindblad { series })), "out")
    })
}

/// # Safety
/// `run` must be null or a handle from [`nf_lindblad_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nf_lindblad_free(run: *mut NfLindblad) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of stored samples and the Fock cutoff finally used. Either output may be null.
///
/// # Safety
/// `run` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_lindblad_info(run: *const NfLindblad, samples: *mut usize, n_max: *mut usize) -> NfStatus {
    guard(|| {
        let series = &as_ref(run, "run")?.series;
        if !samples.is_null() {
            samples.write(series.samples.len());
        }
        if !n_max.is_null() {
            n_max.write(series.n_max);
        }
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_lindblad_sample(
    run: *const NfLindblad,
    index: usize,
    out: *mut NfLindbladSample,
) -> NfStatus {
    guard(|| {
        let series = &as_ref(run, "run")?.series;
        let s = series.samples.get(index).ok_or_else(|| {
            Failure::new(NfStatus::OutOfRange, format!("sample {index} out of range 0..{}", series.samples.len()))
        })?;
        write(
            out,
            NfLindbladSample {
                t: s.t,
                energy: s.energy,
                x_mean: s.x_mean,
                x2_mean: s.x2_mean,
                trace_err: s.trace_err,
                min_eig: s.min_eig,
            },
            "out",
        )
    })
}
