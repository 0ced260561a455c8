use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};

use noisefield::classical::{ehrenfest_compare, run_classical};
use noisefield::config::{NoiseDump, RunConfig};
use noisefield::ensemble::{energy_slope, expected_energy_slope, fit_linear, run_ensemble, EnsembleOptions};
use noisefield::io::{self, NoiseRecord, OutputDir};
use noisefield::kernel::run_trajectory;
use noisefield::lindblad::{integrate_adaptive, DensityMatrix};
use noisefield::noise::{NoiseSource, RecordedNoise, StreamNoise, StreamSpec};
use noisefield::observables::{energy_free, observe};
use noisefield::verify::{format_line, run_battery};
use noisefield::Error;

const THREADS_ENV: &str = "NOISEFIELD_THREADS";

#[derive(Parser)]
#[command(name = "noisefield", version, about = "White-noise driven scalar field on a momentum lattice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides ensemble.master_seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory count (overrides ensemble.trajectories)
    #[arg(long)]
    trajectories: Option<u64>,
    /// Suppress progress messages
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write every per-trajectory output
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Replay increments from a noise dump instead of the seeded stream
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Run an ensemble and fit the energy growth
    Ensemble {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the single-mode master equation
    Lindblad {
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance battery
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Convert a noise dump between the binary and CSV formats
    Export {
        #[command(flatten)]
        common: Common,
        /// Noise dump to read (format detected from content)
        #[arg(long)]
        input: PathBuf,
        /// Target format; defaults to the other one
        #[arg(long, value_parser = ["csv", "binary"])]
        to: Option<String>,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
    Verify(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config(_)
            | Error::InvalidLattice(_)
            | Error::InvalidArgument(_)
            | Error::Mismatch(_)
            | Error::Format(_)
            | Error::AsymmetricAmplitudes { .. } => Failure::Config(e.to_string()),
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

struct Ctx {
    config: RunConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn context(common: &Common, require_config: bool) -> Result<Ctx, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None if require_config => return Err(Failure::Config("--config <path> is required".into())),
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.ensemble.master_seed = seed;
    }
    if let Some(m) = common.trajectories {
        config.ensemble.trajectories = m;
    }
    if let Some(dir) = &common.out {
        config.output.dir = dir.clone();
    }
    config.validate()?;
    Ok(Ctx { out: config.output.dir.clone(), quiet: common.quiet, config })
}

fn threads() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Failure::Config(format!("{THREADS_ENV} must be a positive integer (got {v:?})"))),
        Err(_) => Ok(None),
    }
}

fn simulate(ctx: &Ctx, replay: Option<&Path>) -> Result<(), Failure> {
    let started = SystemTime::now();
    let cfg = &ctx.config;
    let table = cfg.mode_table()?;
    let dynamics = cfg.dynamics(&table);
    let init = cfg.kernel_init(&table)?;
    let seed = cfg.ensemble.master_seed;
    let stream = StreamNoise { table: &table, dt: dynamics.dt, stream: StreamSpec::new(seed, 0) };
    let recorded = match replay {
        Some(path) => {
            let rec = io::read_noise(path)?;
            rec.check(&table, dynamics.dt)?;
            if rec.slices.len() < dynamics.steps() {
                return Err(Failure::Config(format!(
                    "noise dump has {} slices but the run needs {}",
                    rec.slices.len(),
                    dynamics.steps()
                )));
            }
            Some(rec)
        }
        None => None,
    };
    let replayed = recorded.as_ref().map(|r| RecordedNoise { dt: r.dt, slices: &r.slices });
    let noise: &dyn NoiseSource = match &replayed {
        Some(r) => r,
        None => &stream,
    };
    ctx.note(format!("simulate: {} modes, dt = {}, {} steps, seed {seed}", table.len(), dynamics.dt, dynamics.steps()));
    let states = run_trajectory(&table, &init, &dynamics, noise)?;
    let mut out = OutputDir::create(&ctx.out)?;
    out.write("modes.csv", io::modes_csv(&table).as_bytes())?;
    out.write("snapshots.csv", io::snapshots_csv(&table, &states).as_bytes())?;
    if init.v0.is_edge_case() {
        ctx.note("edge-case initial kernel: the Gaussian is not normalizable, so observables are not written");
    } else {
        let e0 = energy_free(&table, &init)?;
        let records = states.iter().map(|s| observe(&table, s, e0)).collect::<Result<Vec<_>, _>>()?;
        out.write("observables.csv", io::observables_csv(&records).as_bytes())?;
        out.write("fields.csv", io::fields_csv(&table, &records).as_bytes())?;
    }
    if init.has_zero_mu() {
        let classical = run_classical(&table, &dynamics, noise)?;
        out.write("classical.csv", io::classical_csv(&table, &classical).as_bytes())?;
        if cfg.output.wants("json") && !init.v0.is_edge_case() {
            let report = ehrenfest_compare(&table, &init, &dynamics, dynamics.scheme, noise)?;
            out.write("compare.json", io::to_json(&report).as_bytes())?;
        }
    }
    if cfg.output.noise_dump != NoiseDump::None {
        let slices = (0..dynamics.steps()).map(|k| noise.slice(k)).collect();
        let rec = NoiseRecord::new(&table, dynamics.dt, slices);
        match cfg.output.noise_dump {
            NoiseDump::Binary => out.write("noise.bin", &rec.to_binary())?,
            _ => out.write("noise.csv", rec.to_csv().as_bytes())?,
        };
    }
    out.finish("simulate", seed, cfg.to_toml(), started, "complete")?;
    ctx.note(format!("wrote {}", ctx.out.display()));
    Ok(())
}

fn ensemble(ctx: &Ctx) -> Result<(), Failure> {
    let started = SystemTime::now();
    let cfg = &ctx.config;
    let table = cfg.mode_table()?;
    let dynamics = cfg.dynamics(&table);
    let init = cfg.kernel_init(&table)?;
    let (m, seed) = (cfg.ensemble.trajectories, cfg.ensemble.master_seed);
    ctx.note(format!("ensemble: {m} trajectories, {} modes, {} steps each", table.len(), dynamics.steps()));
    let opts = EnsembleOptions { per_mode: true, threads: threads()? };
    let stats = run_ensemble(&table, &init, &dynamics, m, seed, opts)?;
    let report = energy_slope(&stats, expected_energy_slope(&table, dynamics.lambda))?;
    let mut out = OutputDir::create(&ctx.out)?;
    out.write("modes.csv", io::modes_csv(&table).as_bytes())?;
    out.write("ensemble.csv", io::ensemble_csv(&stats).as_bytes())?;
    if cfg.output.wants("json") {
        out.write("fit.json", io::to_json(&report).as_bytes())?;
    }
    out.finish("ensemble", seed, cfg.to_toml(), started, "complete")?;
    ctx.note(format!(
        "energy slope {:.6} +/- {:.6} (expected {:.6}, z = {:.2})",
        report.slope, report.stderr, report.expected_slope, report.z_score
    ));
    Ok(())
}

#[derive(serde::Serialize)]
struct LindbladFit {
    slope: f64,
    stderr: f64,
    expected_slope: f64,
    relative_error: f64,
    n_max: usize,
}

fn lindblad(ctx: &Ctx) -> Result<(), Failure> {
    let started = SystemTime::now();
    let cfg = &ctx.config;
    let lb = &cfg.lindblad;
    if !lb.enabled {
        ctx.note("lindblad: disabled in the configuration (lindblad.enabled = false)");
        return Ok(());
    }
    let lambda = cfg.dynamics.lambda;
    let series =
        integrate_adaptive(&DensityMatrix::vacuum(lb.n_max, lb.energy), lb.energy, lambda, lb.dt, lb.t_max, lb.stride)?;
    if let Some(w) = series.stiffness_warning() {
        ctx.note(format!("warning: {w}"));
    }
    let mut out = OutputDir::create(&ctx.out)?;
    out.write("lindblad.csv", io::lindblad_csv(&series.samples).as_bytes())?;
    if cfg.output.wants("json") && series.samples.len() >= 3 {
        let t: Vec<f64> = series.samples.iter().map(|s| s.t).collect();
        let y: Vec<f64> = series.samples.iter().map(|s| s.energy).collect();
        let fit = fit_linear(&t, &y, None)?;
        let expected = 0.5 * lambda * lambda;
        let rel = if expected > 0.0 { fit.slope / expected - 1.0 } else { fit.slope };
        let report = LindbladFit {
            slope: fit.slope,
            stderr: fit.slope_stderr,
            expected_slope: expected,
            relative_error: rel,
            n_max: series.n_max,
        };
        out.write("fit.json", io::to_json(&report).as_bytes())?;
        ctx.note(format!("d<H>/dt = {:.9} (expected {expected}), n_max = {}", fit.slope, series.n_max));
    }
    out.finish("lindblad", cfg.ensemble.master_seed, cfg.to_toml(), started, "complete")?;
    Ok(())
}

fn verify(ctx: &Ctx) -> Result<(), Failure> {
    let started = SystemTime::now();
    let seed = ctx.config.ensemble.master_seed;
    if let Some(n) = threads()? {
        // the battery uses the global pool; a second build attempt is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    ctx.note(format!("verify: running the acceptance battery (seed {seed})"));
    let outcomes = run_battery(seed, |o| println!("{}", format_line(o)));
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    let mut out = OutputDir::create(&ctx.out)?;
    out.write("verify.json", io::to_json(&outcomes).as_bytes())?;
    let status = if passed == outcomes.len() { "complete" } else { "verification failed" };
    out.finish("verify", seed, ctx.config.to_toml(), started, status)?;
    if passed == outcomes.len() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("{} criteria failed", outcomes.len() - passed)))
    }
}

fn export(ctx: &Ctx, input: &Path, to: Option<&str>) -> Result<(), Failure> {
    let bytes = std::fs::read(input)?;
    let is_binary = bytes.starts_with(b"NFNOISE1");
    let record = io::read_noise(input)?;
    let to_csv = match to {
        Some(t) => t == "csv",
        None => is_binary,
    };
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "noise".into());
    let (name, data) = if to_csv {
        (format!("{stem}.csv"), record.to_csv().into_bytes())
    } else {
        (format!("{stem}.bin"), record.to_binary())
    };
    std::fs::create_dir_all(&ctx.out)?;
    let target = ctx.out.join(&name);
    if target.exists() && target.canonicalize()? == input.canonicalize()? {
        return Err(Failure::Config(format!("export would overwrite its input {}", input.display())));
    }
    io::write_atomic(&target, &data)?;
    ctx.note(format!("wrote {} ({} slices, {} modes)", target.display(), record.slices.len(), record.mode_ids.len()));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common, noise } => simulate(&context(&common, true)?, noise.as_deref()),
        Command::Ensemble { common } => ensemble(&context(&common, true)?),
        Command::Lindblad { common } => lindblad(&context(&common, true)?),
        Command::Verify { common } => verify(&context(&common, false)?),
        Command::Export { common, input, to } => export(&context(&common, false)?, &input, to.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Verify(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(4)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
