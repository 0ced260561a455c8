//! Run configuration: a flat TOML key schema with documented defaults.
//!
//! ```toml
//! [lattice]
//! dim = 1            # 1, 2 or 3 (default 3)
//! sites = 8          # N_s >= 2 (default 8)
//! length = 8.0       # box length L (default 8.0)
//! mass = 1.0         # m >= 0 (default 1.0)
//!
//! [dynamics]
//! dt = 0.003         # default 0.01 / max E_p
//! t_max = 10.0
//! lambda = 0.1
//! scheme = "exact"   # or "euler"
//! snapshot_stride = 100
//!
//! [init]
//! v0 = "vacuum"      # vacuum | scaled | zero | deterministic | file
//! scale = [1.0, 0.0] # c = re + i·im for v0 = "scaled"
//! v0_file = "v0.csv" # mode_id,re,im per half-space mode
//! mu0 = "zero"       # zero | file
//! mu0_file = "mu0.csv"  # mode_id,plus_re,plus_im,minus_re,minus_im
//!
//! [ensemble]
//! trajectories = 1000
//! master_seed = 0
//!
//! [lindblad]
//! enabled = true
//! n_max = 60
//! energy = 1.0
//! dt = 0.002
//! t_max = 20.0
//! stride = 100
//!
//! [output]
//! dir = "out"
//! formats = ["csv", "json"]
//! noise_dump = "none"  # none | binary | csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Dynamics, KernelChoice, KernelInit, Scheme};
use crate::lattice::{build_mode_table, LatticeSpec, ModeTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeSection {
    pub dim: usize,
    pub sites: usize,
    pub length: f64,
    pub mass: f64,
}

impl Default for LatticeSection {
    fn default() -> Self {
        LatticeSection { dim: 3, sites: 8, length: 8.0, mass: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsSection {
    /// `None` until defaults are resolved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_max: f64,
    pub lambda: f64,
    pub scheme: Scheme,
    pub snapshot_stride: usize,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection { dt: None, t_max: 10.0, lambda: 0.1, scheme: Scheme::Exact, snapshot_stride: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum V0Kind {
    Vacuum,
    Scaled,
    Zero,
    Deterministic,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mu0Kind {
    Zero,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitSection {
    pub v0: V0Kind,
    pub scale: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0_file: Option<PathBuf>,
    pub mu0: Mu0Kind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0_file: Option<PathBuf>,
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection { v0: V0Kind::Vacuum, scale: [1.0, 0.0], v0_file: None, mu0: Mu0Kind::Zero, mu0_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    pub trajectories: u64,
    pub master_seed: u64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { trajectories: 1000, master_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LindbladSection {
    pub enabled: bool,
    pub n_max: usize,
    pub energy: f64,
    pub dt: f64,
    pub t_max: f64,
    pub stride: usize,
}

impl Default for LindbladSection {
    fn default() -> Self {
        LindbladSection { enabled: true, n_max: 60, energy: 1.0, dt: 2e-3, t_max: 20.0, stride: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDump {
    None,
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<String>,
    pub noise_dump: NoiseDump,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into()],
            noise_dump: NoiseDump::None,
        }
    }
}

impl OutputSection {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    pub dynamics: DynamicsSection,
    pub init: InitSection,
    pub ensemble: EnsembleSection,
    pub lindblad: LindbladSection,
    pub output: OutputSection,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("lattice", &["dim", "sites", "length", "mass"]),
    ("dynamics", &["dt", "t_max", "lambda", "scheme", "snapshot_stride"]),
    ("init", &["v0", "scale", "v0_file", "mu0", "mu0_file"]),
    ("ensemble", &["trajectories", "master_seed"]),
    ("lindblad", &["enabled", "n_max", "energy", "dt", "t_max", "stride"]),
    ("output", &["dir", "formats", "noise_dump"]),
];

const FORMATS: &[&str] = &["csv", "json"];

fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let mut out = Vec::new();
    for (section, value) in table {
        match KNOWN_KEYS.iter().find(|(name, _)| name == section) {
            None => out.push(format!("unknown section [{section}]")),
            Some((_, keys)) => match value.as_table() {
                None => out.push(format!("[{section}] must be a table")),
                Some(inner) => {
                    for key in inner.keys() {
                        if !keys.contains(&key.as_str()) {
                            out.push(format!("unknown key {section}.{key}"));
                        }
                    }
                }
            },
        }
    }
    out
}

impl RunConfig {
    /// Parses and validates; on failure lists every violation found.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let mut problems = unknown_keys(&table);
        let config: Option<RunConfig> = match RunConfig::deserialize(toml::Value::Table(table)) {
            Ok(c) => Some(c),
            Err(e) => {
                problems.push(e.message().trim().to_string());
                None
            }
        };
        match config {
            Some(mut config) => {
                problems.extend(config.violations());
                if problems.is_empty() {
                    config.resolve_defaults();
                    Ok(config)
                } else {
                    Err(Error::Config(problems))
                }
            }
            None => Err(Error::Config(problems)),
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("cannot read {}: {e}", path.display())))?;
        let mut config = RunConfig::parse(&text)?;
        // relative init files are resolved against the config's directory
        let base = path.parent().unwrap_or(Path::new("."));
        for file in [&mut config.init.v0_file, &mut config.init.mu0_file].into_iter().flatten() {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Re-checks after programmatic changes (e.g. command-line overrides).
    pub fn validate(&mut self) -> Result<()> {
        let problems = self.violations();
        if problems.is_empty() {
            self.resolve_defaults();
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let l = &self.lattice;
        if !(1..=3).contains(&l.dim) {
            out.push(format!("lattice.dim must be 1, 2 or 3 (got {})", l.dim));
        }
        if l.sites < 2 {
            out.push(format!("lattice.sites must be >= 2 (got {})", l.sites));
        }
        if !(l.length > 0.0 && l.length.is_finite()) {
            out.push(format!("lattice.length must be > 0 (got {})", l.length));
        }
        if !(l.mass >= 0.0 && l.mass.is_finite()) {
            out.push(format!("lattice.mass must be >= 0 (got {})", l.mass));
        }
        let d = &self.dynamics;
        if let Some(dt) = d.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                out.push(format!("dynamics.dt must be > 0 (got {dt})"));
            }
        }
        if !(d.t_max >= 0.0 && d.t_max.is_finite()) {
            out.push(format!("dynamics.t_max must be >= 0 (got {})", d.t_max));
        }
        if !(d.lambda >= 0.0 && d.lambda.is_finite()) {
            out.push(format!("lambda must be ≥ 0 (got {})", d.lambda));
        }
        if d.snapshot_stride == 0 {
            out.push("dynamics.snapshot_stride must be >= 1".into());
        }
        let i = &self.init;
        if d.scheme == Scheme::Euler && matches!(i.v0, V0Kind::Zero | V0Kind::Deterministic) {
            out.push(format!(
                "dynamics.scheme = \"euler\" is incompatible with init.v0 = \"{}\"; edge-case kernels need the exact scheme",
                if i.v0 == V0Kind::Zero { "zero" } else { "deterministic" }
            ));
        }
        if i.v0 == V0Kind::Scaled && !(i.scale[0] > 0.0 && i.scale[0].is_finite() && i.scale[1].is_finite()) {
            out.push(format!(
                "init.scale needs a finite value with positive real part (got [{}, {}])",
                i.scale[0], i.scale[1]
            ));
        }
        if matches!(i.v0, V0Kind::Vacuum | V0Kind::Scaled) && l.mass == 0.0 {
            out.push("lattice.mass = 0 gives the zero mode E = 0, so a vacuum or scaled V0 is not normalizable".into());
        }
        if i.v0 == V0Kind::File && i.v0_file.is_none() {
            out.push("init.v0 = \"file\" needs init.v0_file".into());
        }
        if i.mu0 == Mu0Kind::File && i.mu0_file.is_none() {
            out.push("init.mu0 = \"file\" needs init.mu0_file".into());
        }
        if self.ensemble.trajectories < 2 {
            out.push(format!("ensemble.trajectories must be >= 2 (got {})", self.ensemble.trajectories));
        }
        let lb = &self.lindblad;
        if lb.n_max < 2 {
            out.push(format!("lindblad.n_max must be >= 2 (got {})", lb.n_max));
        }
        if !(lb.energy > 0.0 && lb.energy.is_finite()) {
            out.push(format!("lindblad.energy must be > 0 (got {})", lb.energy));
        }
        if !(lb.dt > 0.0 && lb.dt.is_finite()) {
            out.push(format!("lindblad.dt must be > 0 (got {})", lb.dt));
        }
        if !(lb.t_max >= 0.0 && lb.t_max.is_finite()) {
            out.push(format!("lindblad.t_max must be >= 0 (got {})", lb.t_max));
        }
        if lb.stride == 0 {
            out.push("lindblad.stride must be >= 1".into());
        }
        for f in &self.output.formats {
            if !FORMATS.contains(&f.as_str()) {
                out.push(format!("output.formats: unknown format \"{f}\" (expected csv or json)"));
            }
        }
        out
    }

    fn resolve_defaults(&mut self) {
        if self.dynamics.dt.is_none() {
            if let Ok(table) = self.mode_table() {
                self.dynamics.dt = Some(default_dt(&table));
            }
        }
    }

    pub fn lattice_spec(&self) -> Result<LatticeSpec> {
        LatticeSpec::new(self.lattice.dim, self.lattice.sites, self.lattice.length, self.lattice.mass)
    }

    pub fn mode_table(&self) -> Result<ModeTable> {
        build_mode_table(self.lattice_spec()?)
    }

    pub fn dynamics(&self, table: &ModeTable) -> Dynamics {
        let d = &self.dynamics;
        Dynamics {
            dt: d.dt.unwrap_or_else(|| default_dt(table)),
            t_max: d.t_max,
            lambda: d.lambda,
            scheme: d.scheme,
            snapshot_stride: d.snapshot_stride,
        }
    }

    /// Builds the initial kernels, reading init files when requested.
    pub fn kernel_init(&self, table: &ModeTable) -> Result<KernelInit> {
        let v0 = match self.init.v0 {
            V0Kind::Vacuum => KernelChoice::Vacuum,
            V0Kind::Scaled => KernelChoice::Scaled(Complex64::new(self.init.scale[0], self.init.scale[1])),
            V0Kind::Zero => KernelChoice::Zero,
            V0Kind::Deterministic => KernelChoice::Deterministic,
            V0Kind::File => {
                let path = self.init.v0_file.as_deref().expect("validated");
                KernelChoice::Custom(crate::io::read_v0_file(path, table)?)
            }
        };
        let mu0 = match self.init.mu0 {
            Mu0Kind::Zero => None,
            Mu0Kind::File => Some(crate::io::read_mu0_file(self.init.mu0_file.as_deref().expect("validated"), table)?),
        };
        let init = KernelInit { v0, mu0 };
        init.initial_kernels(table)?;
        init.initial_mu(table)?;
        Ok(init)
    }
}

/// `0.01 / max_p E_p`, resolving the fastest mode.
pub fn default_dt(table: &ModeTable) -> f64 {
    0.01 / table.max_energy()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[lattice]\ndim = 1\nsites = 8\nlength = 8.0\nmass = 1.0\n[dynamics]\nlambda = 0.1\n";

    fn problems(text: &str) -> Vec<String> {
        match RunConfig::parse(text) {
            Err(Error::Config(p)) => p,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let table = c.mode_table().unwrap();
        assert_eq!(c.dynamics.dt, Some(0.01 / table.max_energy()));
        assert_eq!(c.dynamics.scheme, Scheme::Exact);
        assert_eq!(c.init.v0, V0Kind::Vacuum);
        assert_eq!(c.lindblad.n_max, 60);
    }

    #[test]
    fn negative_lambda_rejected() {
        let p = problems("[dynamics]\nlambda = -1.0\n");
        assert!(p.iter().any(|m| m.contains("lambda must be ≥ 0")), "{p:?}");
    }

    #[test]
    fn euler_with_zero_kernel_rejected() {
        let p = problems("[dynamics]\nscheme = \"euler\"\n[init]\nv0 = \"zero\"\n");
        assert!(p.iter().any(|m| m.contains("incompatible")), "{p:?}");
    }

    #[test]
    fn every_problem_is_reported() {
        let p = problems("[lattice]\ndim = 4\nsites = 1\nmass = 0.0\n[dynamics]\nlambda = -1.0\nsnapshot_stride = 0\n[ensemble]\ntrajectories = 0\n");
        assert_eq!(p.len(), 6, "{p:?}");
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let p = problems("[lattice]\ndims = 1\n[dynamics]\nlamda = 0.1\n[extra]\nx = 1\n");
        assert!(p.iter().any(|m| m.contains("lattice.dims")));
        assert!(p.iter().any(|m| m.contains("dynamics.lamda")));
        assert!(p.iter().any(|m| m.contains("[extra]")));
    }

    #[test]
    fn type_errors_reported() {
        let p = problems("[lattice]\nsites = \"eight\"\n");
        assert!(!p.is_empty());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn scaled_init_built() {
        let c = RunConfig::parse(&format!("{MINIMAL}[init]\nv0 = \"scaled\"\nscale = [2.0, 0.5]\n")).unwrap();
        let table = c.mode_table().unwrap();
        assert_eq!(c.kernel_init(&table).unwrap().v0, KernelChoice::Scaled(Complex64::new(2.0, 0.5)));
    }
}
