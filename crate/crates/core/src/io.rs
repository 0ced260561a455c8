//! File formats: CSV outputs, noise replay dumps, init files and the run
//! manifest.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! value parses back to the identical bits.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::classical::ClassicalState;
use crate::ensemble::EnsembleStats;
use crate::error::{Error, Result};
use crate::kernel::KernelState;
use crate::lattice::{ModeClass, ModeTable};
use crate::lindblad::LindbladSample;
use crate::noise::NoiseSlice;
use crate::observables::ObservableRecord;

const NOISE_MAGIC: &[u8; 8] = b"NFNOISE1";

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn parse_num(field: &str, line: usize) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Format(format!("line {line}: bad number {field:?}")))
}

fn parse_int<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Format(format!("line {line}: bad integer {field:?}")))
}

/// Accumulates CSV text with a fixed header.
pub struct Csv {
    width: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Csv { width: header.len(), text }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut n = 0;
        for (k, f) in fields.into_iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            self.text.push_str(f.as_ref());
            n += 1;
        }
        debug_assert_eq!(n, self.width);
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub fn modes_csv(table: &ModeTable) -> String {
    let dim = table.spec().dim;
    let axes = ["x", "y", "z"];
    let mut header: Vec<String> = vec!["mode_id".into()];
    header.extend(axes[..dim].iter().map(|a| format!("n_{a}")));
    header.extend(axes[..dim].iter().map(|a| format!("p_{a}")));
    header.extend(["E_p".into(), "class".into(), "partner_id".into()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header);
    for m in table.modes() {
        let mut row = vec![m.id.to_string()];
        row.extend(m.index[..dim].iter().map(|n| n.to_string()));
        row.extend(m.momentum[..dim].iter().map(|&p| num(p)));
        row.extend([num(m.energy), m.class.as_str().to_string(), m.partner.to_string()]);
        csv.row(row);
    }
    csv.into_string()
}

pub fn snapshots_csv(table: &ModeTable, states: &[KernelState]) -> String {
    let mut csv = Csv::new(&["t", "mode_id", "V_re", "V_im", "mu_plus_re", "mu_plus_im", "mu_minus_re", "mu_minus_im"]);
    for s in states {
        for (slot, &id) in table.half_space().iter().enumerate() {
            let (v, p, m) = (s.v[slot], s.mu_plus[slot], s.mu_minus[slot]);
            csv.row([num(s.t), id.to_string(), num(v.re), num(v.im), num(p.re), num(p.im), num(m.re), num(m.im)]);
        }
    }
    csv.into_string()
}

pub fn observables_csv(records: &[ObservableRecord]) -> String {
    let mut csv = Csv::new(&["t", "E0", "E1", "E_total", "E_density"]);
    for r in records {
        csv.row([num(r.t), num(r.e0), num(r.e1), num(r.e_total), num(r.e_density)]);
    }
    csv.into_string()
}

pub fn fields_csv(table: &ModeTable, records: &[ObservableRecord]) -> String {
    let mut csv = Csv::new(&["t", "mode_id", "phi_q_re", "phi_q_im", "variance"]);
    for r in records {
        for m in table.modes() {
            let phi = r.field_expectation[m.id];
            csv.row([num(r.t), m.id.to_string(), num(phi.re), num(phi.im), num(r.variance[m.id])]);
        }
    }
    csv.into_string()
}

pub fn classical_csv(table: &ModeTable, states: &[ClassicalState]) -> String {
    let mut csv = Csv::new(&["t", "mode_id", "phi_re", "phi_im", "pi_re", "pi_im"]);
    for s in states {
        for (slot, &id) in table.half_space().iter().enumerate() {
            let (phi, pi) = (s.phi[slot], s.pi[slot]);
            csv.row([num(s.t), id.to_string(), num(phi.re), num(phi.im), num(pi.re), num(pi.im)]);
        }
    }
    csv.into_string()
}

pub fn ensemble_csv(stats: &EnsembleStats) -> String {
    let mut csv = Csv::new(&["t", "observable", "mean", "stderr", "M"]);
    for (k, &t) in stats.times.iter().enumerate() {
        for (name, m) in stats.names.iter().zip(&stats.moments[k]) {
            csv.row([num(t), name.clone(), num(m.mean), num(m.stderr()), m.count.to_string()]);
        }
    }
    csv.into_string()
}

pub fn lindblad_csv(samples: &[LindbladSample]) -> String {
    let mut csv = Csv::new(&["t", "energy", "x_mean", "x2_mean", "trace_err", "min_eig"]);
    for s in samples {
        csv.row([num(s.t), num(s.energy), num(s.x_mean), num(s.x2_mean), num(s.trace_err), num(s.min_eig)]);
    }
    csv.into_string()
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Noise increments of one trajectory, addressed by half-space mode id.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub dt: f64,
    pub mode_ids: Vec<usize>,
    pub slices: Vec<NoiseSlice>,
}

impl NoiseRecord {
    pub fn new(table: &ModeTable, dt: f64, slices: Vec<NoiseSlice>) -> Self {
        NoiseRecord { dt, mode_ids: table.half_space().to_vec(), slices }
    }

    /// Checks that the record matches a lattice and time step.
    pub fn check(&self, table: &ModeTable, dt: f64) -> Result<()> {
        if self.mode_ids != table.half_space() {
            return Err(Error::Mismatch("noise record was made for a different lattice".into()));
        }
        if (self.dt - dt).abs() > 1e-12 * dt {
            return Err(Error::Mismatch(format!("noise record has dt {} but the run uses {dt}", self.dt)));
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.mode_ids.len() + 16 * self.mode_ids.len() * self.slices.len());
        out.extend_from_slice(NOISE_MAGIC);
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&(self.mode_ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.slices.len() as u64).to_le_bytes());
        for &id in &self.mode_ids {
            out.extend_from_slice(&(id as u64).to_le_bytes());
        }
        for s in &self.slices {
            for z in &s.increments {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(Error::Format("noise file is truncated".into()));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(8)? != NOISE_MAGIC {
            return Err(Error::Format("not a noise replay file (bad magic)".into()));
        }
        let word = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let dt = f64::from_bits(word(take(8)?));
        let modes = word(take(8)?) as usize;
        let count = word(take(8)?) as usize;
        let mut mode_ids = Vec::with_capacity(modes);
        for _ in 0..modes {
            mode_ids.push(word(take(8)?) as usize);
        }
        let mut slices = Vec::with_capacity(count);
        for _ in 0..count {
            let mut increments = Vec::with_capacity(modes);
            for _ in 0..modes {
                let re = f64::from_bits(word(take(8)?));
                let im = f64::from_bits(word(take(8)?));
                increments.push(Complex64::new(re, im));
            }
            slices.push(NoiseSlice { dt, increments });
        }
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in noise file", cursor.len())));
        }
        Ok(NoiseRecord { dt, mode_ids, slices })
    }

    /// CSV form: a `# dt = …` line, then `slice_index,mode_id,re,im` rows.
    pub fn to_csv(&self) -> String {
        let mut text = format!("# dt = {}\n", num(self.dt));
        let mut csv = Csv::new(&["slice_index", "mode_id", "re", "im"]);
        for (k, s) in self.slices.iter().enumerate() {
            for (z, id) in s.increments.iter().zip(&self.mode_ids) {
                csv.row([k.to_string(), id.to_string(), num(z.re), num(z.im)]);
            }
        }
        text.push_str(&csv.into_string());
        text
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| Error::Format("empty noise file".into()))?;
        let dt = first
            .strip_prefix("# dt =")
            .ok_or_else(|| Error::Format("noise CSV must start with '# dt = <value>'".into()))
            .and_then(|v| parse_num(v, 1))?;
        match lines.next() {
            Some((_, h)) if h.trim() == "slice_index,mode_id,re,im" => {}
            _ => return Err(Error::Format("noise CSV header must be slice_index,mode_id,re,im".into())),
        }
        let mut mode_ids: Vec<usize> = Vec::new();
        let mut slices: Vec<NoiseSlice> = Vec::new();
        for (k, line) in lines {
            let n = k + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Format(format!("line {n}: expected 4 fields")));
            }
            let slice: usize = parse_int(f[0], n)?;
            let id: usize = parse_int(f[1], n)?;
            let z = Complex64::new(parse_num(f[2], n)?, parse_num(f[3], n)?);
            if slice == slices.len() {
                slices.push(NoiseSlice { dt, increments: Vec::new() });
            } else if slice + 1 != slices.len() {
                return Err(Error::Format(format!("line {n}: slice index {slice} out of order")));
            }
            let current = slices.last_mut().expect("pushed");
            let pos = current.increments.len();
            if slice == 0 {
                mode_ids.push(id);
            } else if mode_ids.get(pos) != Some(&id) {
                return Err(Error::Format(format!("line {n}: mode {id} out of order in slice {slice}")));
            }
            current.increments.push(z);
        }
        if let Some(bad) = slices.iter().position(|s| s.increments.len() != mode_ids.len()) {
            return Err(Error::Format(format!("slice {bad} has a different mode count")));
        }
        Ok(NoiseRecord { dt, mode_ids, slices })
    }
}

pub fn read_noise(path: &Path) -> Result<NoiseRecord> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(NOISE_MAGIC) {
        NoiseRecord::from_binary(&bytes)
    } else {
        let text =
            String::from_utf8(bytes).map_err(|_| Error::Format("noise file is neither binary nor text".into()))?;
        NoiseRecord::from_csv(&text)
    }
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if k == 0 {
            if line.trim() != header {
                return Err(Error::Format(format!("{}: header must be {header}", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push((k + 1, line.split(',').map(|s| s.trim().to_string()).collect()));
    }
    Ok(rows)
}

fn slot_of(table: &ModeTable, id: usize, line: usize) -> Result<usize> {
    if id >= table.len() {
        return Err(Error::Format(format!("line {line}: mode {id} does not exist")));
    }
    table.half_slot(id).ok_or_else(|| Error::Format(format!("line {line}: mode {id} is not in the half space")))
}

/// `mode_id,re,im` per half-space mode.
pub fn read_v0_file(path: &Path, table: &ModeTable) -> Result<Vec<Complex64>> {
    let mut values = vec![None; table.half_space().len()];
    for (line, f) in read_rows(path, "mode_id,re,im")? {
        if f.len() != 3 {
            return Err(Error::Format(format!("line {line}: expected 3 fields")));
        }
        let slot = slot_of(table, parse_int(&f[0], line)?, line)?;
        values[slot] = Some(Complex64::new(parse_num(&f[1], line)?, parse_num(&f[2], line)?));
    }
    values
        .into_iter()
        .enumerate()
        .map(|(slot, v)| v.ok_or_else(|| Error::Format(format!("V0 missing for mode {}", table.half_space()[slot]))))
        .collect()
}

/// `mode_id,plus_re,plus_im,minus_re,minus_im` per half-space mode.
pub fn read_mu0_file(path: &Path, table: &ModeTable) -> Result<Vec<(Complex64, Complex64)>> {
    let mut values = vec![None; table.half_space().len()];
    for (line, f) in read_rows(path, "mode_id,plus_re,plus_im,minus_re,minus_im")? {
        if f.len() != 5 {
            return Err(Error::Format(format!("line {line}: expected 5 fields")));
        }
        let slot = slot_of(table, parse_int(&f[0], line)?, line)?;
        let plus = Complex64::new(parse_num(&f[1], line)?, parse_num(&f[2], line)?);
        let minus = Complex64::new(parse_num(&f[3], line)?, parse_num(&f[4], line)?);
        if table.mode(table.half_space()[slot]).class == ModeClass::SelfConjugate && plus != minus {
            return Err(Error::Format(format!("line {line}: self-conjugate mode needs equal mu0(p) and mu0(-p)")));
        }
        values[slot] = Some((plus, minus));
    }
    values
        .into_iter()
        .enumerate()
        .map(|(slot, v)| v.ok_or_else(|| Error::Format(format!("mu0 missing for mode {}", table.half_space()[slot]))))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        write!(s, "{b:02x}").expect("write to string");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub config: String,
    pub files: Vec<FileEntry>,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub status: String,
}

/// Output directory that records every file written into it.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        write_atomic(&path, bytes)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.json` last, after all outputs are in place.
    pub fn finish(
        self,
        command: &str,
        master_seed: u64,
        config: String,
        started: SystemTime,
        status: &str,
    ) -> Result<RunManifest> {
        let started_unix = started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            config,
            files: self.files,
            started_unix,
            wall_clock_seconds: started.elapsed().map(|d| d.as_secs_f64()).unwrap_or(0.0),
            status: status.to_string(),
        };
        write_atomic(&self.root.join("manifest.json"), to_json(&manifest).as_bytes())?;
        Ok(manifest)
    }
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name =
        path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(bytes)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_mode_table, LatticeSpec};
    use crate::noise::{sample_slice, StreamSpec};

    fn record() -> (ModeTable, NoiseRecord) {
        let table = build_mode_table(LatticeSpec::new(2, 4, 3.0, 1.0).unwrap()).unwrap();
        let slices = (0..5).map(|k| sample_slice(&table, 0.01, StreamSpec::new(3, 1), k)).collect();
        let rec = NoiseRecord::new(&table, 0.01, slices);
        (table, rec)
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let (_, rec) = record();
        assert_eq!(NoiseRecord::from_binary(&rec.to_binary()).unwrap(), rec);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (_, rec) = record();
        let back = NoiseRecord::from_csv(&rec.to_csv()).unwrap();
        assert_eq!(back.to_binary(), rec.to_binary());
    }

    #[test]
    fn corrupted_files_rejected() {
        let (_, rec) = record();
        let bin = rec.to_binary();
        assert!(NoiseRecord::from_binary(&bin[..bin.len() - 3]).is_err());
        assert!(NoiseRecord::from_binary(b"garbage!").is_err());
        assert!(NoiseRecord::from_csv("slice_index,mode_id,re,im\n").is_err());
    }

    #[test]
    fn record_checked_against_lattice() {
        let (table, rec) = record();
        assert!(rec.check(&table, 0.01).is_ok());
        assert!(rec.check(&table, 0.02).is_err());
        let other = build_mode_table(LatticeSpec::new(1, 4, 3.0, 1.0).unwrap()).unwrap();
        assert!(rec.check(&other, 0.01).is_err());
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn shortest_round_trip_numbers() {
        for x in [0.1, -0.0, 1e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn modes_table_lists_everything() {
        let (table, _) = record();
        let text = modes_csv(&table);
        assert!(text.starts_with("mode_id,n_x,n_y,p_x,p_y,E_p,class,partner_id\n"));
        assert_eq!(text.lines().count(), 17);
    }

    #[test]
    fn manifest_lists_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", b"x\n1\n").unwrap();
        let m = out.finish("simulate", 7, String::new(), SystemTime::now(), "complete").unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.files[0].sha256, sha256_hex(b"x\n1\n"));
        assert!(dir.path().join("manifest.json").exists());
        assert!(!dir.path().join(".a.csv.tmp").exists());
    }
}
