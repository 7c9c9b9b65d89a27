//! CSV files and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Floats are written with 17 significant digits so they round-trip.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Csv {
    header: Vec<String>,
    body: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            body: String::new(),
        }
    }

    /// Append a row of pre-formatted cells.
    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    pub fn floats(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| num(v)).collect();
        self.row(&cells);
    }

    fn render(&self) -> String {
        let mut s = String::with_capacity(self.body.len() + 64);
        let _ = writeln!(s, "{}", self.header.join(","));
        s.push_str(&self.body);
        s
    }
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Timing {
    phase: String,
    seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    case: &'a str,
    output_dir: String,
    seed: Option<u64>,
    config: &'a C,
    summary: &'a serde_json::Map<String, serde_json::Value>,
    files: &'a [FileEntry],
    timings: &'a [Timing],
}

/// Output directory that records every file it writes.
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<FileEntry>,
    timings: Vec<Timing>,
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl RunOutput {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
            summary: serde_json::Map::new(),
        })
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> Result<()> {
        self.write_bytes(name, csv.render().as_bytes())
    }

    fn write_bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, data).with_context(|| format!("writing {}", path.display()))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: data.len() as u64,
            sha256: hex::encode(Sha256::digest(data)),
        });
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    /// Run `f` and record its wall-clock time under `phase`.
    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            phase: phase.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn finish<C: Serialize>(
        self,
        command: &str,
        case: &str,
        seed: Option<u64>,
        config: &C,
    ) -> Result<()> {
        let manifest = Manifest {
            command,
            case,
            output_dir: self.dir.display().to_string(),
            seed,
            config,
            summary: &self.summary,
            files: &self.files,
            timings: &self.timings,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut c = Csv::new(&["t", "mass"]);
        c.floats(&[0.0, 1.0]);
        assert_eq!(
            c.render(),
            "t,mass\n0.0000000000000000e0,1.0000000000000000e0\n"
        );
    }
}
