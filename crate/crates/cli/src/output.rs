use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crowdpulse_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// A failed run: exit code and a one-line message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: EXIT_DATA, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Failure { code: EXIT_NUMERICAL, message: message.into() }
    }

    pub fn line(&self) -> String {
        let flat: Vec<&str> = self.message.split_whitespace().collect();
        format!("ERROR {}: {}", self.code, flat.join(" "))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SingularHessian { .. }
            | Error::NotNegativeDefinite
            | Error::NonFinite(_)
            | Error::NonIncreasing { .. }
            | Error::Domain(_)
            | Error::Partition(_) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

/// Content hash of one input file.
#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

pub fn hash_input(role: &str, path: &Path) -> CliResult<InputRecord> {
    let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
    Ok(InputRecord {
        role: role.to_string(),
        path: path.to_path_buf(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub config: &'a C,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}

/// Output directory that remembers what it wrote, for the manifest.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| io_failure(root, e))?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    /// Opens `rel` for writing, creating parent directories.
    pub fn file(&mut self, rel: &str) -> CliResult<BufWriter<fs::File>> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
        }
        let f = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
        self.written.push(rel.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn json(&mut self, rel: &str, value: &impl Serialize) -> CliResult<()> {
        let path = self.root.join(rel);
        let mut w = self.file(rel)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(&path, e))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_failure(&path, e))
    }

    /// Writes a CSV from a header and pre-rendered rows.
    pub fn csv<I, R>(&mut self, rel: &str, header: &[&str], rows: I) -> CliResult<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.root.join(rel);
        let err = |e: csv::Error| io_failure(&path, e);
        let mut w = csv::Writer::from_writer(self.file(rel)?);
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(|e| io_failure(&path, e))
    }

    /// Writes the manifest last so that it lists every other output.
    pub fn manifest<C: Serialize>(
        mut self,
        command: &'static str,
        seed: u64,
        config: &C,
        inputs: Vec<InputRecord>,
    ) -> CliResult<()> {
        let manifest = Manifest {
            tool: "crowdpulse",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            threads: rayon::current_num_threads(),
            config,
            inputs,
            outputs: self.written.clone(),
        };
        self.json("run_manifest.json", &manifest)
    }
}

/// Shortest representation that reads back to the same `f64`; empty for
/// missing values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
