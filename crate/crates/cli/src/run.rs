use std::fmt;
use std::fs;
use std::io::{self, ErrorKind, Write as _};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const LOCK_FILE: &str = ".advmt.lock";
pub const SEED_ENV: &str = "ADVMT_SEED";

const BUILD: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("ADVMT_GIT_REV"));

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// A check did not pass, or the work itself failed.
    Check(String),
    /// Bad flags, configs or input files.
    Usage(String),
    Diverged(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    /// Appends `note` to the message, keeping the class.
    pub fn note(self, note: &str) -> Self {
        match self {
            Failure::Check(m) => Failure::Check(format!("{m} ({note})")),
            Failure::Usage(m) => Failure::Usage(format!("{m} ({note})")),
            Failure::Diverged(m) => Failure::Diverged(format!("{m} ({note})")),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Check(m) | Failure::Usage(m) | Failure::Diverged(m) => f.write_str(m),
        }
    }
}

impl From<advmt::Error> for Failure {
    fn from(e: advmt::Error) -> Self {
        use advmt::data::DataError;
        match e {
            advmt::Error::Divergence { .. } => Failure::Diverged(e.to_string()),
            advmt::Error::Config(_)
            | advmt::Error::Horizon(_)
            | advmt::Error::Data(DataError::Config(_) | DataError::InsufficientFrames { .. }) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Check(e.to_string()),
        }
    }
}

impl From<advmt::data::DataError> for Failure {
    fn from(e: advmt::data::DataError) -> Self {
        advmt::Error::from(e).into()
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

/// Marks an error as caused by the caller's input (exit 2).
pub trait Input<T> {
    fn input(self, what: impl fmt::Display) -> Outcome<T>;
}

impl<T, E: fmt::Display> Input<T> for Result<T, E> {
    fn input(self, what: impl fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure::Usage(format!("{what}: {e}")))
    }
}

/// Reads a JSON config; an absent path means all defaults. A run manifest
/// written by the same command is accepted and yields its recorded config.
pub fn load_config(path: Option<&Path>, command: &str) -> Outcome<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let shown = path.display();
    let text = fs::read_to_string(path).input(&shown)?;
    let value: Value = serde_json::from_str(&text).input(&shown)?;
    if let (Some(cmd), Some(config)) = (value.get("command"), value.get("config")) {
        if cmd != command {
            return Err(Failure::Usage(format!("{shown}: manifest of a `{cmd}` run, not `{command}`")));
        }
        return Ok(config.clone());
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Flag,
    Config,
    Env,
    Default,
}

/// Seed priority: flag, then the config's `seed`, then `ADVMT_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: &Value) -> Outcome<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(v) = config.get("seed") {
        let s = v
            .as_u64()
            .ok_or_else(|| Failure::Usage(format!("config seed {v} is not an unsigned integer")))?;
        return Ok((s, SeedSource::Config));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            let s = v.trim().parse().input(format!("{SEED_ENV}={v:?}"))?;
            Ok((s, SeedSource::Env))
        }
        Err(_) => Ok((0, SeedSource::Default)),
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    /// Effective config after flag overrides.
    pub config: Value,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub build: String,
    pub argv: Vec<String>,
    pub out_dir: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: Status,
    pub error: Option<String>,
    pub inputs: Vec<FileDigest>,
    /// Relative to the run directory.
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config: Value, seed: (u64, SeedSource)) -> Self {
        RunManifest {
            command: command.to_owned(),
            config_path: config_path.map(|p| p.display().to_string()),
            config,
            seed: seed.0,
            seed_source: seed.1,
            build: BUILD.to_owned(),
            argv: std::env::args().collect(),
            out_dir: String::new(),
            started_at: now(),
            finished_at: None,
            status: Status::Running,
            error: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_inputs(mut self, paths: &[PathBuf]) -> Outcome<Self> {
        for p in paths {
            self.inputs.push(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p).input(p.display())?,
            });
        }
        Ok(self)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// An output directory held by this process until dropped.
pub struct RunDir {
    path: PathBuf,
    created: bool,
    manifest: RunManifest,
    locked: bool,
}

impl RunDir {
    /// Creates or claims `out`, which must be new or empty, and writes the
    /// manifest before any work is done.
    pub fn start(out: Option<PathBuf>, mut manifest: RunManifest) -> Outcome<Self> {
        let path = out.unwrap_or_else(|| {
            let stamp = Utc::now().format("%Y%m%dT%H%M%SZ");
            PathBuf::from("runs").join(format!("{stamp}-seed{}-{}", manifest.seed, manifest.command))
        });
        let created = !path.exists();
        fs::create_dir_all(&path).input(path.display())?;
        let lock = path.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(Failure::Usage(format!(
                    "{} is locked by another run (delete {} if none is active)",
                    path.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(Failure::Usage(format!("{}: {e}", lock.display()))),
        }
        manifest.out_dir = path.display().to_string();
        let run = RunDir {
            path,
            created,
            manifest,
            locked: true,
        };
        let occupied = fs::read_dir(&run.path)
            .input(run.path.display())?
            .filter_map(|e| e.ok())
            .any(|e| e.file_name() != LOCK_FILE);
        if occupied {
            return Err(Failure::Usage(format!(
                "output directory {} is not empty",
                run.path.display()
            )));
        }
        run.write_manifest().map_err(|e| Failure::Check(e.to_string()))?;
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_manifest(&self) -> io::Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(self.path.join(MANIFEST_FILE), json + "\n")
    }

    /// Records the outcome and the digests of `outputs` (relative paths)
    /// and releases the lock.
    pub fn finish(mut self, outcome: Outcome<Vec<PathBuf>>) -> Outcome {
        self.manifest.finished_at = Some(now());
        let result = match outcome {
            Ok(outputs) => {
                for rel in outputs {
                    let full = self.path.join(&rel);
                    let sha256 = sha256_file(&full).map_err(|e| Failure::Check(format!("{}: {e}", full.display())))?;
                    self.manifest.outputs.push(FileDigest {
                        path: rel.display().to_string(),
                        sha256,
                    });
                }
                self.manifest.status = Status::Ok;
                Ok(())
            }
            Err(f) => {
                self.manifest.status = Status::Failed;
                self.manifest.error = Some(f.to_string());
                Err(f)
            }
        };
        self.write_manifest()
            .map_err(|e| Failure::Check(format!("{}: {e}", self.path.display())))?;
        result
    }

    /// Deletes everything the run wrote, and the directory itself when the
    /// run created it.
    pub fn discard(mut self) {
        if let Ok(entries) = fs::read_dir(&self.path) {
            for e in entries.flatten() {
                let p = e.path();
                let _ = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
            }
        }
        self.locked = false;
        if self.created {
            let _ = fs::remove_dir(&self.path);
        }
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if self.locked {
            let _ = fs::remove_file(self.path.join(LOCK_FILE));
        }
    }
}
