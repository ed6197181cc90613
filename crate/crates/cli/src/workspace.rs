use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const LOCK_FILE: &str = ".lock";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// A locked work directory plus the resolved config every artifact is stamped with.
pub struct Workspace {
    pub cfg: PipelineConfig,
    pub config_hash: String,
    dir: PathBuf,
    _lock: LockGuard,
}

impl Workspace {
    pub fn open(cfg: PipelineConfig) -> Result<Self, CliError> {
        let dir = cfg.paths.work_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| {
            CliError::Usage(format!("cannot create work dir {}: {e}", dir.display()))
        })?;
        let lock = LockGuard::acquire(&dir)?;
        let config_hash = cfg.hash();
        std::fs::write(dir.join(RESOLVED_CONFIG), cfg.to_toml())?;
        Ok(Self {
            cfg,
            config_hash,
            dir,
            _lock: lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of an upstream artifact, or a usage error naming the stage that makes it.
    pub fn require(&self, name: &str, producer: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Usage(format!(
                "missing {}; run `{producer}` first",
                p.display()
            )))
        }
    }

    /// Writes `body` with `version`, `config_hash`, `seed` and `stage` prepended.
    pub fn write_json(&self, name: &str, stage: &str, body: Value) -> Result<PathBuf, CliError> {
        let mut obj = Map::new();
        obj.insert("version".into(), json!(VERSION));
        obj.insert("config_hash".into(), json!(self.config_hash));
        obj.insert("seed".into(), json!(self.cfg.seed));
        obj.insert("stage".into(), json!(stage));
        match body {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("data".into(), other);
            }
        }
        let path = self.path(name);
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&Value::Object(obj))? + "\n",
        )?;
        Ok(path)
    }

    /// Reads a stamped artifact, warning when it came from a different config.
    pub fn read_json(&self, name: &str, producer: &str) -> Result<Value, CliError> {
        let p = self.require(name, producer)?;
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
        if v.get("config_hash").and_then(Value::as_str) != Some(self.config_hash.as_str()) {
            log::warn!("{} was produced under a different config", p.display());
        }
        Ok(v)
    }
}

/// Single-writer guard; the file is removed when the guard drops.
struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        let p = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(_) => Ok(Self(p)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Usage(format!(
                    "work dir is in use ({} exists); remove it if no other run is active",
                    p.display()
                )))
            }
            Err(e) => Err(CliError::Usage(format!("cannot lock {}: {e}", p.display()))),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}
