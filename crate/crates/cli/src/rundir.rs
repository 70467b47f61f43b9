//! One directory per run: the resolved config, a manifest of completed
//! stages, and the artifacts those stages wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::fail::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
/// Environment variable naming the directory under which runs are created
/// when neither `--run-dir` nor `output_dir` is given.
pub const OUTPUT_ROOT_VAR: &str = "SHAPVEC_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "shapvec-runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the configuration this stage (and everything upstream of it)
    /// ran under.
    pub hash: String,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn empty() -> Self {
        Self {
            tool: "shapvec".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: String::new(),
            stages: BTreeMap::new(),
        }
    }
}

pub struct RunDir {
    pub root: PathBuf,
    pub config: RunConfig,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn open(root: PathBuf, config: RunConfig) -> CliResult<Self> {
        fs::create_dir_all(&root)
            .map_err(|e| CliError::Config(format!("cannot create run directory {}: {e}", root.display())))?;
        let manifest_path = root.join(MANIFEST);
        let manifest = if manifest_path.is_file() {
            serde_json::from_slice(&fs::read(&manifest_path)?)
                .map_err(|e| CliError::Other(format!("corrupt manifest {}: {e}", manifest_path.display())))?
        } else {
            RunManifest::empty()
        };
        Ok(Self {
            root,
            config,
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Creates the parent directory of a run-relative artifact path.
    pub fn prepare(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    /// Fails unless `stage` completed under `hash` and `artifact` exists.
    pub fn require(&self, stage: &str, hash: &str, artifact: &str, command: &str) -> CliResult<PathBuf> {
        let path = self.path(artifact);
        let missing = || CliError::Missing {
            stage: command.to_string(),
            path: path.clone(),
            hint: format!("run `shapvec {command} --run-dir {}` first", self.root.display()),
        };
        let record = self.manifest.stages.get(stage).ok_or_else(missing)?;
        if record.hash != hash {
            return Err(CliError::Config(format!(
                "config-hash mismatch: stage `{stage}` in {} was produced under a different configuration \
                 (recorded {}, current {}); rerun `{command}` or use a fresh run directory",
                self.root.display(),
                &record.hash[..12],
                &hash[..12]
            )));
        }
        if !path.exists() {
            return Err(missing());
        }
        Ok(path)
    }

    /// Whether `stage` is recorded under `hash` with all its artifacts present.
    pub fn is_current(&self, stage: &str, hash: &str) -> bool {
        self.manifest
            .stages
            .get(stage)
            .is_some_and(|r| r.hash == hash && r.artifacts.iter().all(|a| self.path(a).exists()))
    }

    /// Records a finished stage and rewrites the manifest and config.
    pub fn record(&mut self, stage: &str, hash: String, artifacts: Vec<String>, seconds: f64) -> CliResult<()> {
        for a in &artifacts {
            if !self.path(a).exists() {
                return Err(CliError::Other(format!("stage `{stage}` did not produce {a}")));
            }
        }
        self.manifest.stages.insert(
            stage.to_string(),
            StageRecord {
                hash,
                artifacts,
                seconds,
            },
        );
        self.save()
    }

    pub fn save(&mut self) -> CliResult<()> {
        self.manifest.config_hash = self.config.hash();
        self.manifest.version = env!("CARGO_PKG_VERSION").into();
        write_json(&self.path(MANIFEST), &self.manifest)?;
        let mut stored = self.config.clone();
        stored.output_dir = None;
        write_json(&self.path(CONFIG), &stored)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Other(format!("malformed {}: {e}", path.display())))
}

/// Default run directory: `$SHAPVEC_OUTPUT_ROOT/run-<first 12 hex of key>`.
pub fn default_run_dir(key: &str) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
    root.join(format!("run-{}", &key[..12]))
}
