use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "lexsent-run/1";

#[derive(Debug, thiserror::Error)]
#[error("input {path} does not exist")]
pub struct MissingInput {
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    /// The parsed subcommand with its arguments, enough to replay the run.
    pub invocation: serde_json::Value,
    pub config: PipelineConfig,
    /// SHA-256 per input file, keyed by the path as given (relative to the workdir).
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
    pub started_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    pub status: RunStatus,
    /// SHA-256 per artifact, keyed by the path relative to the run directory.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Resolves paths against the workdir and records input hashes.
pub struct Workspace {
    root: PathBuf,
    inputs: BTreeMap<String, String>,
}

impl Workspace {
    pub fn new(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            bail!("workdir {} is not a directory", root.display());
        }
        Ok(Self { root: root.to_owned(), inputs: BTreeMap::new() })
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Resolves an input file, fails if it is missing, and records its hash.
    pub fn input(&mut self, rel: &Path) -> Result<PathBuf> {
        let path = self.resolve(rel);
        if !path.is_file() {
            return Err(MissingInput { path: rel.display().to_string() }.into());
        }
        self.inputs.insert(rel.display().to_string(), hash_file(&path)?);
        Ok(path)
    }

    /// Like [`Workspace::input`] for a directory of split files; every
    /// regular file directly inside is hashed.
    pub fn input_dir(&mut self, rel: &Path) -> Result<PathBuf> {
        let path = self.resolve(rel);
        if !path.is_dir() {
            return Err(MissingInput { path: rel.display().to_string() }.into());
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            let name = f.file_name().expect("file has a name");
            self.inputs.insert(rel.join(name).display().to_string(), hash_file(&f)?);
        }
        Ok(path)
    }

    pub fn inputs(&self) -> &BTreeMap<String, String> {
        &self.inputs
    }

    /// Creates `<workdir>/runs/<timestamp>-<config hash>` and writes the
    /// initial manifest. An existing directory is never reused.
    pub fn start_run(&self, command: &str, invocation: serde_json::Value, config: &PipelineConfig) -> Result<Run> {
        let runs = self.root.join("runs");
        fs::create_dir_all(&runs).with_context(|| format!("cannot create {}", runs.display()))?;
        let stamp = Utc::now().format("%Y%m%dT%H%M%S%3fZ").to_string();
        let hash = config.short_hash();
        let mut suffix = 0;
        let dir = loop {
            let name = match suffix {
                0 => format!("{stamp}-{hash}"),
                n => format!("{stamp}-{hash}-{n}"),
            };
            let dir = runs.join(name);
            match fs::create_dir(&dir) {
                Ok(()) => break dir,
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => suffix += 1,
                Err(e) => return Err(e).with_context(|| format!("cannot create {}", dir.display())),
            }
        };
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.to_owned(),
            command: command.to_owned(),
            invocation,
            config: config.clone(),
            inputs: self.inputs.clone(),
            seed: config.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            outputs: BTreeMap::new(),
            error: None,
        };
        let run = Run { dir, manifest };
        run.save_manifest()?;
        Ok(run)
    }
}

pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

/// Rejects artifact names that would land outside the run directory.
fn check_relative(name: &Path) -> Result<()> {
    if name.as_os_str().is_empty() || !name.components().all(|c| matches!(c, Component::Normal(_))) {
        bail!("output name {} must be a plain relative path", name.display());
    }
    Ok(())
}

impl Run {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn save_manifest(&self) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(&self.dir.join(MANIFEST_FILE), &json).context("cannot write run manifest")
    }

    pub fn write(&mut self, name: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let name = name.as_ref();
        check_relative(name)?;
        if name == Path::new(MANIFEST_FILE) {
            bail!("{MANIFEST_FILE} is reserved");
        }
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.manifest.outputs.insert(name.display().to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, name: impl AsRef<Path>, value: &S) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.status = RunStatus::Complete;
        self.manifest.finished_at = Some(now());
        self.save_manifest()?;
        Ok(self.manifest)
    }

    pub fn fail(mut self, error: &anyhow::Error) -> Result<()> {
        self.manifest.status = RunStatus::Failed;
        self.manifest.finished_at = Some(now());
        self.manifest.error = Some(format!("{error:#}"));
        self.save_manifest()
    }
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let bytes = fs::read(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
    let manifest: RunManifest =
        serde_json::from_slice(&bytes).with_context(|| format!("malformed manifest {}", path.display()))?;
    if manifest.format != MANIFEST_FORMAT {
        bail!("unsupported manifest format {:?}", manifest.format);
    }
    Ok(manifest)
}
