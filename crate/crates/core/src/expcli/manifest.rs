use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::sha256_file;
use super::io::MANIFEST_FILE;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

/// Written last into a run directory; its presence with `status =
/// complete` marks the run as finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<FileEntry>,
    pub stages: Vec<StageTime>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        serde_json::from_slice(&fs::read(&p)?).map_err(|e| Error::Parse { path: p, msg: e.to_string() })
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    /// Files whose content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let p = dir.join(&f.path);
            if !p.exists() || sha256_file(&p)? != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }

    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == name)
    }
}

/// Collects emitted files and stage timings while a run progresses.
pub(crate) struct Recorder {
    pub dir: PathBuf,
    files: Vec<PathBuf>,
    pub stages: Vec<StageTime>,
    pub seeds: BTreeMap<String, u64>,
}

impl Recorder {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            stages: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, p: PathBuf) {
        if !self.files.contains(&p) {
            self.files.push(p);
        }
    }

    pub fn extend(&mut self, ps: impl IntoIterator<Item = PathBuf>) {
        for p in ps {
            self.add(p);
        }
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.stages.push(StageTime {
            stage: stage.to_string(),
            seconds,
        });
    }

    pub fn finish(
        &self,
        name: &str,
        config_hash: &str,
        failure: Option<(&str, String)>,
    ) -> Result<RunManifest> {
        let mut files = Vec::with_capacity(self.files.len());
        for p in &self.files {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p);
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            files.push(FileEntry {
                path: rel,
                sha256: sha256_file(p)?,
                bytes: fs::metadata(p)?.len(),
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let m = RunManifest {
            name: name.to_string(),
            status: if failure.is_some() { RunStatus::Failed } else { RunStatus::Complete },
            failed_stage: failure.as_ref().map(|f| f.0.to_string()),
            error: failure.map(|f| f.1),
            config_hash: config_hash.to_string(),
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            seeds: self.seeds.clone(),
            files,
            stages: self.stages.clone(),
        };
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&m)?)?;
        fs::rename(&tmp, self.dir.join(MANIFEST_FILE))?;
        Ok(m)
    }
}
