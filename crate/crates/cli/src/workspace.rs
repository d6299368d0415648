//! On-disk workspace: one directory holding every pipeline artifact.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use sigtrack::evalkit::{labels_to_tsv, parse_labels};
use sigtrack::ingest::load_profile;
use sigtrack::{extract_profile, AppProfile, FeatureConfig, Label, RawPackage};

use crate::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.json";
pub const BLACKLIST_FILE: &str = "blacklist.txt";
pub const PROFILES_DIR: &str = "profiles";
pub const INDEX_FILE: &str = "index.txt";
pub const LABELS_FILE: &str = "labels.tsv";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const GROUPS_FILE: &str = "groups.json";
pub const GROUPS_REPORT_FILE: &str = "groups.txt";
pub const CV_REPORT_FILE: &str = "cv_report.json";
pub const CV_TEXT_FILE: &str = "cv_report.txt";
const LOCK_FILE: &str = ".lock";

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => CliError::MissingArtifact(path.to_path_buf()),
        _ => CliError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn profile_path(&self, sha256: &str) -> PathBuf {
        self.root.join(PROFILES_DIR).join(format!("{sha256}.json"))
    }

    /// Claims the single-writer lock.
    pub fn lock(&self) -> Result<LockGuard, CliError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let path = self.path(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(CliError::Io { path, source: e }),
        }
    }

    /// `--config` if given, else the workspace copy, else the built-in default.
    pub fn resolve_config(&self, explicit: Option<&Path>) -> Result<FeatureConfig, CliError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let p = self.path(CONFIG_FILE);
                if !p.exists() {
                    return Ok(FeatureConfig::default_config());
                }
                p
            }
        };
        let text = read_text(&path)?;
        FeatureConfig::from_json(&text).map_err(|e| CliError::Version {
            path,
            reason: e.to_string(),
        })
    }

    /// Stores `cfg` as the workspace config when it differs from the copy on disk.
    pub fn store_config(&self, cfg: &FeatureConfig) -> Result<(), CliError> {
        let path = self.path(CONFIG_FILE);
        let text = cfg.to_json();
        if fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
            write_atomic(&path, text.as_bytes())?;
        }
        Ok(())
    }

    /// Sample ids in arrival order; empty when nothing was extracted yet.
    pub fn read_index(&self) -> Result<Vec<String>, CliError> {
        let path = self.path(INDEX_FILE);
        match fs::read_to_string(&path) {
            Ok(t) => Ok(t
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().to_string())
                .collect()),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(CliError::Io { path, source: e }),
        }
    }

    pub fn write_index(&self, index: &[String]) -> Result<(), CliError> {
        let mut text = index.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_atomic(&self.path(INDEX_FILE), text.as_bytes())
    }

    pub fn read_labels(&self) -> Result<BTreeMap<String, Label>, CliError> {
        let path = self.path(LABELS_FILE);
        match fs::read_to_string(&path) {
            Ok(t) => Ok(parse_labels(&t)
                .map_err(|e| CliError::Version {
                    path: path.clone(),
                    reason: e.to_string(),
                })?
                .into_iter()
                .collect()),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(CliError::Io { path, source: e }),
        }
    }

    pub fn write_labels(&self, labels: &BTreeMap<String, Label>) -> Result<(), CliError> {
        let text = labels_to_tsv(labels.iter().map(|(s, l)| (s.as_str(), l)));
        write_atomic(&self.path(LABELS_FILE), text.as_bytes())
    }

    pub fn load_raw(&self, sha256: &str) -> Result<RawPackage, CliError> {
        let path = self.profile_path(sha256);
        let text = read_text(&path)?;
        load_profile(&text).map_err(|e| CliError::Version {
            path,
            reason: e.to_string(),
        })
    }

    pub fn load_profile(&self, sha256: &str, cfg: &FeatureConfig) -> Result<AppProfile, CliError> {
        let raw = self.load_raw(sha256)?;
        extract_profile(&raw, cfg).map_err(|e| CliError::Failed(e.to_string()))
    }

    /// Every indexed profile, in index order.
    pub fn load_all(&self, cfg: &FeatureConfig) -> Result<Vec<AppProfile>, CliError> {
        self.read_index()?
            .iter()
            .map(|sha| self.load_profile(sha, cfg))
            .collect()
    }

    /// Indexed profiles with their labels attached; unlabeled ones are skipped.
    pub fn load_labeled(&self, cfg: &FeatureConfig) -> Result<(Vec<AppProfile>, usize), CliError> {
        let labels = self.read_labels()?;
        let mut out = Vec::new();
        let mut unlabeled = 0;
        for p in self.load_all(cfg)? {
            match labels.get(&p.sha256) {
                Some(l) => out.push(p.with_label(l.clone())),
                None => unlabeled += 1,
            }
        }
        Ok((out, unlabeled))
    }
}
