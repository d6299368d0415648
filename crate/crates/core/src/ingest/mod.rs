//! Turning Android packages and profile documents into [`RawPackage`]s.
//!
//! APKs are read as ZIP archives. Certificate serials come from every
//! PKCS#7 signature block under `META-INF/`, the manifest from the binary
//! `AndroidManifest.xml`, and the string pool from each `classes*.dex` in
//! archive order. Instead of disassembling bytecode we keep the raw DEX
//! string pool: method names and string constants both live there, which
//! is all the feature extraction looks at.

mod axml;
mod der;
mod dex;
mod profile;
mod zip;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::serial::SerialNumber;

pub use axml::short_permission_name;
pub use dex::decode_mutf8_lossy;
pub use profile::{load_profile, to_profile_document, PROFILE_FORMAT_VERSION};

const MANIFEST_ENTRY: &str = "AndroidManifest.xml";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("not a ZIP archive: {reason}")]
    NotAnArchive { reason: String },
    #[error("no usable certificate{}: {reason}", entry_suffix(.entry))]
    NoCertificate {
        entry: Option<String>,
        reason: String,
    },
    #[error("{entry} missing from archive")]
    ManifestMissing { entry: String },
    #[error("{entry} malformed at byte {offset}: {reason}")]
    ManifestMalformed {
        entry: String,
        offset: usize,
        reason: String,
    },
    #[error("{entry} malformed at byte {offset}: {reason}")]
    DexMalformed {
        entry: String,
        offset: usize,
        reason: String,
    },
    #[error("profile document violates schema at `{path}`: {reason}")]
    SchemaViolation { path: String, reason: String },
}

fn entry_suffix(entry: &Option<String>) -> String {
    entry
        .as_ref()
        .map(|e| format!(" in {e}"))
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Activity,
    Service,
    Receiver,
    Provider,
}

impl ComponentKind {
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "activity" | "activity-alias" => Some(Self::Activity),
            "service" => Some(Self::Service),
            "receiver" => Some(Self::Receiver),
            "provider" => Some(Self::Provider),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub kind: ComponentKind,
    pub name: String,
}

/// One action of an `<intent-filter>`, with the filter's priority.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentFilter {
    pub action: String,
    #[serde(default)]
    pub priority: Option<i32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawManifest {
    pub app_name: String,
    /// Short permission names (`SEND_SMS`).
    pub requested_permissions: BTreeSet<String>,
    pub intent_filters: Vec<IntentFilter>,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawPackage {
    /// Lowercase hex SHA-256 of the input bytes.
    pub sha256: String,
    pub size_bytes: u64,
    pub cert_serials: Vec<SerialNumber>,
    pub manifest: RawManifest,
    /// DEX string pools concatenated in archive order.
    pub dex_strings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_signature_block(name: &str) -> bool {
    let Some(file) = name.strip_prefix("META-INF/") else {
        return false;
    };
    let upper = file.to_ascii_uppercase();
    !file.contains('/')
        && [".RSA", ".DSA", ".EC"]
            .iter()
            .any(|ext| upper.ends_with(ext))
}

fn is_dex(name: &str) -> bool {
    name.strip_prefix("classes")
        .and_then(|rest| rest.strip_suffix(".dex"))
        .is_some_and(|n| n.chars().all(|c| c.is_ascii_digit()))
}

/// Parses an APK. See the module docs for what is extracted.
pub fn parse_apk(bytes: &[u8]) -> Result<RawPackage, IngestError> {
    let archive = zip::ZipArchive::parse(bytes).map_err(|e| match e {
        zip::ZipError::Archive(reason) => IngestError::NotAnArchive { reason },
        zip::ZipError::Entry { name, reason } => IngestError::NotAnArchive {
            reason: format!("{name}: {reason}"),
        },
    })?;

    let mut cert_serials = Vec::new();
    let mut last_failure = None;
    for entry in archive
        .entries()
        .iter()
        .filter(|e| is_signature_block(&e.name))
    {
        let serials = archive
            .read(entry)
            .map_err(|e| match e {
                zip::ZipError::Entry { reason, .. } | zip::ZipError::Archive(reason) => reason,
            })
            .and_then(|data| {
                der::pkcs7_serials(&data).map_err(|e| format!("{} at byte {}", e.reason, e.offset))
            });
        match serials {
            Ok(s) if s.is_empty() => {
                last_failure = Some((entry.name.clone(), "no certificates in block".to_string()))
            }
            Ok(s) => cert_serials.extend(s),
            Err(reason) => last_failure = Some((entry.name.clone(), reason)),
        }
    }
    if cert_serials.is_empty() {
        return Err(match last_failure {
            Some((entry, reason)) => IngestError::NoCertificate {
                entry: Some(entry),
                reason,
            },
            None => IngestError::NoCertificate {
                entry: None,
                reason: "no META-INF signature block".into(),
            },
        });
    }

    let manifest_entry =
        archive
            .find(MANIFEST_ENTRY)
            .ok_or_else(|| IngestError::ManifestMissing {
                entry: MANIFEST_ENTRY.into(),
            })?;
    let manifest_bytes = archive
        .read(manifest_entry)
        .map_err(|e| entry_error(e, true))?;
    let manifest =
        axml::parse_manifest(&manifest_bytes).map_err(|e| IngestError::ManifestMalformed {
            entry: MANIFEST_ENTRY.into(),
            offset: e.offset,
            reason: e.reason,
        })?;

    let mut dex_strings = Vec::new();
    for entry in archive.entries().iter().filter(|e| is_dex(&e.name)) {
        let data = archive.read(entry).map_err(|e| entry_error(e, false))?;
        let pool = dex::string_pool(&data).map_err(|e| IngestError::DexMalformed {
            entry: entry.name.clone(),
            offset: e.offset,
            reason: e.reason,
        })?;
        dex_strings.extend(pool);
    }

    Ok(RawPackage {
        sha256: sha256_hex(bytes),
        size_bytes: bytes.len() as u64,
        cert_serials,
        manifest,
        dex_strings,
    })
}

fn entry_error(e: zip::ZipError, manifest: bool) -> IngestError {
    let (entry, reason) = match e {
        zip::ZipError::Entry { name, reason } => (name, reason),
        zip::ZipError::Archive(reason) => (String::new(), reason),
    };
    if manifest {
        IngestError::ManifestMalformed {
            entry,
            offset: 0,
            reason,
        }
    } else {
        IngestError::DexMalformed {
            entry,
            offset: 0,
            reason,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sigtrack_fixtures::{write_apk, write_zip, FixtureApk, ZipEntry, ZipMethod};

    #[test]
    fn entry_name_classification() {
        assert!(is_signature_block("META-INF/CERT.RSA"));
        assert!(is_signature_block("META-INF/key.ec"));
        assert!(!is_signature_block("META-INF/CERT.SF"));
        assert!(!is_signature_block("META-INF/sub/CERT.RSA"));
        assert!(is_dex("classes.dex"));
        assert!(is_dex("classes12.dex"));
        assert!(!is_dex("assets/classes.dex"));
        assert!(!is_dex("classesX.dex"));
    }

    #[test]
    fn empty_buffer_is_not_an_archive() {
        assert!(matches!(
            parse_apk(&[]),
            Err(IngestError::NotAnArchive { .. })
        ));
    }

    #[test]
    fn unsigned_archive() {
        let apk = FixtureApk {
            omit_signature: true,
            ..FixtureApk::default()
        };
        assert_eq!(
            parse_apk(&write_apk(&apk)),
            Err(IngestError::NoCertificate {
                entry: None,
                reason: "no META-INF signature block".into()
            })
        );
    }

    #[test]
    fn missing_manifest() {
        let zip = write_zip(&[ZipEntry {
            name: "META-INF/CERT.RSA".into(),
            data: sigtrack_fixtures::write_pkcs7(&[sigtrack_fixtures::write_certificate(
                &[5],
                "x",
            )]),
            method: ZipMethod::Stored,
        }]);
        assert_eq!(
            parse_apk(&zip),
            Err(IngestError::ManifestMissing {
                entry: "AndroidManifest.xml".into()
            })
        );
    }

    #[test]
    fn multiple_dex_files_concatenate_in_archive_order() {
        let apk = FixtureApk {
            dex_files: vec![vec!["one".into(), "two".into()], vec!["three".into()]],
            deflate: true,
            ..FixtureApk::default()
        };
        let raw = parse_apk(&write_apk(&apk)).unwrap();
        assert_eq!(raw.dex_strings, ["one", "two", "three"]);
    }

    #[test]
    fn all_certificates_are_kept() {
        let apk = FixtureApk {
            cert_serials: vec![vec![0x0a], vec![0x00, 0xff, 0x01]],
            ..FixtureApk::default()
        };
        let raw = parse_apk(&write_apk(&apk)).unwrap();
        let shown: Vec<_> = raw.cert_serials.iter().map(|s| s.display()).collect();
        assert_eq!(shown, ["0a", "ff:01"]);
    }
}
