//! JSON profile documents: a pre-extracted [`RawPackage`] that bypasses
//! binary parsing.

use serde::{Deserialize, Serialize};

use super::{axml::short_permission_name, sha256_hex, Component, IngestError, IntentFilter};
use super::{RawManifest, RawPackage};
use crate::serial::SerialNumber;

pub const PROFILE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ProfileDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format_version: Option<u32>,
    #[serde(default)]
    sha256: Option<String>,
    #[serde(default)]
    name: String,
    #[serde(default)]
    size_bytes: u64,
    #[serde(default)]
    cert_serials: Vec<SerialNumber>,
    #[serde(default)]
    requested_permissions: Vec<String>,
    #[serde(default)]
    intent_filters: Vec<IntentFilter>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    components: Vec<Component>,
    #[serde(default)]
    dex_strings: Vec<String>,
}

fn violation(path: &str, reason: impl Into<String>) -> IngestError {
    IngestError::SchemaViolation {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Reads a profile document. Missing collections default to empty; a
/// missing `sha256` is replaced by the digest of the document text.
pub fn load_profile(text: &str) -> Result<RawPackage, IngestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ProfileDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        violation(&path, e.into_inner().to_string())
    })?;

    if let Some(v) = doc.format_version {
        if v != PROFILE_FORMAT_VERSION {
            return Err(violation(
                "format_version",
                format!("unsupported version {v}, expected {PROFILE_FORMAT_VERSION}"),
            ));
        }
    }
    let sha256 = match doc.sha256 {
        Some(s) => {
            let s = s.to_ascii_lowercase();
            if s.len() != 64 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(violation("sha256", "expected 64 hex digits"));
            }
            s
        }
        None => sha256_hex(text.as_bytes()),
    };

    Ok(RawPackage {
        sha256,
        size_bytes: doc.size_bytes,
        cert_serials: doc.cert_serials,
        manifest: RawManifest {
            app_name: doc.name,
            requested_permissions: doc
                .requested_permissions
                .iter()
                .map(|p| short_permission_name(p).to_string())
                .collect(),
            intent_filters: doc.intent_filters,
            components: doc.components,
        },
        dex_strings: doc.dex_strings,
    })
}

/// Canonical document text for `raw`; identical packages give identical
/// bytes.
pub fn to_profile_document(raw: &RawPackage) -> String {
    let doc = ProfileDocument {
        format_version: Some(PROFILE_FORMAT_VERSION),
        sha256: Some(raw.sha256.clone()),
        name: raw.manifest.app_name.clone(),
        size_bytes: raw.size_bytes,
        cert_serials: raw.cert_serials.clone(),
        requested_permissions: raw.manifest.requested_permissions.iter().cloned().collect(),
        intent_filters: raw.manifest.intent_filters.clone(),
        components: raw.manifest.components.clone(),
        dex_strings: raw.dex_strings.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("profile document serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHA: &str = "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa";

    #[test]
    fn echoes_fields() {
        let text = format!(
            r#"{{"sha256":"{SHA}","name":"x","cert_serials":["0a:1b"],
               "requested_permissions":["android.permission.SEND_SMS","READ_SMS"],
               "intent_filters":[{{"action":"a.SMS_RECEIVED","priority":1000}}],
               "dex_strings":["getDeviceId"],"size_bytes":12,"extra":true}}"#
        );
        let raw = load_profile(&text).unwrap();
        assert_eq!(raw.sha256, SHA);
        assert_eq!(raw.cert_serials[0].display(), "0a:1b");
        assert_eq!(raw.manifest.requested_permissions.len(), 2);
        assert!(raw.manifest.requested_permissions.contains("SEND_SMS"));
        assert_eq!(raw.manifest.intent_filters[0].priority, Some(1000));
        assert_eq!(raw.dex_strings, ["getDeviceId"]);
        assert_eq!(raw.size_bytes, 12);
    }

    #[test]
    fn missing_fields_default_to_empty() {
        let raw = load_profile(&format!(r#"{{"sha256":"{SHA}"}}"#)).unwrap();
        assert!(raw.dex_strings.is_empty());
        assert!(raw.cert_serials.is_empty());
        assert!(raw.manifest.intent_filters.is_empty());
    }

    #[test]
    fn uppercase_serial_is_normalized() {
        let raw = load_profile(r#"{"cert_serials":["0A:1B"]}"#).unwrap();
        assert_eq!(raw.cert_serials[0].display(), "0a:1b");
        assert_eq!(raw.sha256, sha256_hex(br#"{"cert_serials":["0A:1B"]}"#));
    }

    #[test]
    fn schema_violations_name_the_field() {
        let e = load_profile(r#"{"cert_serials":["0a","zz"]}"#).unwrap_err();
        assert!(
            matches!(e, IngestError::SchemaViolation { ref path, .. } if path == "cert_serials[1]")
        );
        let e =
            load_profile(r#"{"intent_filters":[{"action":"a","priority":"high"}]}"#).unwrap_err();
        assert!(
            matches!(e, IngestError::SchemaViolation { ref path, .. } if path == "intent_filters[0].priority")
        );
        let e = load_profile(r#"{"sha256":"abc"}"#).unwrap_err();
        assert!(matches!(e, IngestError::SchemaViolation { ref path, .. } if path == "sha256"));
        let e = load_profile(r#"{"format_version":9}"#).unwrap_err();
        assert!(
            matches!(e, IngestError::SchemaViolation { ref path, .. } if path == "format_version")
        );
    }

    #[test]
    fn document_round_trip() {
        let text = format!(
            r#"{{"sha256":"{SHA}","name":"n","cert_serials":["01"],"requested_permissions":["B","A"],"dex_strings":["s"]}}"#
        );
        let raw = load_profile(&text).unwrap();
        let doc = to_profile_document(&raw);
        assert_eq!(load_profile(&doc).unwrap(), raw);
        assert_eq!(to_profile_document(&load_profile(&doc).unwrap()), doc);
    }
}
