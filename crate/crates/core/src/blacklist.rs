//! Certificate serial blacklist.
//!
//! A serial is blacklisted when the malware it signed spans at least two
//! distinct family labels. Reading the rule as "≥ 2" is what makes the
//! reference histogram add up: 107 + 13 + 12 + 4 = 136 multi-family serials
//! out of 620, and 136 is the blacklist size. Family labels are opaque
//! strings, so two variants of one family count as distinct when their
//! labels differ. Known public test keys are removed afterwards since they
//! do not identify an author. Matching is on serial bytes alone; the
//! issuer is not consulted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{AppProfile, FeatureConfig, Label};
use crate::serial::SerialNumber;

pub const BLACKLIST_FORMAT_VERSION: u32 = 1;
pub const MIN_FAMILIES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlacklistError {
    #[error("profile {0} is not labeled with a malware family")]
    UnlabeledSample(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("blacklist file line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub families: BTreeSet<String>,
    pub samples: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SerialBlacklist {
    pub entries: BTreeSet<SerialNumber>,
    pub provenance: BTreeMap<SerialNumber, Provenance>,
    /// Seconds since the Unix epoch; `None` when no build time was given.
    pub built_at: Option<u64>,
    /// Test keys that met the family rule and were dropped.
    pub excluded_test_keys: BTreeSet<SerialNumber>,
}

/// Per-serial family sets and sample counts over a malicious corpus.
fn group_by_serial(
    profiles: &[AppProfile],
) -> Result<BTreeMap<SerialNumber, Provenance>, BlacklistError> {
    let mut groups: BTreeMap<SerialNumber, Provenance> = BTreeMap::new();
    for p in profiles {
        let family = match &p.label {
            Some(Label::Malicious { family }) => family,
            _ => return Err(BlacklistError::UnlabeledSample(p.sha256.clone())),
        };
        // a profile signed twice with one serial counts once
        let distinct: BTreeSet<&SerialNumber> = p.serials.iter().collect();
        for s in distinct {
            let entry = groups.entry(s.clone()).or_default();
            entry.families.insert(family.clone());
            entry.samples += 1;
        }
    }
    Ok(groups)
}

pub fn build_blacklist(
    profiles: &[AppProfile],
    cfg: &FeatureConfig,
) -> Result<SerialBlacklist, BlacklistError> {
    let mut bl = SerialBlacklist::default();
    for (serial, prov) in group_by_serial(profiles)? {
        if prov.families.len() < MIN_FAMILIES {
            continue;
        }
        if cfg.test_key_serials.contains(&serial) {
            bl.excluded_test_keys.insert(serial);
            continue;
        }
        bl.entries.insert(serial.clone());
        bl.provenance.insert(serial, prov);
    }
    Ok(bl)
}

impl SerialBlacklist {
    /// True when any of `serials` is blacklisted.
    pub fn contains(&self, serials: &[SerialNumber]) -> bool {
        serials.iter().any(|s| self.entries.contains(s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_built_at(mut self, built_at: Option<u64>) -> Self {
        self.built_at = built_at;
        self
    }

    /// Text form: one serial per line; `#` lines carry metadata.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# sigtrack serial blacklist\n");
        let _ = writeln!(out, "# format_version: {BLACKLIST_FORMAT_VERSION}");
        if let Some(t) = self.built_at {
            let _ = writeln!(out, "# built_at: {t}");
        }
        for k in &self.excluded_test_keys {
            let _ = writeln!(out, "# excluded_test_key: {k}");
        }
        for s in &self.entries {
            if let Some(p) = self.provenance.get(s) {
                let json = serde_json::to_string(p).expect("provenance serializes");
                let _ = writeln!(out, "# provenance {s} {json}");
            }
            let _ = writeln!(out, "{s}");
        }
        out
    }

    /// Parses the text form. Comment and blank lines are ignored except for
    /// the metadata comments written by [`Self::to_text`]; duplicates
    /// collapse.
    pub fn from_text(text: &str) -> Result<Self, BlacklistError> {
        let mut bl = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fmt_err = |reason: String| BlacklistError::Format {
                line: line_no,
                reason,
            };
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("format_version:") {
                    let v: u32 = v
                        .trim()
                        .parse()
                        .map_err(|_| fmt_err("bad format_version".into()))?;
                    if v != BLACKLIST_FORMAT_VERSION {
                        return Err(fmt_err(format!("unsupported format_version {v}")));
                    }
                } else if let Some(v) = comment.strip_prefix("built_at:") {
                    bl.built_at = v.trim().parse().ok();
                } else if let Some(v) = comment.strip_prefix("excluded_test_key:") {
                    if let Ok(s) = v.trim().parse() {
                        bl.excluded_test_keys.insert(s);
                    }
                } else if let Some(rest) = comment.strip_prefix("provenance ") {
                    if let Some((serial, json)) = rest.split_once(' ') {
                        if let (Ok(s), Ok(p)) = (serial.parse(), serde_json::from_str(json)) {
                            bl.provenance.insert(s, p);
                        }
                    }
                }
                continue;
            }
            let serial: SerialNumber = line.parse().map_err(|e| fmt_err(format!("{e}")))?;
            bl.entries.insert(serial);
        }
        bl.provenance.retain(|s, _| bl.entries.contains(s));
        Ok(bl)
    }
}

/// Number of serials per distinct-family count, test keys excluded.
pub fn family_histogram(
    profiles: &[AppProfile],
    test_keys: &BTreeSet<SerialNumber>,
) -> Result<BTreeMap<usize, usize>, BlacklistError> {
    let mut hist = BTreeMap::new();
    for (serial, prov) in group_by_serial(profiles)? {
        if test_keys.contains(&serial) {
            continue;
        }
        *hist.entry(prov.families.len()).or_insert(0) += 1;
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialStats {
    pub profiles: usize,
    pub distinct_serials: usize,
    /// `profiles / distinct_serials`.
    pub mean_apps_per_serial: f64,
    /// Apps signed by a serial mapped to how many serials signed that many.
    pub frequency: BTreeMap<u64, u64>,
}

pub fn serial_stats(profiles: &[AppProfile]) -> Result<SerialStats, BlacklistError> {
    if profiles.is_empty() {
        return Err(BlacklistError::EmptyCorpus);
    }
    let mut per_serial: BTreeMap<&SerialNumber, u64> = BTreeMap::new();
    for p in profiles {
        let distinct: BTreeSet<&SerialNumber> = p.serials.iter().collect();
        for s in distinct {
            *per_serial.entry(s).or_insert(0) += 1;
        }
    }
    if per_serial.is_empty() {
        return Err(BlacklistError::EmptyCorpus);
    }
    let mut frequency = BTreeMap::new();
    for &n in per_serial.values() {
        *frequency.entry(n).or_insert(0) += 1;
    }
    Ok(SerialStats {
        profiles: profiles.len(),
        distinct_serials: per_serial.len(),
        mean_apps_per_serial: profiles.len() as f64 / per_serial.len() as f64,
        frequency,
    })
}
