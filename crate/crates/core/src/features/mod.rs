//! Feature extraction: from a [`RawPackage`] to an [`AppProfile`].
//!
//! API names and command tokens are matched against DEX strings with
//! identifier boundaries: the characters on either side of a match must not
//! be identifier characters (`[A-Za-z0-9_$]` and other alphanumerics). So
//! `getDeviceId` matches inside
//! `Landroid/telephony/TelephonyManager;->getDeviceId()` but `sh` does not
//! match inside `shell` or `push`.

mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::RawPackage;
use crate::serial::SerialNumber;

pub use config::{
    ApiCategory, ConfigError, CriticalPermission, FeatureConfig, SuspiciousApi,
    CONFIG_FORMAT_VERSION, CRITICAL_PERMISSION_COUNT,
};

pub const SEND_SMS_API: &str = "sendTextMessage";
pub const ABORT_BROADCAST_API: &str = "abortBroadcast";
const SMS_RECEIVED_SUFFIX: &str = "SMS_RECEIVED";

/// Ground-truth category of a sample.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Benign,
    Malicious { family: String },
}

impl Label {
    pub fn malicious(family: impl Into<String>) -> Self {
        Self::Malicious {
            family: family.into(),
        }
    }

    pub fn is_malicious(&self) -> bool {
        matches!(self, Self::Malicious { .. })
    }

    pub fn family(&self) -> Option<&str> {
        match self {
            Self::Malicious { family } => Some(family),
            Self::Benign => None,
        }
    }

    /// Category name used in classification reports; benign samples form
    /// their own category.
    pub fn category(&self) -> &str {
        self.family().unwrap_or("benign")
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Benign => f.write_str("benign"),
            Self::Malicious { family } => write!(f, "malicious:{family}"),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    /// `benign` or `malicious:<family>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "benign" => Ok(Self::Benign),
            other => match other.strip_prefix("malicious:") {
                Some(f) if !f.is_empty() => Ok(Self::malicious(f)),
                _ => Err(format!(
                    "bad label {other:?}: expected benign or malicious:<family>"
                )),
            },
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Binary usage vector over the critical permissions, in config order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PermissionVector(Vec<bool>);

impl PermissionVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![false; dim])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn from_indices(dim: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(dim);
        for i in indices {
            v.0[i] = true;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn set(&mut self, j: usize, value: bool) {
        self.0[j] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Everything the detector and classifier need from one package.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppProfile {
    pub sha256: String,
    pub serials: Vec<SerialNumber>,
    pub requested_critical: PermissionVector,
    pub api_related_critical: PermissionVector,
    /// One symbol per suspicious-API occurrence, in DEX string order.
    pub api_string: String,
    /// Distinct suspicious APIs seen; the source of `api_related_critical`.
    pub present_apis: BTreeSet<String>,
    pub commands: BTreeSet<String>,
    pub sends_sms: bool,
    pub hides_sms: bool,
    pub sensitive_count: u8,
    pub label: Option<Label>,
    pub cfg_fingerprint: String,
}

impl AppProfile {
    /// A profile with only identity fields set; all features empty.
    pub fn bare(
        sha256: impl Into<String>,
        serials: Vec<SerialNumber>,
        cfg: &FeatureConfig,
    ) -> Self {
        let dim = cfg.critical_permissions.len();
        Self {
            sha256: sha256.into(),
            serials,
            requested_critical: PermissionVector::zeros(dim),
            api_related_critical: PermissionVector::zeros(dim),
            api_string: String::new(),
            present_apis: BTreeSet::new(),
            commands: BTreeSet::new(),
            sends_sms: false,
            hides_sms: false,
            sensitive_count: 0,
            label: None,
            cfg_fingerprint: cfg.fingerprint(),
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

fn is_identifier_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Byte offsets of `token` in `haystack` that sit on identifier boundaries.
pub fn token_matches<'a>(haystack: &'a str, token: &'a str) -> impl Iterator<Item = usize> + 'a {
    haystack.match_indices(token).filter_map(move |(pos, _)| {
        let before = haystack[..pos].chars().next_back();
        let after = haystack[pos + token.len()..].chars().next();
        let clean = before.is_none_or(|c| !is_identifier_char(c))
            && after.is_none_or(|c| !is_identifier_char(c));
        clean.then_some(pos)
    })
}

pub fn contains_token(strings: &[String], token: &str) -> bool {
    strings
        .iter()
        .any(|s| token_matches(s, token).next().is_some())
}

/// Maps a package onto the configured feature set.
pub fn extract_profile(raw: &RawPackage, cfg: &FeatureConfig) -> Result<AppProfile, ConfigError> {
    cfg.validate()?;
    let dim = cfg.critical_permissions.len();

    let requested_critical = PermissionVector::from_indices(
        dim,
        raw.manifest
            .requested_permissions
            .iter()
            .filter_map(|p| cfg.permission_index(p)),
    );

    let mut api_string = String::new();
    let mut present_apis = BTreeSet::new();
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for s in &raw.dex_strings {
        hits.clear();
        for (idx, api) in cfg.suspicious_apis.iter().enumerate() {
            hits.extend(token_matches(s, &api.name).map(|pos| (pos, idx)));
        }
        hits.sort_unstable();
        for &(_, idx) in &hits {
            let api = &cfg.suspicious_apis[idx];
            api_string.push(api.symbol);
            present_apis.insert(api.name.clone());
        }
    }

    let mut api_related_critical = PermissionVector::zeros(dim);
    for api in &present_apis {
        for perm in cfg.api_permission_map.get(api).into_iter().flatten() {
            if let Some(j) = cfg.permission_index(perm) {
                api_related_critical.set(j, true);
            }
        }
    }

    let commands = cfg
        .command_list
        .iter()
        .filter(|c| contains_token(&raw.dex_strings, c))
        .cloned()
        .collect();

    let sends_sms = contains_token(&raw.dex_strings, SEND_SMS_API);
    let high_priority_sms_filter = raw.manifest.intent_filters.iter().any(|f| {
        f.action.ends_with(SMS_RECEIVED_SUFFIX)
            && f.priority.is_some_and(|p| p >= cfg.sms_priority_floor)
    });
    let hides_sms =
        high_priority_sms_filter && contains_token(&raw.dex_strings, ABORT_BROADCAST_API);
    let sensitive_count = cfg
        .sensitive_apis
        .iter()
        .filter(|a| present_apis.contains(*a))
        .count() as u8;

    Ok(AppProfile {
        sha256: raw.sha256.clone(),
        serials: raw.cert_serials.clone(),
        requested_critical,
        api_related_critical,
        api_string,
        present_apis,
        commands,
        sends_sms,
        hides_sms,
        sensitive_count,
        label: None,
        cfg_fingerprint: cfg.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{IntentFilter, RawManifest};

    fn raw(perms: &[&str], strings: &[&str]) -> RawPackage {
        RawPackage {
            sha256: "00".repeat(32),
            manifest: RawManifest {
                requested_permissions: perms.iter().map(|s| s.to_string()).collect(),
                ..RawManifest::default()
            },
            dex_strings: strings.iter().map(|s| s.to_string()).collect(),
            ..RawPackage::default()
        }
    }

    /// Naive scanner: split on every non-identifier character and compare
    /// whole pieces.
    fn brute_force_tokens(strings: &[&str], token: &str) -> bool {
        strings.iter().any(|s| {
            let pieces: Vec<&str> = s.split(|c: char| !is_identifier_char(c)).collect();
            if token.chars().all(is_identifier_char) {
                pieces.contains(&token)
            } else {
                unreachable!("oracle only handles identifier tokens")
            }
        })
    }

    #[test]
    fn requested_vector_positions() {
        let cfg = FeatureConfig::default_config();
        let p = extract_profile(&raw(&["SEND_SMS", "READ_SMS", "INTERNET"], &[]), &cfg).unwrap();
        let ones: Vec<usize> = p.requested_critical.ones().collect();
        let expected = vec![
            cfg.permission_index("READ_SMS").unwrap(),
            cfg.permission_index("SEND_SMS").unwrap(),
        ];
        assert_eq!(ones, expected);
        assert_eq!(p.requested_critical.len(), 26);
    }

    #[test]
    fn sensitive_apis_in_pool_order() {
        let cfg = FeatureConfig::default_config();
        let p = extract_profile(&raw(&[], &["getDeviceId", "getSimSerialNumber"]), &cfg).unwrap();
        assert_eq!(p.sensitive_count, 2);
        let expected: String = [
            cfg.api("getDeviceId").unwrap().symbol,
            cfg.api("getSimSerialNumber").unwrap().symbol,
        ]
        .iter()
        .collect();
        assert_eq!(p.api_string, expected);
        let rps = cfg.permission_index("READ_PHONE_STATE").unwrap();
        assert_eq!(p.api_related_critical.ones().collect::<Vec<_>>(), [rps]);
    }

    #[test]
    fn token_boundaries_reject_substrings() {
        let cfg = FeatureConfig::default_config();
        let strings = ["push", "shell"];
        let p = extract_profile(&raw(&[], &strings), &cfg).unwrap();
        assert!(p.commands.is_empty());
        for cmd in &cfg.command_list {
            assert!(!brute_force_tokens(&strings, cmd));
        }
    }

    #[test]
    fn commands_match_brute_force_scanner() {
        let cfg = FeatureConfig::default_config();
        let strings = [
            "/system/bin/sh",
            "su -c chmod 777 /dev/x",
            "rageagainstthecage",
            "lnk",
            "ps_helper",
            "getprop ro.build",
            "mounted",
        ];
        let p = extract_profile(&raw(&[], &strings), &cfg).unwrap();
        let expected: BTreeSet<String> = cfg
            .command_list
            .iter()
            .filter(|c| brute_force_tokens(&strings, c))
            .cloned()
            .collect();
        assert_eq!(p.commands, expected);
        let shown: Vec<_> = p.commands.iter().map(String::as_str).collect();
        assert_eq!(
            shown,
            ["chmod", "getprop", "rageagainstthecage", "sh", "su"]
        );
    }

    #[test]
    fn descriptor_strings_and_repeated_occurrences() {
        let cfg = FeatureConfig::default_config();
        let s = "Landroid/telephony/SmsManager;->sendTextMessage sendTextMessage getDeviceIdX";
        let p = extract_profile(&raw(&[], &[s, "getDeviceId"]), &cfg).unwrap();
        let send = cfg.api("sendTextMessage").unwrap().symbol;
        let dev = cfg.api("getDeviceId").unwrap().symbol;
        assert_eq!(p.api_string, [send, send, dev].iter().collect::<String>());
        assert!(p.sends_sms);
    }

    #[test]
    fn sms_concealment_needs_priority_and_abort() {
        let cfg = FeatureConfig::default_config();
        let mut r = raw(&[], &["abortBroadcast"]);
        r.manifest.intent_filters.push(IntentFilter {
            action: "android.provider.Telephony.SMS_RECEIVED".into(),
            priority: Some(999),
        });
        assert!(!extract_profile(&r, &cfg).unwrap().hides_sms);
        r.manifest.intent_filters[0].priority = Some(1000);
        assert!(extract_profile(&r, &cfg).unwrap().hides_sms);
        r.dex_strings.clear();
        assert!(!extract_profile(&r, &cfg).unwrap().hides_sms);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = FeatureConfig::default_config();
        cfg.critical_permissions.truncate(25);
        assert!(extract_profile(&raw(&[], &[]), &cfg).is_err());
    }

    #[test]
    fn label_text_form() {
        assert_eq!("benign".parse::<Label>().unwrap(), Label::Benign);
        assert_eq!(
            "malicious:Boxer".parse::<Label>().unwrap(),
            Label::malicious("Boxer")
        );
        assert_eq!(Label::malicious("A").to_string(), "malicious:A");
        assert!("malicious:".parse::<Label>().is_err());
        assert!("evil".parse::<Label>().is_err());
    }
}
