use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::serial::SerialNumber;

pub const CRITICAL_PERMISSION_COUNT: usize = 26;
pub const CONFIG_FORMAT_VERSION: u32 = 1;

const DEFAULT_CONFIG: &str = include_str!("../../data/default_config.json");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("feature config invalid: {0}")]
    ConfigInvalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::ConfigInvalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiCategory {
    InfoCollect,
    WebAccess,
    SmsSend,
    SmsDelete,
    AppInstall,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalPermission {
    pub name: String,
    pub symbol: char,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspiciousApi {
    pub name: String,
    pub symbol: char,
    pub category: ApiCategory,
}

/// Everything feature extraction needs to know. Loaded from JSON; the
/// shipped default is [`FeatureConfig::default_config`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub format_version: u32,
    pub critical_permissions: Vec<CriticalPermission>,
    pub suspicious_apis: Vec<SuspiciousApi>,
    /// API name to the permissions it requires.
    pub api_permission_map: BTreeMap<String, BTreeSet<String>>,
    pub command_list: BTreeSet<String>,
    pub sensitive_apis: Vec<String>,
    pub test_key_serials: BTreeSet<SerialNumber>,
    /// An SMS_RECEIVED filter at or above this priority counts as
    /// intercepting.
    #[serde(default = "default_priority_floor")]
    pub sms_priority_floor: i32,
}

fn default_priority_floor() -> i32 {
    1000
}

impl FeatureConfig {
    /// The shipped configuration: the 26 critical permissions, the root
    /// command list, the suspicious-API watchlist and the two public
    /// Android test keys.
    pub fn default_config() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("embedded default config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError::ConfigInvalid(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return invalid(format!(
                "format_version {} unsupported, expected {CONFIG_FORMAT_VERSION}",
                self.format_version
            ));
        }
        if self.critical_permissions.len() != CRITICAL_PERMISSION_COUNT {
            return invalid(format!(
                "expected {CRITICAL_PERMISSION_COUNT} critical permissions, found {}",
                self.critical_permissions.len()
            ));
        }
        let names: BTreeSet<&str> = self
            .critical_permissions
            .iter()
            .map(|p| p.name.as_str())
            .collect();
        if names.len() != CRITICAL_PERMISSION_COUNT {
            return invalid("duplicate critical permission name");
        }
        if names.contains("INTERNET") {
            return invalid("INTERNET must not be a critical permission");
        }
        if !names.contains("INSTALL_PACKAGES") {
            return invalid("INSTALL_PACKAGES must be a critical permission");
        }
        check_injective(
            self.critical_permissions.iter().map(|p| p.symbol),
            "permission",
        )?;

        let apis: BTreeSet<&str> = self
            .suspicious_apis
            .iter()
            .map(|a| a.name.as_str())
            .collect();
        if apis.len() != self.suspicious_apis.len() {
            return invalid("duplicate suspicious API name");
        }
        if self.suspicious_apis.iter().any(|a| a.name.is_empty()) {
            return invalid("empty suspicious API name");
        }
        check_injective(self.suspicious_apis.iter().map(|a| a.symbol), "API")?;

        let sensitive: BTreeSet<&str> = self.sensitive_apis.iter().map(String::as_str).collect();
        if sensitive.len() != self.sensitive_apis.len() {
            return invalid("duplicate sensitive API");
        }
        if let Some(s) = sensitive.iter().find(|s| !apis.contains(*s)) {
            return invalid(format!("sensitive API {s} is not a suspicious API"));
        }
        if self.command_list.iter().any(String::is_empty) {
            return invalid("empty command token");
        }
        Ok(())
    }

    /// Digest of the ordered critical-permission list. Models and profiles
    /// built from different permission orders never mix.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.critical_permissions {
            h.update(p.name.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn permission_index(&self, name: &str) -> Option<usize> {
        self.critical_permissions
            .iter()
            .position(|p| p.name == name)
    }

    pub fn permission_symbol(&self, index: usize) -> char {
        self.critical_permissions[index].symbol
    }

    pub fn api(&self, name: &str) -> Option<&SuspiciousApi> {
        self.suspicious_apis.iter().find(|a| a.name == name)
    }

    pub fn api_by_symbol(&self, symbol: char) -> Option<&SuspiciousApi> {
        self.suspicious_apis.iter().find(|a| a.symbol == symbol)
    }
}

fn check_injective(symbols: impl Iterator<Item = char>, what: &str) -> Result<(), ConfigError> {
    let mut seen = BTreeSet::new();
    for s in symbols {
        if !seen.insert(s) {
            return invalid(format!("{what} alphabet symbol {s:?} used twice"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_contents() {
        let cfg = FeatureConfig::default_config();
        assert_eq!(cfg.critical_permissions.len(), 26);
        assert!(cfg.permission_index("INTERNET").is_none());
        assert!(cfg.permission_index("INSTALL_PACKAGES").is_some());
        assert!(cfg.command_list.contains("rageagainstthecage"));
        assert!(cfg.command_list.contains("gingerbread"));
        assert_eq!(cfg.command_list.len(), 13);
        assert_eq!(cfg.test_key_serials.len(), 2);
        for api in [
            "sendTextMessage",
            "abortBroadcast",
            "getDeviceId",
            "getLine1Number",
            "getSimSerialNumber",
            "getLastKnownLocation",
        ] {
            assert!(cfg.api(api).is_some(), "{api}");
        }
        assert_eq!(cfg.sensitive_apis.len(), 4);
        assert_eq!(cfg.sms_priority_floor, 1000);
    }

    #[test]
    fn json_round_trip() {
        let cfg = FeatureConfig::default_config();
        assert_eq!(FeatureConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn rejects_alphabet_collision() {
        let mut cfg = FeatureConfig::default_config();
        cfg.suspicious_apis[1].symbol = cfg.suspicious_apis[0].symbol;
        assert!(
            matches!(cfg.validate(), Err(ConfigError::ConfigInvalid(m)) if m.contains("twice"))
        );
        let mut cfg = FeatureConfig::default_config();
        cfg.critical_permissions[3].symbol = 'A';
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_wrong_permission_count_and_internet() {
        let mut cfg = FeatureConfig::default_config();
        cfg.critical_permissions.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = FeatureConfig::default_config();
        cfg.critical_permissions[0].name = "INTERNET".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_multi_char_symbol_in_json() {
        let text = FeatureConfig::default_config().to_json().replacen(
            "\"symbol\": \"A\"",
            "\"symbol\": \"AB\"",
            1,
        );
        assert!(matches!(
            FeatureConfig::from_json(&text),
            Err(ConfigError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn sensitive_must_be_suspicious() {
        let mut cfg = FeatureConfig::default_config();
        cfg.sensitive_apis.push("notAnApi".into());
        assert!(cfg.validate().is_err());
    }
}
