//! Deterministic synthetic corpora.
//!
//! Separable mode builds families that are far apart in signature space:
//! each family owns three API symbols, its own root commands and six
//! requested permissions. Members differ from the family base by at most one
//! dropped API occurrence and one dropped permission, so for an API base of
//! length `L >= 11` any two members score at least
//! `((L-2)/(L-1) + 1 + 0.8) / 3 >= 0.9` while members of different families
//! share neither API symbols nor commands and score at most `1/3`.
//!
//! Table2 mode keeps the family APIs and commands but draws requested
//! permissions so that each permission's frequency in each category equals
//! the reference rate rounded to the nearest sample.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{labels_to_tsv, EvalError, LabeledCorpus};
use crate::features::{extract_profile, FeatureConfig, Label};
use crate::ingest::{sha256_hex, to_profile_document, IntentFilter, RawManifest, RawPackage};
use crate::serial::SerialNumber;

/// `(permission, requested benign %, requested malware %, API-related benign %, API-related malware %)`.
pub const TABLE2: [(&str, f64, f64, f64, f64); 26] = [
    ("ACCESS_COARSE_LOCATION", 16.61, 53.78, 20.52, 56.28),
    ("ACCESS_FINE_LOCATION", 16.96, 51.89, 17.72, 55.82),
    ("CALL_PHONE", 6.57, 26.92, 0.0, 0.0),
    ("INSTALL_PACKAGES", 0.32, 12.67, 0.0, 0.0),
    ("PROCESS_OUTGOING_CALLS", 0.63, 1.80, 0.0, 0.0),
    ("READ_CONTACTS", 5.82, 24.95, 1.72, 0.22),
    ("READ_SMS", 1.22, 27.82, 0.0, 0.0),
    ("SEND_SMS", 1.82, 43.98, 1.04, 35.07),
    ("WRITE_CONTACTS", 2.08, 1.47, 1.72, 0.22),
    ("BLUETOOTH", 1.51, 4.04, 1.21, 2.37),
    ("BLUETOOTH_ADMIN", 1.21, 2.77, 0.95, 0.53),
    ("GET_ACCOUNTS", 4.40, 4.90, 3.39, 3.67),
    ("MOUNT_UNMOUNT_FILESYSTEMS", 0.80, 20.62, 0.0, 0.0),
    ("NFC", 0.26, 0.04, 0.15, 0.0),
    ("READ_CALENDAR", 0.97, 0.04, 0.0, 0.0),
    ("READ_HISTORY_BOOKMARKS", 0.93, 7.88, 0.25, 5.64),
    ("READ_LOGS", 1.39, 28.59, 0.0, 0.0),
    ("READ_PHONE_STATE", 24.10, 96.55, 12.00, 69.19),
    ("RECEIVE_MMS", 0.20, 1.05, 0.0, 0.0),
    ("RECEIVE_SMS", 1.66, 37.66, 0.0, 0.0),
    ("RECEIVE_WAP_PUSH", 0.05, 3.01, 0.0, 0.0),
    ("RECORD_AUDIO", 3.13, 22.20, 2.53, 27.84),
    ("WRITE_CALENDAR", 0.85, 0.0, 0.0, 0.0),
    ("WRITE_EXTERNAL_STORAGE", 32.25, 82.50, 0.10, 0.68),
    ("WRITE_HISTORY_BOOKMARKS", 0.57, 7.07, 0.04, 0.02),
    ("WRITE_SMS", 0.77, 5.67, 0.0, 0.0),
];

pub const FAMILY_NAMES: [&str; 10] = [
    "Adwo",
    "Boxer",
    "DroidDream",
    "FakeApp",
    "FakeBattScar",
    "OpFake",
    "PremiumSMS",
    "Smslider",
    "SMStado",
    "SmsSend",
];

const SYMBOLS_PER_FAMILY: usize = 3;
const PERMS_PER_FAMILY: usize = 6;
const SMS_RECEIVED: &str = "android.provider.Telephony.SMS_RECEIVED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    Separable,
    Table2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_families: usize,
    pub samples_per_family: usize,
    pub n_benign: usize,
    pub mode: SynthMode,
    /// Length of each family's base API string.
    pub api_length: usize,
    /// Chance that a member drops one API occurrence.
    pub api_drop_rate: f64,
    /// Chance that a member drops one family permission.
    pub perm_drop_rate: f64,
    /// Chance that a member is signed with a serial its family shares with
    /// the previous or next family.
    pub shared_serial_rate: f64,
    /// Chance that a member is signed with a public test key.
    pub test_key_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_families: 10,
            samples_per_family: 30,
            n_benign: 300,
            mode: SynthMode::Separable,
            api_length: 20,
            api_drop_rate: 0.75,
            perm_drop_rate: 0.75,
            shared_serial_rate: 0.3,
            test_key_rate: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self, cfg: &FeatureConfig) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::BadSpec(m));
        if self.n_families == 0 || self.samples_per_family == 0 {
            return bad("n_families and samples_per_family must be positive".into());
        }
        let max_families =
            (cfg.suspicious_apis.len() / SYMBOLS_PER_FAMILY).min(cfg.command_list.len());
        if self.n_families > max_families {
            return bad(format!(
                "at most {max_families} families fit the configured APIs and commands"
            ));
        }
        if self.api_length < 2 * SYMBOLS_PER_FAMILY {
            return bad(format!(
                "api_length must be at least {}",
                2 * SYMBOLS_PER_FAMILY
            ));
        }
        if cfg.critical_permissions.len() < PERMS_PER_FAMILY {
            return bad("too few critical permissions".into());
        }
        for (name, r) in [
            ("api_drop_rate", self.api_drop_rate),
            ("perm_drop_rate", self.perm_drop_rate),
            ("shared_serial_rate", self.shared_serial_rate),
            ("test_key_rate", self.test_key_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.shared_serial_rate + self.test_key_rate > 1.0 {
            return bad("shared_serial_rate + test_key_rate exceeds 1".into());
        }
        if self.test_key_rate > 0.0 && cfg.test_key_serials.is_empty() {
            return bad("test_key_rate > 0 but the config lists no test keys".into());
        }
        if self.mode == SynthMode::Table2 {
            for (name, ..) in TABLE2 {
                if cfg.permission_index(name).is_none() {
                    return bad(format!("config lacks critical permission {name}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyTruth {
    pub name: String,
    pub api_base: String,
    pub commands: BTreeSet<String>,
    pub requested_permissions: BTreeSet<String>,
    pub private_serial: SerialNumber,
    /// Shared with the next family.
    pub shared_serial: Option<SerialNumber>,
    pub hides_sms: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub sha256: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_dropped_at: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permission_dropped: Option<String>,
    pub serial: SerialNumber,
}

/// How the corpus was built, for assertions in tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub spec: SynthSpec,
    pub families: Vec<FamilyTruth>,
    pub samples: Vec<SampleTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub raw: RawPackage,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub samples: Vec<SyntheticSample>,
    pub truth: GroundTruth,
}

impl SyntheticCorpus {
    pub fn labeled(&self, cfg: &FeatureConfig) -> Result<LabeledCorpus, EvalError> {
        let pairs = self
            .samples
            .iter()
            .map(|s| Ok((extract_profile(&s.raw, cfg)?, s.label.clone())))
            .collect::<Result<Vec<_>, EvalError>>()?;
        LabeledCorpus::new(pairs)
    }

    /// Writes `<sha256>.json` per sample, `labels.tsv` and `truth.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for s in &self.samples {
            let path = dir.join(format!("{}.json", s.raw.sha256));
            std::fs::write(&path, to_profile_document(&s.raw)).map_err(io(&path))?;
        }
        let labels = labels_to_tsv(
            self.samples
                .iter()
                .map(|s| (s.raw.sha256.as_str(), &s.label)),
        );
        let path = dir.join("labels.tsv");
        std::fs::write(&path, labels).map_err(io(&path))?;
        let mut truth = serde_json::to_string_pretty(&self.truth).expect("truth serializes");
        truth.push('\n');
        let path = dir.join("truth.json");
        std::fs::write(&path, truth).map_err(io(&path))?;
        Ok(())
    }
}

fn random_serial(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<SerialNumber>) -> SerialNumber {
    loop {
        let mut bytes: [u8; 8] = rng.random();
        bytes[0] |= 0x10;
        let s = SerialNumber::from_bytes(&bytes);
        if taken.insert(s.clone()) {
            return s;
        }
    }
}

fn family_name(f: usize) -> String {
    FAMILY_NAMES
        .get(f)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("Family{f:02}"))
}

/// A dex string carrying one occurrence of `api`.
fn api_string_for(api: &str, pkg: &str, i: usize) -> String {
    if api
        .chars()
        .all(|c| c.is_alphanumeric() || c == '_' || c == '$')
    {
        format!("L{}/C{i};->{api}", pkg.replace('.', "/"))
    } else {
        format!("{api} {i}")
    }
}

/// Picks `round(rate * n)` of `n` samples for each permission.
fn exact_permission_sets(
    rng: &mut ChaCha8Rng,
    n: usize,
    rate_of: impl Fn(&(&str, f64, f64, f64, f64)) -> f64,
) -> Vec<BTreeSet<String>> {
    let mut sets = vec![BTreeSet::new(); n];
    let mut idx: Vec<usize> = (0..n).collect();
    for row in &TABLE2 {
        let count = (rate_of(row) / 100.0 * n as f64).round() as usize;
        idx.shuffle(rng);
        for &i in &idx[..count.min(n)] {
            sets[i].insert(row.0.to_string());
        }
    }
    sets
}

fn bernoulli_permissions(rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    TABLE2
        .iter()
        .filter(|row| rng.random_bool(row.1 / 100.0))
        .map(|row| row.0.to_string())
        .collect()
}

pub fn gen_synthetic_corpus(
    spec: &SynthSpec,
    cfg: &FeatureConfig,
    seed: u64,
) -> Result<SyntheticCorpus, EvalError> {
    spec.validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken: BTreeSet<SerialNumber> = cfg.test_key_serials.clone();
    let test_keys: Vec<SerialNumber> = cfg.test_key_serials.iter().cloned().collect();

    let mut api_pool: Vec<usize> = (0..cfg.suspicious_apis.len()).collect();
    api_pool.shuffle(&mut rng);
    let commands: Vec<&String> = cfg.command_list.iter().collect();
    let cmds_per_family = if spec.n_families * 2 <= commands.len() {
        2
    } else {
        1
    };
    let perm_names: Vec<&str> = cfg
        .critical_permissions
        .iter()
        .map(|p| p.name.as_str())
        .collect();

    let mut families = Vec::with_capacity(spec.n_families);
    for f in 0..spec.n_families {
        let own = &api_pool[f * SYMBOLS_PER_FAMILY..(f + 1) * SYMBOLS_PER_FAMILY];
        // every symbol at least twice so a single drop never removes one
        let mut seq: Vec<usize> = own.iter().flat_map(|&a| [a, a]).collect();
        while seq.len() < spec.api_length {
            seq.push(own[rng.random_range(0..own.len())]);
        }
        seq.shuffle(&mut rng);
        let api_base: String = seq.iter().map(|&a| cfg.suspicious_apis[a].symbol).collect();
        let fam_cmds = commands[f * cmds_per_family..(f + 1) * cmds_per_family]
            .iter()
            .map(|c| c.to_string())
            .collect();
        let mut perms = perm_names.clone();
        perms.shuffle(&mut rng);
        let requested_permissions = perms[..PERMS_PER_FAMILY]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let hides_sms = own
            .iter()
            .any(|&a| cfg.suspicious_apis[a].name == crate::features::ABORT_BROADCAST_API);
        families.push(FamilyTruth {
            name: family_name(f),
            api_base,
            commands: fam_cmds,
            requested_permissions,
            private_serial: random_serial(&mut rng, &mut taken),
            shared_serial: None,
            hides_sms,
        });
    }
    for f in 0..spec.n_families.saturating_sub(1) {
        families[f].shared_serial = Some(random_serial(&mut rng, &mut taken));
    }

    let n_mal = spec.n_families * spec.samples_per_family;
    let table2_mal =
        (spec.mode == SynthMode::Table2).then(|| exact_permission_sets(&mut rng, n_mal, |r| r.2));
    let table2_ben = (spec.mode == SynthMode::Table2)
        .then(|| exact_permission_sets(&mut rng, spec.n_benign, |r| r.1));

    let mut samples = Vec::with_capacity(n_mal + spec.n_benign);
    let mut truths = Vec::with_capacity(n_mal + spec.n_benign);

    for (f, fam) in families.iter().enumerate() {
        for m in 0..spec.samples_per_family {
            let index = f * spec.samples_per_family + m;
            let sha256 = sha256_hex(format!("synthetic/{seed}/malware/{index}").as_bytes());
            let pkg = format!("com.{}.app{m}", fam.name.to_ascii_lowercase());

            let mut api: Vec<char> = fam.api_base.chars().collect();
            let api_dropped_at = if rng.random_bool(spec.api_drop_rate) {
                let counts = |c: char, s: &[char]| s.iter().filter(|&&x| x == c).count();
                let candidates: Vec<usize> = (0..api.len())
                    .filter(|&i| counts(api[i], &api) >= 2)
                    .collect();
                let at = candidates[rng.random_range(0..candidates.len())];
                api.remove(at);
                Some(at)
            } else {
                None
            };

            let (requested, permission_dropped) = match &table2_mal {
                Some(sets) => (sets[index].clone(), None),
                None => {
                    let mut set = fam.requested_permissions.clone();
                    let dropped = rng.random_bool(spec.perm_drop_rate).then(|| {
                        let v: Vec<&String> = set.iter().collect();
                        v[rng.random_range(0..v.len())].clone()
                    });
                    if let Some(d) = &dropped {
                        set.remove(d);
                    }
                    (set, dropped)
                }
            };

            let u: f64 = rng.random();
            let serial = if u < spec.test_key_rate {
                test_keys[index % test_keys.len()].clone()
            } else if u < spec.test_key_rate + spec.shared_serial_rate && spec.n_families > 1 {
                // the serial shared with the previous or the next family
                let with_next = f == 0 || (f + 1 < spec.n_families && rng.random_bool(0.5));
                let owner = if with_next { f } else { f - 1 };
                families[owner]
                    .shared_serial
                    .clone()
                    .expect("neighbor shares a serial")
            } else {
                fam.private_serial.clone()
            };

            let mut dex_strings = vec![
                format!("L{};", pkg.replace('.', "/") + "/MainActivity"),
                "onCreate".into(),
            ];
            for (i, sym) in api.iter().enumerate() {
                let a = cfg
                    .api_by_symbol(*sym)
                    .expect("family symbols come from the config");
                dex_strings.push(api_string_for(&a.name, &pkg, i));
            }
            for c in &fam.commands {
                dex_strings.push(format!("/system/bin/{c}"));
            }
            let mut requested_permissions: BTreeSet<String> = requested;
            requested_permissions.insert("INTERNET".into());
            let intent_filters = if fam.hides_sms {
                vec![IntentFilter {
                    action: SMS_RECEIVED.into(),
                    priority: Some(i32::MAX),
                }]
            } else {
                Vec::new()
            };
            let label = Label::malicious(&fam.name);
            samples.push(SyntheticSample {
                raw: RawPackage {
                    sha256: sha256.clone(),
                    size_bytes: 4096 + dex_strings.iter().map(|s| s.len() as u64).sum::<u64>(),
                    cert_serials: vec![serial.clone()],
                    manifest: RawManifest {
                        app_name: pkg.clone(),
                        requested_permissions,
                        intent_filters,
                        components: Vec::new(),
                    },
                    dex_strings,
                },
                label: label.clone(),
            });
            truths.push(SampleTruth {
                sha256,
                label,
                api_dropped_at,
                permission_dropped,
                serial,
            });
        }
    }

    let sensitive: BTreeSet<&str> = cfg.sensitive_apis.iter().map(String::as_str).collect();
    let benign_apis: Vec<&str> = cfg
        .suspicious_apis
        .iter()
        .filter(|a| {
            use crate::features::ApiCategory::*;
            !matches!(a.category, SmsSend | SmsDelete | AppInstall)
                && !sensitive.contains(a.name.as_str())
        })
        .map(|a| a.name.as_str())
        .collect();
    let sensitive_list: Vec<&str> = cfg.sensitive_apis.iter().map(String::as_str).collect();

    for b in 0..spec.n_benign {
        let sha256 = sha256_hex(format!("synthetic/{seed}/benign/{b}").as_bytes());
        let pkg = format!("org.benign.app{b}");
        let mut dex_strings = vec![
            format!("L{}/MainActivity;", pkg.replace('.', "/")),
            "onCreate".into(),
            "shell".into(),
            "push".into(),
            "https://example.org/api".into(),
        ];
        let n_api = rng.random_range(0..=4usize);
        for i in 0..n_api {
            let a = benign_apis[rng.random_range(0..benign_apis.len())];
            dex_strings.push(api_string_for(a, &pkg, i));
        }
        if rng.random_bool(0.3) {
            let a = sensitive_list[rng.random_range(0..sensitive_list.len())];
            dex_strings.push(api_string_for(a, &pkg, n_api));
        }
        let mut requested_permissions = match &table2_ben {
            Some(sets) => sets[b].clone(),
            None => bernoulli_permissions(&mut rng),
        };
        requested_permissions.insert("INTERNET".into());
        let serial = random_serial(&mut rng, &mut taken);
        samples.push(SyntheticSample {
            raw: RawPackage {
                sha256: sha256.clone(),
                size_bytes: 4096 + dex_strings.iter().map(|s| s.len() as u64).sum::<u64>(),
                cert_serials: vec![serial.clone()],
                manifest: RawManifest {
                    app_name: pkg,
                    requested_permissions,
                    intent_filters: Vec::new(),
                    components: Vec::new(),
                },
                dex_strings,
            },
            label: Label::Benign,
        });
        truths.push(SampleTruth {
            sha256,
            label: Label::Benign,
            api_dropped_at: None,
            permission_dropped: None,
            serial,
        });
    }

    // arrival order mixes families and benign samples
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let mut slots: Vec<Option<(SyntheticSample, SampleTruth)>> =
        samples.into_iter().zip(truths).map(Some).collect();
    let (samples, truths): (Vec<_>, Vec<_>) = order
        .iter()
        .map(|&i| slots[i].take().expect("each index once"))
        .unzip();

    Ok(SyntheticCorpus {
        samples,
        truth: GroundTruth {
            seed,
            spec: spec.clone(),
            families,
            samples: truths,
        },
    })
}

/// Empirical requested-permission rate (percent) per category and permission.
pub fn requested_rates(corpus: &SyntheticCorpus) -> BTreeMap<(bool, String), f64> {
    let mut counts: BTreeMap<(bool, String), usize> = BTreeMap::new();
    let mut totals: BTreeMap<bool, usize> = BTreeMap::new();
    for s in &corpus.samples {
        let mal = s.label.is_malicious();
        *totals.entry(mal).or_default() += 1;
        for p in &s.raw.manifest.requested_permissions {
            *counts.entry((mal, p.clone())).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(k, c)| {
            let n = totals[&k.0];
            (k, 100.0 * c as f64 / n as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FeatureConfig {
        FeatureConfig::default_config()
    }

    #[test]
    fn deterministic_for_a_seed() {
        let spec = SynthSpec {
            n_families: 3,
            samples_per_family: 4,
            n_benign: 5,
            ..SynthSpec::default()
        };
        let a = gen_synthetic_corpus(&spec, &cfg(), 7).unwrap();
        let b = gen_synthetic_corpus(&spec, &cfg(), 7).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_corpus(&spec, &cfg(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sizes_and_no_benign() {
        let spec = SynthSpec {
            n_families: 2,
            samples_per_family: 5,
            n_benign: 0,
            ..SynthSpec::default()
        };
        let c = gen_synthetic_corpus(&spec, &cfg(), 1).unwrap();
        assert_eq!(c.samples.len(), 10);
        assert!(c.samples.iter().all(|s| s.label.is_malicious()));
    }

    #[test]
    fn bad_specs() {
        let cfg = cfg();
        for spec in [
            SynthSpec {
                n_families: 0,
                ..SynthSpec::default()
            },
            SynthSpec {
                samples_per_family: 0,
                ..SynthSpec::default()
            },
            SynthSpec {
                n_families: 11,
                ..SynthSpec::default()
            },
            SynthSpec {
                api_length: 3,
                ..SynthSpec::default()
            },
            SynthSpec {
                api_drop_rate: 1.5,
                ..SynthSpec::default()
            },
        ] {
            assert!(matches!(
                gen_synthetic_corpus(&spec, &cfg, 0),
                Err(EvalError::BadSpec(_))
            ));
        }
    }

    #[test]
    fn extracted_profiles_follow_the_construction() {
        let cfg = cfg();
        let spec = SynthSpec {
            n_families: 4,
            samples_per_family: 6,
            n_benign: 10,
            ..SynthSpec::default()
        };
        let c = gen_synthetic_corpus(&spec, &cfg, 3).unwrap();
        let corpus = c.labeled(&cfg).unwrap();
        for (p, t) in corpus.entries.iter().zip(&c.truth.samples) {
            assert_eq!(p.sha256, t.sha256);
            match &t.label {
                Label::Benign => {
                    assert!(
                        p.commands.is_empty(),
                        "benign noise must not match commands"
                    );
                    assert!(!p.sends_sms);
                    assert!(p.sensitive_count <= 1);
                }
                Label::Malicious { family } => {
                    let fam = c.truth.families.iter().find(|f| &f.name == family).unwrap();
                    assert_eq!(p.commands, fam.commands);
                    let expect_len =
                        fam.api_base.chars().count() - usize::from(t.api_dropped_at.is_some());
                    assert_eq!(p.api_string.chars().count(), expect_len);
                }
            }
        }
    }
}
