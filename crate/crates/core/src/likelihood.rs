//! Naive-Bayes permission likelihood ratio.
//!
//! For a permission vector `a` over `m` critical permissions, with equal
//! priors for the two categories,
//!
//! ```text
//! Λ(a) = Π_j P(a_j | malicious) / P(a_j | benign)
//! P(a_j = 1 | c) = (count_c[j] + 1) / (n_c + 2)      (Laplace)
//! P(a_j = 0 | c) = 1 - P(a_j = 1 | c)
//! ```
//!
//! Zero coordinates contribute factors too. The product is evaluated as a
//! sum of logs. The model stores raw counts, so smoothing happens at query
//! time and the model file is lossless.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{AppProfile, FeatureConfig, Label, PermissionVector};
use crate::num::Real;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LikelihoodError {
    #[error("no {0} samples in training data")]
    EmptyCategory(&'static str),
    #[error("profile {0} has no label")]
    Unlabeled(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("permission vector has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("threshold must be positive, got {0}")]
    BadThreshold(String),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Requested,
    ApiRelated,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Requested, Channel::ApiRelated];

    pub fn vector(self, profile: &AppProfile) -> &PermissionVector {
        match self {
            Channel::Requested => &profile.requested_critical,
            Channel::ApiRelated => &profile.api_related_critical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Benign,
    Malicious,
}

/// Per-channel sample and usage counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounts {
    pub n_benign: u64,
    pub n_malicious: u64,
    pub counts_benign: Vec<u64>,
    pub counts_malicious: Vec<u64>,
}

impl ChannelCounts {
    pub fn new(dim: usize) -> Self {
        Self {
            n_benign: 0,
            n_malicious: 0,
            counts_benign: vec![0; dim],
            counts_malicious: vec![0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.counts_benign.len()
    }

    pub fn add(&mut self, vector: &PermissionVector, category: Category) {
        let (n, counts) = match category {
            Category::Benign => (&mut self.n_benign, &mut self.counts_benign),
            Category::Malicious => (&mut self.n_malicious, &mut self.counts_malicious),
        };
        *n += 1;
        for j in vector.ones() {
            counts[j] += 1;
        }
    }

    fn check(&self) -> Result<(), LikelihoodError> {
        let bad = |m: &str| Err(LikelihoodError::Format(m.to_string()));
        if self.counts_benign.len() != self.counts_malicious.len() {
            return bad("benign and malicious count vectors differ in length");
        }
        if self.counts_benign.iter().any(|&c| c > self.n_benign)
            || self.counts_malicious.iter().any(|&c| c > self.n_malicious)
        {
            return bad("a permission count exceeds its sample count");
        }
        Ok(())
    }

    /// Laplace-smoothed `P(a_j = 1 | category)`.
    pub fn p_present<T: Real>(&self, j: usize, category: Category) -> T {
        let (count, n) = match category {
            Category::Benign => (self.counts_benign[j], self.n_benign),
            Category::Malicious => (self.counts_malicious[j], self.n_malicious),
        };
        (T::from_count(count) + T::one()) / (T::from_count(n) + T::from_count(2))
    }

    pub fn p_value<T: Real>(&self, j: usize, present: bool, category: Category) -> T {
        let p = self.p_present::<T>(j, category);
        if present {
            p
        } else {
            T::one() - p
        }
    }

    /// `ln P(a_j | malicious) - ln P(a_j | benign)`.
    pub fn log_factor<T: Real>(&self, j: usize, present: bool) -> T {
        self.p_value::<T>(j, present, Category::Malicious).ln()
            - self.p_value::<T>(j, present, Category::Benign).ln()
    }

    /// Raw usage rate `count / n`, before smoothing.
    pub fn empirical_rate<T: Real>(&self, j: usize, category: Category) -> T {
        let (count, n) = match category {
            Category::Benign => (self.counts_benign[j], self.n_benign),
            Category::Malicious => (self.counts_malicious[j], self.n_malicious),
        };
        if n == 0 {
            T::zero()
        } else {
            T::from_count(count) / T::from_count(n)
        }
    }
}

/// A likelihood ratio and its natural log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatio<T> {
    pub log: T,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    pub requested: ChannelCounts,
    pub api_related: ChannelCounts,
    pub cfg_fingerprint: String,
    pub format_version: u32,
}

impl LikelihoodModel {
    /// Builds a model from explicit counts, mainly for analysis and tests.
    pub fn from_counts(
        requested: ChannelCounts,
        api_related: ChannelCounts,
        cfg_fingerprint: impl Into<String>,
    ) -> Result<Self, LikelihoodError> {
        let m = Self {
            requested,
            api_related,
            cfg_fingerprint: cfg_fingerprint.into(),
            format_version: MODEL_FORMAT_VERSION,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), LikelihoodError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(LikelihoodError::Format(format!(
                "format_version {} unsupported, expected {MODEL_FORMAT_VERSION}",
                self.format_version
            )));
        }
        self.requested.check()?;
        self.api_related.check()
    }

    pub fn channel(&self, channel: Channel) -> &ChannelCounts {
        match channel {
            Channel::Requested => &self.requested,
            Channel::ApiRelated => &self.api_related,
        }
    }

    pub fn channel_mut(&mut self, channel: Channel) -> &mut ChannelCounts {
        match channel {
            Channel::Requested => &mut self.requested,
            Channel::ApiRelated => &mut self.api_related,
        }
    }

    /// Adds one labeled profile to the counts.
    pub fn add_sample(&mut self, profile: &AppProfile) -> Result<(), LikelihoodError> {
        if profile.cfg_fingerprint != self.cfg_fingerprint {
            return Err(LikelihoodError::ConfigMismatch(format!(
                "profile {} was extracted with a different config",
                profile.sha256
            )));
        }
        let category = match &profile.label {
            Some(Label::Benign) => Category::Benign,
            Some(Label::Malicious { .. }) => Category::Malicious,
            None => return Err(LikelihoodError::Unlabeled(profile.sha256.clone())),
        };
        for ch in Channel::ALL {
            let v = ch.vector(profile);
            let dim = self.channel(ch).dim();
            if v.len() != dim {
                return Err(LikelihoodError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            self.channel_mut(ch).add(v, category);
        }
        Ok(())
    }

    pub fn log_likelihood_ratio<T: Real>(
        &self,
        a: &PermissionVector,
        channel: Channel,
    ) -> Result<T, LikelihoodError> {
        let counts = self.channel(channel);
        if a.len() != counts.dim() {
            return Err(LikelihoodError::DimensionMismatch {
                expected: counts.dim(),
                found: a.len(),
            });
        }
        Ok(a.bits()
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (j, &bit)| {
                acc + counts.log_factor::<T>(j, bit)
            }))
    }

    pub fn likelihood_ratio<T: Real>(
        &self,
        a: &PermissionVector,
        channel: Channel,
    ) -> Result<LikelihoodRatio<T>, LikelihoodError> {
        let log = self.log_likelihood_ratio::<T>(a, channel)?;
        Ok(LikelihoodRatio {
            log,
            value: log.exp(),
        })
    }

    /// `Λ(a) > threshold`, compared as `ln Λ > ln threshold`.
    pub fn exceeds_threshold<T: Real>(
        &self,
        a: &PermissionVector,
        channel: Channel,
        threshold: T,
    ) -> Result<bool, LikelihoodError> {
        if !(threshold > T::zero()) || !threshold.is_finite() {
            return Err(LikelihoodError::BadThreshold(threshold.to_string()));
        }
        Ok(self.log_likelihood_ratio::<T>(a, channel)? > threshold.ln())
    }

    pub fn from_json(text: &str) -> Result<Self, LikelihoodError> {
        let m: Self =
            serde_json::from_str(text).map_err(|e| LikelihoodError::Format(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }
}

/// Tallies both channels over labeled profiles.
pub fn train(
    profiles: &[AppProfile],
    cfg: &FeatureConfig,
) -> Result<LikelihoodModel, LikelihoodError> {
    cfg.validate()
        .map_err(|e| LikelihoodError::ConfigMismatch(e.to_string()))?;
    let dim = cfg.critical_permissions.len();
    let mut model = LikelihoodModel {
        requested: ChannelCounts::new(dim),
        api_related: ChannelCounts::new(dim),
        cfg_fingerprint: cfg.fingerprint(),
        format_version: MODEL_FORMAT_VERSION,
    };
    for p in profiles {
        model.add_sample(p)?;
    }
    if model.requested.n_benign == 0 {
        return Err(LikelihoodError::EmptyCategory("benign"));
    }
    if model.requested.n_malicious == 0 {
        return Err(LikelihoodError::EmptyCategory("malicious"));
    }
    Ok(model)
}
