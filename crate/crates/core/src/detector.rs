//! Staged detection.
//!
//! Stages run in a fixed order and each can add one reason:
//!
//! 1. `BLACKLIST`: a signing serial is blacklisted and the app uses at
//!    least one suspicious API. Blacklisted apps with no suspicious API are
//!    let through to avoid over-detection.
//! 2. `ROOT_COMMAND`: any root command token appears in the code.
//! 3. `SMS_CONCEALMENT`: the app sends SMS and intercepts incoming SMS with
//!    a high-priority receiver plus `abortBroadcast`.
//! 4. `LIKELIHOOD_BEHAVIOR`: the permission likelihood gate combined with a
//!    behavior gate (sends SMS, or collects enough sensitive identifiers).
//!
//! The stage-4 combination is configurable. The default is
//! `(Λ_requested > T_L OR Λ_api > T_L) AND (sends_sms OR sensitive ≥ k)`, so
//! permissions alone never convict.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blacklist::SerialBlacklist;
use crate::features::AppProfile;
use crate::likelihood::{Channel, LikelihoodError, LikelihoodModel};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectError {
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid detector parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reason {
    Blacklist,
    RootCommand,
    SmsConcealment,
    LikelihoodBehavior,
}

impl Reason {
    pub const STAGES: [Reason; 4] = [
        Reason::Blacklist,
        Reason::RootCommand,
        Reason::SmsConcealment,
        Reason::LikelihoodBehavior,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Malicious,
    Benign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoolOp {
    And,
    Or,
}

impl BoolOp {
    pub fn apply(self, a: bool, b: bool) -> bool {
        match self {
            BoolOp::And => a && b,
            BoolOp::Or => a || b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams<T> {
    /// Likelihood-ratio threshold `T_L`.
    pub threshold_likelihood: T,
    /// Distinct sensitive APIs needed for the behavior gate.
    pub sensitive_threshold: u8,
    pub short_circuit: bool,
    /// How the two channel likelihood tests combine.
    pub channel_op: BoolOp,
    /// How the likelihood gate combines with the behavior gate.
    pub behavior_op: BoolOp,
}

impl<T: Real> Default for DetectorParams<T> {
    fn default() -> Self {
        Self {
            threshold_likelihood: T::one(),
            sensitive_threshold: 2,
            short_circuit: true,
            channel_op: BoolOp::Or,
            behavior_op: BoolOp::And,
        }
    }
}

impl<T: Real> DetectorParams<T> {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.threshold_likelihood > T::zero()) || !self.threshold_likelihood.is_finite() {
            return Err(DetectError::BadParams(format!(
                "T_L must be positive, got {}",
                self.threshold_likelihood
            )));
        }
        if !(1..=4).contains(&self.sensitive_threshold) {
            return Err(DetectError::BadParams(format!(
                "sensitive threshold must be in 1..=4, got {}",
                self.sensitive_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Reason,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict<T> {
    pub decision: Decision,
    pub reasons: Vec<Reason>,
    pub lambda_requested: T,
    pub lambda_api_related: T,
    pub log_lambda_requested: T,
    pub log_lambda_api_related: T,
    pub matched_commands: BTreeSet<String>,
    /// Stages evaluated, in order; skipped stages are absent.
    pub stage_trace: Vec<StageOutcome>,
}

impl<T> Verdict<T> {
    pub fn is_malicious(&self) -> bool {
        self.decision == Decision::Malicious
    }
}

pub fn stage_blacklist(profile: &AppProfile, bl: &SerialBlacklist) -> bool {
    bl.contains(&profile.serials) && !profile.api_string.is_empty()
}

pub fn stage_root_command(profile: &AppProfile) -> bool {
    !profile.commands.is_empty()
}

pub fn stage_sms_concealment(profile: &AppProfile) -> bool {
    profile.sends_sms && profile.hides_sms
}

/// Stage 4 given the two log-likelihood ratios.
pub fn stage_likelihood_behavior<T: Real>(
    profile: &AppProfile,
    log_lambda_requested: T,
    log_lambda_api_related: T,
    params: &DetectorParams<T>,
) -> bool {
    let log_t = params.threshold_likelihood.ln();
    let likely = params
        .channel_op
        .apply(log_lambda_requested > log_t, log_lambda_api_related > log_t);
    let behaves = profile.sends_sms || profile.sensitive_count >= params.sensitive_threshold;
    params.behavior_op.apply(likely, behaves)
}

pub fn detect<T: Real>(
    profile: &AppProfile,
    bl: &SerialBlacklist,
    model: &LikelihoodModel,
    params: &DetectorParams<T>,
) -> Result<Verdict<T>, DetectError> {
    params.validate()?;
    if profile.cfg_fingerprint != model.cfg_fingerprint {
        return Err(DetectError::ConfigMismatch(format!(
            "profile {} and the model were built from different configs",
            profile.sha256
        )));
    }
    let log_req =
        model.log_likelihood_ratio::<T>(&profile.requested_critical, Channel::Requested)?;
    let log_api =
        model.log_likelihood_ratio::<T>(&profile.api_related_critical, Channel::ApiRelated)?;

    let mut reasons = Vec::new();
    let mut stage_trace = Vec::new();
    for stage in Reason::STAGES {
        let fired = match stage {
            Reason::Blacklist => stage_blacklist(profile, bl),
            Reason::RootCommand => stage_root_command(profile),
            Reason::SmsConcealment => stage_sms_concealment(profile),
            Reason::LikelihoodBehavior => {
                stage_likelihood_behavior(profile, log_req, log_api, params)
            }
        };
        stage_trace.push(StageOutcome { stage, fired });
        if fired {
            reasons.push(stage);
            if params.short_circuit {
                break;
            }
        }
    }

    Ok(Verdict {
        decision: if reasons.is_empty() {
            Decision::Benign
        } else {
            Decision::Malicious
        },
        reasons,
        lambda_requested: log_req.exp(),
        lambda_api_related: log_api.exp(),
        log_lambda_requested: log_req,
        log_lambda_api_related: log_api,
        matched_commands: profile.commands.clone(),
        stage_trace,
    })
}

/// Element-wise [`detect`] on the rayon pool; output order matches input.
pub fn detect_batch<T: Real>(
    profiles: &[AppProfile],
    bl: &SerialBlacklist,
    model: &LikelihoodModel,
    params: &DetectorParams<T>,
) -> Vec<(String, Result<Verdict<T>, DetectError>)> {
    profiles
        .par_iter()
        .map(|p| (p.sha256.clone(), detect(p, bl, model, params)))
        .collect()
}

/// One line of the verdict report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub sha256: String,
    pub decision: Decision,
    pub reasons: Vec<Reason>,
    pub lambda_requested: f64,
    pub lambda_api_related: f64,
    pub matched_commands: BTreeSet<String>,
    pub stage_trace: Vec<StageOutcome>,
}

impl VerdictRecord {
    pub fn new<T: Real>(sha256: impl Into<String>, v: &Verdict<T>) -> Self {
        Self {
            sha256: sha256.into(),
            decision: v.decision,
            reasons: v.reasons.clone(),
            lambda_requested: v.lambda_requested.to_f64().unwrap_or(f64::NAN),
            lambda_api_related: v.lambda_api_related.to_f64().unwrap_or(f64::NAN),
            matched_commands: v.matched_commands.clone(),
            stage_trace: v.stage_trace.clone(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}
