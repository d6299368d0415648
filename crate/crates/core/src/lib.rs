//! Static Android malware detection and family grouping.
//!
//! The pipeline runs in four steps:
//!
//! 1. [`ingest`] reads an APK into a [`RawPackage`].
//! 2. [`features`] reduces the package to an [`AppProfile`].
//! 3. [`detector`] checks the profile against a certificate-serial
//!    [`SerialBlacklist`], root commands, SMS concealment and a Naive Bayes
//!    [`LikelihoodModel`].
//! 4. [`classifier`] groups the flagged samples by signature similarity.
//!
//! [`evalkit`] provides cross-validation and synthetic corpora.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The aliases below
//! fix it to `f64`; the `*32` variants use `f32`.

pub mod blacklist;
pub mod classifier;
pub mod detector;
pub mod evalkit;
pub mod features;
pub mod ingest;
pub mod likelihood;
pub mod num;
pub mod serial;

pub use blacklist::{build_blacklist, SerialBlacklist};
pub use classifier::{classify_stream, group_accuracy, GroupSignature};
pub use detector::{detect, detect_batch, Decision, Reason};
pub use features::{extract_profile, AppProfile, FeatureConfig, Label, PermissionVector};
pub use ingest::{parse_apk, IngestError, RawPackage};
pub use likelihood::{train, LikelihoodModel};
pub use num::Real;
pub use serial::SerialNumber;

pub type Verdict = detector::Verdict<f64>;
pub type DetectorParams = detector::DetectorParams<f64>;
pub type Weights = classifier::Weights<f64>;
pub type GroupSet = classifier::GroupSet<f64>;
pub type LikelihoodRatio = likelihood::LikelihoodRatio<f64>;

pub type Verdict32 = detector::Verdict<f32>;
pub type DetectorParams32 = detector::DetectorParams<f32>;
pub type Weights32 = classifier::Weights<f32>;
pub type GroupSet32 = classifier::GroupSet<f32>;
