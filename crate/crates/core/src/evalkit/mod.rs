//! Cross-validation, confusion matrices and synthetic corpora.

mod synth;
mod table3;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blacklist::{build_blacklist, BlacklistError};
use crate::classifier::{classify_stream, group_accuracy, ClassifyError, GroupAccuracy, Weights};
use crate::detector::{detect, Decision, DetectError, DetectorParams, Reason};
use crate::features::{AppProfile, FeatureConfig, Label};
use crate::likelihood::{train, LikelihoodError};
use crate::num::Real;

pub use synth::{
    gen_synthetic_corpus, requested_rates, FamilyTruth, GroundTruth, SampleTruth, SynthMode,
    SynthSpec, SyntheticCorpus, SyntheticSample, FAMILY_NAMES, TABLE2,
};
pub use table3::{gen_table3_corpus, Table3Corpus, TABLE3_HISTOGRAM};

pub const CV_REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus of {n} entries cannot be split into {k} folds")]
    CorpusTooSmall { n: usize, k: usize },
    #[error("fold count must be at least 2 (got {0})")]
    BadFoldCount(usize),
    #[error("training split for fold {fold} has no {missing} samples")]
    FoldDegenerate { fold: usize, missing: &'static str },
    #[error("bad corpus spec: {0}")]
    BadSpec(String),
    #[error("duplicate sample {0}")]
    DuplicateSample(String),
    #[error("labels file line {line}: {reason}")]
    LabelFormat { line: usize, reason: String },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Blacklist(#[from] BlacklistError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Config(#[from] crate::features::ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Profiles with ground-truth labels. Every profile's `label` is set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCorpus {
    pub entries: Vec<AppProfile>,
    pub folds: Option<Vec<Vec<usize>>>,
}

impl LabeledCorpus {
    pub fn new(pairs: impl IntoIterator<Item = (AppProfile, Label)>) -> Result<Self, EvalError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut entries = Vec::new();
        for (p, label) in pairs {
            if !seen.insert(p.sha256.clone()) {
                return Err(EvalError::DuplicateSample(p.sha256));
            }
            entries.push(p.with_label(label));
        }
        Ok(Self {
            entries,
            folds: None,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label(&self, i: usize) -> &Label {
        self.entries[i]
            .label
            .as_ref()
            .expect("corpus entries are labeled")
    }

    pub fn split(mut self, k: usize, seed: u64) -> Result<Self, EvalError> {
        self.folds = Some(kfold_split(self.entries.len(), k, seed)?);
        Ok(self)
    }
}

/// Parses a labels index: `sha256<TAB>label` per line, blank lines ignored.
pub fn parse_labels(text: &str) -> Result<Vec<(String, Label)>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::LabelFormat {
            line: i + 1,
            reason,
        };
        let (sha, label) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected sha256<TAB>label".into()))?;
        let label = label.parse::<Label>().map_err(bad)?;
        out.push((sha.trim().to_ascii_lowercase(), label));
    }
    Ok(out)
}

pub fn labels_to_tsv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a Label)>) -> String {
    let mut out = String::new();
    for (sha, label) in pairs {
        let _ = writeln!(out, "{sha}\t{label}");
    }
    out
}

/// Malicious is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, actual_malicious: bool, predicted_malicious: bool) {
        match (actual_malicious, predicted_malicious) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn actual_malicious(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn actual_benign(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fn_: self.fn_ + other.fn_,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
        }
    }

    /// Two-by-two layout: actual class by row, predicted class by column.
    pub fn render(&self) -> String {
        let cell = |n: u64, tag: &str| format!("{n} ({tag})");
        let rows = [
            ("Malicious", cell(self.tp, "TP"), cell(self.fn_, "FN")),
            ("Benign", cell(self.fp, "FP"), cell(self.tn, "TN")),
        ];
        let w = rows
            .iter()
            .flat_map(|r| [r.1.len(), r.2.len()])
            .max()
            .unwrap_or(0)
            .max("Malicious".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<24}Predicted class", "");
        let _ = writeln!(out, "{:<24}{:<w$}  Benign", "", "Malicious");
        for (i, (name, a, b)) in rows.iter().enumerate() {
            let head = if i == 0 { "Actual class" } else { "" };
            let _ = writeln!(out, "{head:<14}{name:<10}{a:<w$}  {b}");
        }
        out
    }
}

/// Seeded shuffle, then round-robin into `k` folds. Each fold is sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::BadFoldCount(k));
    }
    if n < k {
        return Err(EvalError::CorpusTooSmall { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvParams<T> {
    pub detector: DetectorParams<T>,
    pub t_s: T,
    pub weights: Weights<T>,
    /// Evaluate folds on the rayon pool.
    pub parallel: bool,
}

impl<T: Real> Default for CvParams<T> {
    fn default() -> Self {
        Self {
            detector: DetectorParams::default(),
            t_s: T::from_f64_lossy(0.7),
            weights: Weights::default(),
            parallel: true,
        }
    }
}

/// One held-out sample's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLogEntry {
    pub fold: usize,
    pub sha256: String,
    pub label: Label,
    pub decision: Decision,
    pub reasons: Vec<Reason>,
    /// Group joined by a flagged sample; ids restart in each fold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u32>,
    /// Whether the group's majority family matches this sample's category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classified_correctly: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub blacklist_size: usize,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub groups: usize,
    pub classification: GroupAccuracy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub format_version: u32,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    /// Sum of the per-fold matrices.
    pub confusion: ConfusionMatrix,
    pub mean_accuracy: f64,
    /// Classification accuracy per category, pooled over folds.
    pub classification: BTreeMap<String, CategoryAccuracy>,
    pub classification_accuracy: f64,
    /// Mean of the malicious families' accuracies.
    pub mean_family_accuracy: f64,
    pub verdicts: Vec<VerdictLogEntry>,
}

fn run_fold<T: Real>(
    corpus: &LabeledCorpus,
    folds: &[Vec<usize>],
    fold: usize,
    cfg: &FeatureConfig,
    params: &CvParams<T>,
) -> Result<(FoldReport, Vec<VerdictLogEntry>), EvalError> {
    let held_out = &folds[fold];
    let training: Vec<AppProfile> = folds
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != fold)
        .flat_map(|(_, f)| f.iter().map(|&i| corpus.entries[i].clone()))
        .collect();
    let malicious: Vec<AppProfile> = training
        .iter()
        .filter(|p| p.label.as_ref().is_some_and(Label::is_malicious))
        .cloned()
        .collect();
    if malicious.is_empty() {
        return Err(EvalError::FoldDegenerate {
            fold,
            missing: "malicious",
        });
    }
    if malicious.len() == training.len() {
        return Err(EvalError::FoldDegenerate {
            fold,
            missing: "benign",
        });
    }

    let model = train(&training, cfg)?;
    let blacklist = build_blacklist(&malicious, cfg)?;

    let mut confusion = ConfusionMatrix::default();
    let mut log = Vec::with_capacity(held_out.len());
    let mut flagged = Vec::new();
    for &i in held_out {
        let p = &corpus.entries[i];
        let label = corpus.label(i).clone();
        let v = detect(p, &blacklist, &model, &params.detector)?;
        confusion.record(label.is_malicious(), v.is_malicious());
        if v.is_malicious() {
            flagged.push(p.clone());
        }
        log.push(VerdictLogEntry {
            fold,
            sha256: p.sha256.clone(),
            label,
            decision: v.decision,
            reasons: v.reasons,
            group: None,
            classified_correctly: None,
        });
    }

    let gs = classify_stream(&flagged, cfg, params.t_s, params.weights)?;
    let categories: BTreeMap<String, String> = flagged
        .iter()
        .map(|p| {
            let label = p.label.as_ref().expect("labeled");
            (p.sha256.clone(), label.category().to_string())
        })
        .collect();
    let classification = group_accuracy(&gs, &categories)?;
    let predicted: BTreeMap<u32, &str> = classification
        .groups
        .iter()
        .map(|g| (g.id, g.predicted.as_str()))
        .collect();
    let assignment = gs.assignment();
    for entry in &mut log {
        if let Some(&id) = assignment.get(entry.sha256.as_str()) {
            entry.group = Some(id);
            entry.classified_correctly = Some(predicted[&id] == entry.label.category());
        }
    }

    Ok((
        FoldReport {
            fold,
            train_size: training.len(),
            test_size: held_out.len(),
            blacklist_size: blacklist.len(),
            confusion,
            accuracy: confusion.accuracy(),
            groups: gs.groups.len(),
            classification,
        },
        log,
    ))
}

/// `k`-fold cross-validation; the model and blacklist are rebuilt from each
/// training split.
pub fn run_cv<T: Real>(
    corpus: &LabeledCorpus,
    cfg: &FeatureConfig,
    params: &CvParams<T>,
    k: usize,
    seed: u64,
) -> Result<CvReport, EvalError> {
    params.detector.validate()?;
    params.weights.validate()?;
    let folds = match &corpus.folds {
        Some(f) if f.len() == k => f.clone(),
        _ => kfold_split(corpus.len(), k, seed)?,
    };
    let results: Vec<Result<(FoldReport, Vec<VerdictLogEntry>), EvalError>> = if params.parallel {
        (0..k)
            .into_par_iter()
            .map(|f| run_fold(corpus, &folds, f, cfg, params))
            .collect()
    } else {
        (0..k)
            .map(|f| run_fold(corpus, &folds, f, cfg, params))
            .collect()
    };

    let mut fold_reports = Vec::with_capacity(k);
    let mut verdicts = Vec::with_capacity(corpus.len());
    for r in results {
        let (report, log) = r?;
        fold_reports.push(report);
        verdicts.extend(log);
    }

    let confusion = fold_reports
        .iter()
        .fold(ConfusionMatrix::default(), |acc, f| acc.merge(&f.confusion));
    let mean_accuracy = fold_reports.iter().map(|f| f.accuracy).sum::<f64>() / k as f64;

    let mut classification: BTreeMap<String, CategoryAccuracy> = BTreeMap::new();
    for f in &fold_reports {
        for (name, fam) in &f.classification.families {
            let c = classification.entry(name.clone()).or_default();
            c.samples += fam.samples;
            c.correct += fam.correct;
        }
    }
    for c in classification.values_mut() {
        c.accuracy = c.correct as f64 / c.samples as f64;
    }
    let samples: usize = classification.values().map(|c| c.samples).sum();
    let correct: usize = classification.values().map(|c| c.correct).sum();
    let family_accs: Vec<f64> = classification
        .iter()
        .filter(|(name, _)| name.as_str() != Label::Benign.category())
        .map(|(_, c)| c.accuracy)
        .collect();

    Ok(CvReport {
        format_version: CV_REPORT_FORMAT_VERSION,
        k,
        seed,
        folds: fold_reports,
        confusion,
        mean_accuracy,
        classification,
        classification_accuracy: if samples == 0 {
            0.0
        } else {
            correct as f64 / samples as f64
        },
        mean_family_accuracy: if family_accs.is_empty() {
            0.0
        } else {
            family_accs.iter().sum::<f64>() / family_accs.len() as f64
        },
        verdicts,
    })
}

impl CvReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}-fold cross-validation (seed {})", self.k, self.seed);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Fold  Test  Blacklist  Groups      TP      FN      FP      TN  Accuracy"
        );
        for f in &self.folds {
            let c = &f.confusion;
            let _ = writeln!(
                out,
                "{:>4}  {:>4}  {:>9}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>8.4}",
                f.fold + 1,
                f.test_size,
                f.blacklist_size,
                f.groups,
                c.tp,
                c.fn_,
                c.fp,
                c.tn,
                f.accuracy
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Detection");
        out.push_str(&self.confusion.render());
        let _ = writeln!(out, "Mean accuracy: {:.4}", self.mean_accuracy);
        let _ = writeln!(out);
        let _ = writeln!(out, "Classification");
        let width = self
            .classification
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max("Category".len());
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>8}",
            "Category", "Samples", "Accuracy"
        );
        for (name, c) in &self.classification {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>8.4}",
                name, c.samples, c.accuracy
            );
        }
        let total: usize = self.classification.values().map(|c| c.samples).sum();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>8.4}",
            "Total", total, self.classification_accuracy
        );
        let _ = writeln!(
            out,
            "Mean family accuracy: {:.4}",
            self.mean_family_accuracy
        );
        out
    }
}
