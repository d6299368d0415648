//! Family grouping of detected malware by signature similarity.
//!
//! Samples are processed in order. Each sample is scored against the frozen
//! signature of every existing group; it joins the best group when the score
//! reaches `T_S` and founds a new group otherwise.

pub mod similarity;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{AppProfile, FeatureConfig, PermissionVector};
use crate::num::Real;

pub use similarity::{
    levenshtein, needleman_wunsch, sim_api, sim_cmd, sim_perm, sim_perm_string, AlignmentScoring,
};

pub const GROUPSET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("weights must be non-negative and sum to 1 (got {api}, {cmd}, {perm})")]
    BadWeights { api: f64, cmd: f64, perm: f64 },
    #[error("threshold T_S must lie in [0, 1] (got {0})")]
    BadThreshold(f64),
    #[error("group member {0} has no label")]
    MissingLabel(String),
    #[error("malformed group set: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSignature {
    pub api_string: String,
    pub commands: BTreeSet<String>,
    pub requested_perm_string: String,
    pub api_related_perm_string: String,
    pub source_sha256: String,
}

fn perm_string(vector: &PermissionVector, cfg: &FeatureConfig) -> String {
    let mut symbols: Vec<char> = vector.ones().map(|j| cfg.permission_symbol(j)).collect();
    symbols.sort_unstable();
    symbols.dedup();
    symbols.into_iter().collect()
}

impl GroupSignature {
    pub fn from_profile(profile: &AppProfile, cfg: &FeatureConfig) -> Self {
        Self {
            api_string: profile.api_string.clone(),
            commands: profile.commands.clone(),
            requested_perm_string: perm_string(&profile.requested_critical, cfg),
            api_related_perm_string: perm_string(&profile.api_related_critical, cfg),
            source_sha256: profile.sha256.clone(),
        }
    }
}

/// `(w_api, w_cmd, w_perm)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights<T> {
    pub api: T,
    pub cmd: T,
    pub perm: T,
}

impl<T: Real> Default for Weights<T> {
    fn default() -> Self {
        let third = T::one() / T::from_count(3);
        Self {
            api: third,
            cmd: third,
            perm: third,
        }
    }
}

impl<T: Real> Weights<T> {
    pub fn new(api: T, cmd: T, perm: T) -> Result<Self, ClassifyError> {
        let w = Self { api, cmd, perm };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        let parts = [self.api, self.cmd, self.perm];
        let sum = self.api + self.cmd + self.perm;
        let ok = parts.iter().all(|w| w.is_finite() && *w >= T::zero())
            && (sum - T::one()).abs() <= T::weight_tolerance();
        if ok {
            Ok(())
        } else {
            Err(ClassifyError::BadWeights {
                api: self.api.to_f64().unwrap_or(f64::NAN),
                cmd: self.cmd.to_f64().unwrap_or(f64::NAN),
                perm: self.perm.to_f64().unwrap_or(f64::NAN),
            })
        }
    }
}

/// The three component similarities `(S_api, S_cmd, S_perm)`.
pub fn component_similarities<T: Real>(a: &GroupSignature, b: &GroupSignature) -> [T; 3] {
    [
        sim_api(&a.api_string, &b.api_string),
        sim_cmd(&a.commands, &b.commands),
        sim_perm(
            (&a.requested_perm_string, &b.requested_perm_string),
            (&a.api_related_perm_string, &b.api_related_perm_string),
        ),
    ]
}

pub fn combine<T: Real>(s: [T; 3], w: &Weights<T>) -> T {
    w.api * s[0] + w.cmd * s[1] + w.perm * s[2]
}

pub fn similarity_score<T: Real>(
    a: &GroupSignature,
    b: &GroupSignature,
    w: &Weights<T>,
) -> Result<T, ClassifyError> {
    w.validate()?;
    Ok(combine(component_similarities(a, b), w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: u32,
    pub signature: GroupSignature,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSet<T> {
    pub format_version: u32,
    #[serde(rename = "T_S")]
    pub t_s: T,
    pub weights: Weights<T>,
    pub groups: Vec<Group>,
}

impl<T: Real> GroupSet<T> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("group set serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifyError> {
        let gs: Self =
            serde_json::from_str(text).map_err(|e| ClassifyError::Format(e.to_string()))?;
        if gs.format_version != GROUPSET_FORMAT_VERSION {
            return Err(ClassifyError::Format(format!(
                "unsupported format_version {}",
                gs.format_version
            )));
        }
        Ok(gs)
    }

    /// Group id of every member.
    pub fn assignment(&self) -> BTreeMap<&str, u32> {
        self.groups
            .iter()
            .flat_map(|g| g.members.iter().map(move |m| (m.as_str(), g.id)))
            .collect()
    }
}

/// Streaming threshold grouping over signatures in the given order.
pub fn classify_signatures<T: Real>(
    signatures: &[GroupSignature],
    t_s: T,
    w: Weights<T>,
) -> Result<GroupSet<T>, ClassifyError> {
    w.validate()?;
    if !(t_s >= T::zero() && t_s <= T::one()) {
        return Err(ClassifyError::BadThreshold(
            t_s.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let mut groups: Vec<Group> = Vec::new();
    for sig in signatures {
        let mut best: Option<(usize, T)> = None;
        for (i, g) in groups.iter().enumerate() {
            let ss = combine(component_similarities(&g.signature, sig), &w);
            // strict > keeps the earliest group on ties
            if best.is_none_or(|(_, b)| ss > b) {
                best = Some((i, ss));
            }
        }
        match best {
            Some((i, ss)) if ss >= t_s => groups[i].members.push(sig.source_sha256.clone()),
            _ => groups.push(Group {
                id: groups.len() as u32 + 1,
                signature: sig.clone(),
                members: vec![sig.source_sha256.clone()],
            }),
        }
    }
    Ok(GroupSet {
        format_version: GROUPSET_FORMAT_VERSION,
        t_s,
        weights: w,
        groups,
    })
}

pub fn classify_stream<T: Real>(
    samples: &[AppProfile],
    cfg: &FeatureConfig,
    t_s: T,
    w: Weights<T>,
) -> Result<GroupSet<T>, ClassifyError> {
    let sigs: Vec<GroupSignature> = samples
        .iter()
        .map(|p| GroupSignature::from_profile(p, cfg))
        .collect();
    classify_signatures(&sigs, t_s, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub id: u32,
    pub predicted: String,
    pub size: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyAccuracy {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub groups: Vec<GroupOutcome>,
    pub families: BTreeMap<String, FamilyAccuracy>,
    pub samples: usize,
    pub correct: usize,
    pub overall: f64,
}

/// Majority label of one group; ties go to the label of the earliest member.
fn majority<'a>(members: &[&'a str]) -> &'a str {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        *counts.entry(m).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    members
        .iter()
        .find(|m| counts[**m] == top)
        .copied()
        .unwrap_or("")
}

pub fn group_accuracy<T>(
    gs: &GroupSet<T>,
    labels: &BTreeMap<String, String>,
) -> Result<GroupAccuracy, ClassifyError> {
    let mut families: BTreeMap<String, FamilyAccuracy> = BTreeMap::new();
    let mut outcomes = Vec::with_capacity(gs.groups.len());
    for g in &gs.groups {
        let member_labels = g
            .members
            .iter()
            .map(|m| {
                labels
                    .get(m)
                    .map(String::as_str)
                    .ok_or_else(|| ClassifyError::MissingLabel(m.clone()))
            })
            .collect::<Result<Vec<&str>, _>>()?;
        let predicted = majority(&member_labels);
        let mut correct = 0;
        for label in &member_labels {
            let fam = families.entry(label.to_string()).or_default();
            fam.samples += 1;
            if *label == predicted {
                fam.correct += 1;
                correct += 1;
            }
        }
        outcomes.push(GroupOutcome {
            id: g.id,
            predicted: predicted.to_string(),
            size: g.members.len(),
            correct,
        });
    }
    for fam in families.values_mut() {
        fam.accuracy = fam.correct as f64 / fam.samples as f64;
    }
    let samples: usize = families.values().map(|f| f.samples).sum();
    let correct: usize = families.values().map(|f| f.correct).sum();
    Ok(GroupAccuracy {
        groups: outcomes,
        families,
        samples,
        correct,
        overall: if samples == 0 {
            1.0
        } else {
            correct as f64 / samples as f64
        },
    })
}

impl GroupAccuracy {
    /// Per-family table: category, sample count, accuracy.
    pub fn render_families(&self) -> String {
        let width = self
            .families
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max("Category".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>8}",
            "Category", "Samples", "Accuracy"
        );
        for (name, f) in &self.families {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>8.4}",
                name, f.samples, f.accuracy
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>8.4}",
            "Total", self.samples, self.overall
        );
        out
    }

    pub fn render_groups(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>5}  {:<24}  {:>5}  {:>7}",
            "Group", "Family", "Size", "Correct"
        );
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:>5}  {:<24}  {:>5}  {:>7}",
                g.id, g.predicted, g.size, g.correct
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(sha: &str, api: &str, cmds: &[&str], req: &str, rel: &str) -> GroupSignature {
        GroupSignature {
            api_string: api.into(),
            commands: cmds.iter().map(|s| s.to_string()).collect(),
            requested_perm_string: req.into(),
            api_related_perm_string: rel.into(),
            source_sha256: sha.into(),
        }
    }

    #[test]
    fn identical_signatures_score_one() {
        let a = sig("1", "abcab", &["su"], "ACF", "C");
        for w in [
            Weights::default(),
            Weights::new(1.0, 0.0, 0.0).unwrap(),
            Weights::new(0.2, 0.5, 0.3).unwrap(),
        ] {
            assert!((similarity_score(&a, &a, &w).unwrap() - 1.0f64).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_mean_example() {
        let w = Weights::<f64>::default();
        assert!((combine([1.0, 0.5, 0.7], &w) - 2.2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_reduce_to_api() {
        let a = sig("1", "abcd", &["su"], "A", "");
        let b = sig("2", "bd", &[], "B", "C");
        let w = Weights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(
            similarity_score(&a, &b, &w).unwrap(),
            sim_api::<f64>("abcd", "bd")
        );
    }

    #[test]
    fn bad_weights_rejected() {
        assert!(matches!(
            Weights::new(0.5, 0.5, 0.5),
            Err(ClassifyError::BadWeights { .. })
        ));
        assert!(matches!(
            Weights::new(1.5, -0.5, 0.0),
            Err(ClassifyError::BadWeights { .. })
        ));
        assert!(Weights::<f32>::new(0.3, 0.3, 0.4).is_ok());
    }

    #[test]
    fn three_sample_grouping() {
        // S(1,2): api 8/8 ... checked numerically below
        let s1 = sig("1", "abcdefgh", &["su", "sh"], "ABC", "AB");
        let s2 = sig("2", "abcdefg", &["su", "sh"], "ABC", "AB");
        let s3 = sig("3", "xyz", &["mount"], "QR", "");
        let w = Weights::<f64>::default();
        let s12 = similarity_score(&s1, &s2, &w).unwrap();
        let s13 = similarity_score(&s1, &s3, &w).unwrap();
        let s23 = similarity_score(&s2, &s3, &w).unwrap();
        assert!(s12 >= 0.9 && s13 < 0.7 && s23 < 0.7);
        let gs = classify_signatures(&[s1, s2, s3], 0.7, w).unwrap();
        let members: Vec<Vec<String>> = gs.groups.iter().map(|g| g.members.clone()).collect();
        assert_eq!(
            members,
            vec![vec!["1".to_string(), "2".into()], vec!["3".into()]]
        );
    }

    #[test]
    fn ties_go_to_earliest_group() {
        let a = sig("a", "ab", &[], "", "");
        let b = sig("b", "cd", &[], "", "");
        // equidistant from both founders
        let c = sig("c", "ac", &[], "", "");
        let w = Weights::new(1.0, 0.0, 0.0).unwrap();
        let gs = classify_signatures(&[a, b, c], 0.5, w).unwrap();
        assert_eq!(gs.groups.len(), 2);
        assert_eq!(gs.groups[0].members, vec!["a", "c"]);
    }

    #[test]
    fn signature_stays_with_founder() {
        let a = sig("a", "abcd", &[], "", "");
        let b = sig("b", "abce", &[], "", "");
        let w = Weights::new(1.0, 0.0, 0.0).unwrap();
        let gs = classify_signatures(&[a.clone(), b], 0.7, w).unwrap();
        assert_eq!(gs.groups.len(), 1);
        assert_eq!(gs.groups[0].signature, a);
    }

    #[test]
    fn threshold_is_inclusive() {
        let a = sig("a", "ab", &[], "", "");
        let b = sig("b", "ac", &[], "", "");
        let w = Weights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(
            classify_signatures(&[a.clone(), b.clone()], 0.5, w)
                .unwrap()
                .groups
                .len(),
            1
        );
        assert_eq!(
            classify_signatures(&[a, b], 0.51, w).unwrap().groups.len(),
            2
        );
    }

    fn labels(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    fn group_set(groups: &[&[&str]]) -> GroupSet<f64> {
        GroupSet {
            format_version: GROUPSET_FORMAT_VERSION,
            t_s: 0.7,
            weights: Weights::default(),
            groups: groups
                .iter()
                .enumerate()
                .map(|(i, m)| Group {
                    id: i as u32 + 1,
                    signature: sig(m[0], "", &[], "", ""),
                    members: m.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn majority_of_mixed_group() {
        let names: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let gs = group_set(&[&refs]);
        let mut lab = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            lab.insert(n.clone(), if i < 7 { "A" } else { "B" }.to_string());
        }
        let acc = group_accuracy(&gs, &lab).unwrap();
        assert_eq!(acc.groups[0].predicted, "A");
        assert_eq!(acc.families["A"].accuracy, 1.0);
        assert_eq!(acc.families["B"].accuracy, 0.0);
        assert!((acc.overall - 0.7).abs() < 1e-12);
    }

    #[test]
    fn split_family_still_accurate() {
        let gs = group_set(&[&["a", "b"], &["c"]]);
        let acc = group_accuracy(&gs, &labels(&[("a", "F"), ("b", "F"), ("c", "F")])).unwrap();
        assert_eq!(acc.families["F"].accuracy, 1.0);
    }

    #[test]
    fn tie_uses_earliest_member() {
        let gs = group_set(&[&["a", "b"]]);
        let acc = group_accuracy(&gs, &labels(&[("a", "Y"), ("b", "X")])).unwrap();
        assert_eq!(acc.groups[0].predicted, "Y");
    }

    #[test]
    fn missing_label_reported() {
        let gs = group_set(&[&["a", "b"]]);
        assert_eq!(
            group_accuracy(&gs, &labels(&[("a", "Y")])),
            Err(ClassifyError::MissingLabel("b".into()))
        );
    }

    #[test]
    fn json_round_trip() {
        let gs = group_set(&[&["a", "b"], &["c"]]);
        let text = gs.to_json();
        assert!(text.contains("\"T_S\""));
        assert_eq!(GroupSet::<f64>::from_json(&text).unwrap(), gs);
    }
}
