//! The three signature similarities, each in `[0, 1]`.
//!
//! Both-empty inputs score 1 for every metric: two samples that share the
//! absence of a feature are identical on it.

use std::collections::BTreeSet;

use crate::num::{ratio, Real};

/// Needleman-Wunsch scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentScoring {
    pub matched: i64,
    pub mismatch: i64,
    pub gap: i64,
}

impl Default for AlignmentScoring {
    /// match 1, mismatch 0, gap 0: the optimal score is the length of the
    /// longest common subsequence.
    fn default() -> Self {
        Self {
            matched: 1,
            mismatch: 0,
            gap: 0,
        }
    }
}

/// Optimal global alignment score of `a` and `b`.
pub fn needleman_wunsch<S: PartialEq>(a: &[S], b: &[S], scoring: AlignmentScoring) -> i64 {
    let mut prev: Vec<i64> = (0..=b.len() as i64).map(|j| j * scoring.gap).collect();
    let mut cur = vec![0i64; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = (i as i64 + 1) * scoring.gap;
        for (j, y) in b.iter().enumerate() {
            let diag = prev[j]
                + if x == y {
                    scoring.matched
                } else {
                    scoring.mismatch
                };
            cur[j + 1] = diag
                .max(prev[j + 1] + scoring.gap)
                .max(cur[j] + scoring.gap);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Alignment similarity of two API symbol strings: the default-scored
/// alignment divided by the longer length.
pub fn sim_api<T: Real>(a: &str, b: &str) -> T {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let score = needleman_wunsch(&a, &b, AlignmentScoring::default());
    ratio(score as usize, a.len().max(b.len()), T::one())
}

/// Jaccard coefficient.
pub fn sim_cmd<T: Real>(a: &BTreeSet<String>, b: &BTreeSet<String>) -> T {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    ratio(inter, union, T::one())
}

pub fn levenshtein<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein / max_len` on sorted permission strings.
pub fn sim_perm_string<T: Real>(a: &str, b: &str) -> T {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return T::one();
    }
    T::one() - ratio(levenshtein(&a, &b), longest, T::zero())
}

/// Mean of the requested and API-related permission similarities.
pub fn sim_perm<T: Real>(requested: (&str, &str), api_related: (&str, &str)) -> T {
    let r = sim_perm_string::<T>(requested.0, requested.1);
    let a = sim_perm_string::<T>(api_related.0, api_related.1);
    (r + a) / T::from_count(2)
}
