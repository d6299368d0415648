use std::collections::BTreeSet;

use proptest::prelude::*;
use sigtrack::classifier::{similarity_score, GroupSignature};
use sigtrack::evalkit::kfold_split;
use sigtrack::Weights;

fn signature() -> impl Strategy<Value = GroupSignature> {
    (
        "[a-e]{0,12}",
        proptest::collection::btree_set("(su|busybox|chmod|mount)", 0..4),
        "[A-H]{0,6}",
        "[A-H]{0,6}",
    )
        .prop_map(|(api, cmds, req, rel)| GroupSignature {
            api_string: api,
            commands: cmds,
            requested_perm_string: req,
            api_related_perm_string: rel,
            source_sha256: String::new(),
        })
}

proptest! {
    #[test]
    fn similarity_is_bounded_symmetric_and_reflexive(a in signature(), b in signature()) {
        let w = Weights::default();
        let ab = similarity_score(&a, &b, &w).unwrap();
        let ba = similarity_score(&b, &a, &w).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((similarity_score(&a, &a, &w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn folds_partition_the_corpus(n in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let sizes: BTreeSet<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(folds.clone(), kfold_split(n, k, seed).unwrap());
    }
}
