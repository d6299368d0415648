//! A malware-only corpus with a fixed serial/family histogram.
//!
//! 620 author serials plus two public test keys sign 4,554 samples. Sample
//! counts are skewed so that five serials sign half of the corpus and 24
//! serials sign 70% of it.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{AppProfile, FeatureConfig, Label};
use crate::ingest::sha256_hex;
use crate::serial::SerialNumber;

/// `(distinct families, serials)`; the last row stands for "5 or more".
pub const TABLE3_HISTOGRAM: [(usize, usize); 5] = [(1, 484), (2, 107), (3, 13), (4, 12), (5, 4)];

const FIVE_PLUS_FAMILIES: [usize; 4] = [5, 7, 9, 11];
const TEST_KEY_FAMILIES: [usize; 2] = [6, 4];
const N_FAMILIES: usize = 49;
const TOTAL_SAMPLES: usize = 4554;
const TOP5_SAMPLES: usize = 2277;
const TOP24_SAMPLES: usize = 3188;

#[derive(Debug, Clone, PartialEq)]
pub struct Table3Corpus {
    pub profiles: Vec<AppProfile>,
    /// Author serials used by two or more families.
    pub multi_family: BTreeSet<SerialNumber>,
    pub test_keys: BTreeSet<SerialNumber>,
    /// Distinct families per serial.
    pub families_per_serial: BTreeMap<SerialNumber, usize>,
}

struct Plan {
    serial: SerialNumber,
    families: usize,
    samples: usize,
}

/// Spreads `total` samples over `plans`, each getting at least its family count.
fn spread(plans: &mut [Plan], total: usize) {
    let floor: usize = plans.iter().map(|p| p.families).sum();
    assert!(floor <= total, "sample budget below the family minimum");
    for p in plans.iter_mut() {
        p.samples = p.families;
    }
    let extra = total - floor;
    let n = plans.len();
    for (i, p) in plans.iter_mut().enumerate() {
        p.samples += extra / n + usize::from(i < extra % n);
    }
}

pub fn gen_table3_corpus(cfg: &FeatureConfig, seed: u64) -> Table3Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken: BTreeSet<SerialNumber> = cfg.test_key_serials.clone();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let mut bytes: [u8; 8] = rng.random();
        bytes[0] |= 0x10;
        let s = SerialNumber::from_bytes(&bytes);
        if taken.insert(s.clone()) {
            return s;
        }
    };

    let plan = |serial, families| Plan {
        serial,
        families,
        samples: 0,
    };
    let test_keys: Vec<SerialNumber> = cfg.test_key_serials.iter().take(2).cloned().collect();

    let mut top5: Vec<Plan> = FIVE_PLUS_FAMILIES
        .iter()
        .map(|&f| plan(fresh(&mut rng), f))
        .collect();
    let mut next19: Vec<Plan> = Vec::new();
    let mut rest: Vec<Plan> = Vec::new();
    for (i, key) in test_keys.iter().enumerate() {
        let p = plan(key.clone(), TEST_KEY_FAMILIES[i]);
        if i == 0 {
            top5.push(p)
        } else {
            next19.push(p)
        }
    }
    // the top 24: the 5+ serials, both test keys, every 4-family serial and
    // enough 3-family serials to make up the count
    let mut three_family_slots = 19 - next19.len() - TABLE3_HISTOGRAM[3].1;
    for &(families, count) in &TABLE3_HISTOGRAM[..4] {
        for _ in 0..count {
            let p = plan(fresh(&mut rng), families);
            if families == 4 {
                next19.push(p);
            } else if families == 3 && three_family_slots > 0 {
                three_family_slots -= 1;
                next19.push(p);
            } else {
                rest.push(p);
            }
        }
    }
    spread(&mut top5, TOP5_SAMPLES);
    spread(&mut next19, TOP24_SAMPLES - TOP5_SAMPLES);
    spread(&mut rest, TOTAL_SAMPLES - TOP24_SAMPLES);

    let families: Vec<String> = (0..N_FAMILIES).map(|f| format!("family-{f:02}")).collect();
    let mut profiles = Vec::with_capacity(TOTAL_SAMPLES);
    let mut multi_family = BTreeSet::new();
    let mut families_per_serial = BTreeMap::new();
    for p in top5.iter().chain(&next19).chain(&rest) {
        let chosen: Vec<&String> = families.choose_multiple(&mut rng, p.families).collect();
        for i in 0..p.samples {
            let sha = sha256_hex(format!("table3/{seed}/{}", profiles.len()).as_bytes());
            let label = Label::malicious(chosen[i % chosen.len()].as_str());
            profiles.push(AppProfile::bare(sha, vec![p.serial.clone()], cfg).with_label(label));
        }
        if p.families >= 2 && !cfg.test_key_serials.contains(&p.serial) {
            multi_family.insert(p.serial.clone());
        }
        families_per_serial.insert(p.serial.clone(), p.families);
    }
    profiles.shuffle(&mut rng);

    Table3Corpus {
        profiles,
        multi_family,
        test_keys: test_keys.into_iter().collect(),
        families_per_serial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape() {
        let cfg = FeatureConfig::default_config();
        let c = gen_table3_corpus(&cfg, 0);
        assert_eq!(c.profiles.len(), TOTAL_SAMPLES);
        assert_eq!(c.families_per_serial.len(), 622);
        assert_eq!(c.multi_family.len(), 136);

        let mut per_serial: BTreeMap<&SerialNumber, usize> = BTreeMap::new();
        for p in &c.profiles {
            *per_serial.entry(&p.serials[0]).or_default() += 1;
        }
        let mut counts: Vec<usize> = per_serial.values().copied().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(counts[..5].iter().sum::<usize>(), TOP5_SAMPLES);
        assert_eq!(counts[..24].iter().sum::<usize>(), TOP24_SAMPLES);
    }
}
