//! Organ-stratified, WSI-level train/val/test splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{PatchPairRecord, Subset};
use crate::error::DataError;

/// WSI id → subset.
pub type SplitAssignment = BTreeMap<String, Subset>;

/// Largest-remainder apportionment of `n` items; ties go to the earlier subset.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

fn check_ratios(ratios: [f64; 3]) -> Result<(), DataError> {
    let ok = ratios.iter().all(|r| r.is_finite() && *r >= 0.0)
        && (ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(DataError::BadRatios(ratios))
    }
}

/// Assigns every WSI to a subset.
///
/// Organs are processed in sorted order and WSIs sorted within each organ
/// before a seeded shuffle, so the result depends only on the set of inputs
/// and the seed. A WSI listed under several organs keeps its first organ.
pub fn split_wsis(
    wsis: &[(String, String)],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, DataError> {
    check_ratios(ratios)?;
    let mut first_organ: BTreeMap<&str, &str> = BTreeMap::new();
    for (wsi, organ) in wsis {
        first_organ.entry(wsi.as_str()).or_insert(organ.as_str());
    }
    let mut by_organ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (wsi, organ) in first_organ {
        by_organ.entry(organ).or_default().push(wsi);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitAssignment::new();
    for (_, mut ids) in by_organ {
        ids.shuffle(&mut rng);
        let sizes = split_sizes(ids.len(), ratios);
        let mut it = ids.into_iter();
        for (subset, n) in Subset::ALL.into_iter().zip(sizes) {
            for wsi in it.by_ref().take(n) {
                out.insert(wsi.to_string(), subset);
            }
        }
    }
    Ok(out)
}

/// Rewrites each record's subset from its WSI's assignment. Records whose WSI
/// is missing from the assignment are returned by pair id.
pub fn apply_split(records: &mut [PatchPairRecord], assignment: &SplitAssignment) -> Vec<String> {
    let mut missing = Vec::new();
    for r in records {
        match assignment.get(&r.wsi_id) {
            Some(&s) => r.subset = s,
            None => missing.push(r.pair_id.clone()),
        }
    }
    missing
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wsis(n: usize, organ: &str) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("{organ}-{i:03}"), organ.to_string())).collect()
    }

    fn counts(a: &SplitAssignment) -> [usize; 3] {
        let mut c = [0; 3];
        for s in a.values() {
            c[*s as usize] += 1;
        }
        c
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(split_sizes(10, [0.6, 0.2, 0.2]), [6, 2, 2]);
        assert_eq!(split_sizes(5, [0.6, 0.2, 0.2]), [3, 1, 1]);
        assert_eq!(split_sizes(7, [0.6, 0.2, 0.2]), [4, 2, 1]);
        assert_eq!(split_sizes(0, [0.6, 0.2, 0.2]), [0, 0, 0]);
    }

    #[test]
    fn single_organ_sizes() {
        assert_eq!(counts(&split_wsis(&wsis(10, "a"), [0.6, 0.2, 0.2], 1).unwrap()), [6, 2, 2]);
        assert_eq!(counts(&split_wsis(&wsis(5, "a"), [0.6, 0.2, 0.2], 1).unwrap()), [3, 1, 1]);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let mut input = wsis(12, "a");
        input.extend(wsis(7, "b"));
        let a = split_wsis(&input, [0.6, 0.2, 0.2], 7).unwrap();
        input.reverse();
        let b = split_wsis(&input, [0.6, 0.2, 0.2], 7).unwrap();
        assert_eq!(a, b);
        let c = split_wsis(&input, [0.6, 0.2, 0.2], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_ratios() {
        assert!(split_wsis(&wsis(3, "a"), [0.5, 0.2, 0.2], 0).is_err());
        assert!(split_wsis(&wsis(3, "a"), [1.2, -0.1, -0.1], 0).is_err());
    }

    #[test]
    fn apply_reports_missing_wsis() {
        let mut recs = vec![
            super::super::tests::record("p1", "w1", "a", Subset::Train),
            super::super::tests::record("p2", "w9", "a", Subset::Train),
        ];
        let mut assign = SplitAssignment::new();
        assign.insert("w1".into(), Subset::Test);
        let missing = apply_split(&mut recs, &assign);
        assert_eq!(recs[0].subset, Subset::Test);
        assert_eq!(missing, vec!["p2".to_string()]);
    }
}
