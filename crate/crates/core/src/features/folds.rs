use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureError};

/// Situation-partitioned cross-validation plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Sorted test situation ids of each fold.
    pub test_sets: Vec<Vec<usize>>,
}

/// Shuffles the dataset's situation ids with `seed` and deals them
/// round-robin into `k` test sets.
pub fn plan_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, FeatureError> {
    plan_folds_for_ids(&dataset.situation_ids(), k, seed)
}

pub fn plan_folds_for_ids(ids: &[usize], k: usize, seed: u64) -> Result<FoldPlan, FeatureError> {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if k == 0 || ids.len() < k {
        return Err(FeatureError::TooFewSituations {
            k,
            found: ids.len(),
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_sets = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        test_sets[i % k].push(id);
    }
    for s in &mut test_sets {
        s.sort_unstable();
    }
    Ok(FoldPlan { k, seed, test_sets })
}

impl FoldPlan {
    fn fold_map(&self) -> HashMap<usize, usize> {
        self.test_sets
            .iter()
            .enumerate()
            .flat_map(|(f, ids)| ids.iter().map(move |&id| (id, f)))
            .collect()
    }

    pub fn fold_of(&self, situation_id: usize) -> Option<usize> {
        self.test_sets
            .iter()
            .position(|s| s.binary_search(&situation_id).is_ok())
    }

    /// Train and test example indices of `fold`.
    pub fn split(&self, dataset: &Dataset, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let folds = self.fold_map();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, e) in dataset.examples().iter().enumerate() {
            if folds.get(&e.situation_id) == Some(&fold) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    /// Checks that the plan partitions exactly the dataset's situations.
    pub fn covers(&self, dataset: &Dataset) -> bool {
        let mut all: Vec<usize> = self.test_sets.concat();
        all.sort_unstable();
        let n = all.len();
        all.dedup();
        n == all.len() && all == dataset.situation_ids()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn hundred_twenty_situations_ten_folds() {
        let ids: Vec<usize> = (0..120).collect();
        let plan = plan_folds_for_ids(&ids, 10, 7).unwrap();
        assert!(plan.test_sets.iter().all(|s| s.len() == 12));
        let union: BTreeSet<usize> = plan.test_sets.iter().flatten().copied().collect();
        assert_eq!(union.len(), 120);
        assert_eq!(plan, plan_folds_for_ids(&ids, 10, 7).unwrap());
        assert_ne!(plan, plan_folds_for_ids(&ids, 10, 8).unwrap());
    }

    #[test]
    fn too_few_situations() {
        assert_eq!(
            plan_folds_for_ids(&[1, 2, 2, 3], 4, 0),
            Err(FeatureError::TooFewSituations { k: 4, found: 3 })
        );
    }

    proptest! {
        #[test]
        fn partition(n in 1usize..200, k in 1usize..20, seed: u64) {
            prop_assume!(n >= k);
            let ids: Vec<usize> = (0..n).map(|i| i * 3).collect();
            let plan = plan_folds_for_ids(&ids, k, seed).unwrap();
            let mut seen = BTreeSet::new();
            for s in &plan.test_sets {
                prop_assert!(s.len() == n / k || s.len() == n / k + 1);
                for id in s { prop_assert!(seen.insert(*id)); }
            }
            prop_assert_eq!(seen.into_iter().collect::<Vec<_>>(), ids);
        }
    }
}
