use std::collections::{BTreeMap, HashSet};

use crate::autodiff::Rng;

use super::types::{DatasetSplit, Labeled, RhythmClass};
use super::SignalIoError;

/// Stratified k-fold: each class is shuffled with a seeded stream and dealt
/// round-robin into `k` parts; fold `f` tests on every class's `f`-th part.
pub fn stratified_kfold<T: Labeled>(items: &[T], k: usize, seed: u64) -> Result<Vec<DatasetSplit>, SignalIoError> {
    if k < 2 {
        return Err(SignalIoError::InvalidFoldCount(k));
    }
    let mut by_class: BTreeMap<RhythmClass, Vec<&str>> = BTreeMap::new();
    for item in items {
        by_class.entry(item.label()).or_default().push(item.item_id());
    }
    let root = Rng::new(seed);
    let mut test_sets: Vec<Vec<String>> = vec![Vec::new(); k];
    for (class, members) in &mut by_class {
        if members.len() < k {
            return Err(SignalIoError::ClassTooSmall {
                class: *class,
                count: members.len(),
                folds: k,
            });
        }
        let mut rng = root.derive(class.id() as u64);
        rng.shuffle(members);
        for (i, id) in members.iter().enumerate() {
            test_sets[i % k].push((*id).to_string());
        }
    }
    Ok(test_sets
        .into_iter()
        .enumerate()
        .map(|(fold_index, test_ids)| {
            let held_out: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
            let train_ids = items
                .iter()
                .map(|it| it.item_id())
                .filter(|id| !held_out.contains(id))
                .map(str::to_string)
                .collect();
            DatasetSplit {
                fold_index,
                train_ids,
                test_ids,
            }
        })
        .collect())
}

/// Extends every class by seeded sampling with replacement until all
/// classes match the largest; original ids are always kept. Classes are
/// emitted in class order, originals first.
pub fn oversample<T: Clone>(ids_by_class: &BTreeMap<RhythmClass, Vec<T>>, seed: u64) -> Vec<T> {
    let target = ids_by_class.values().map(Vec::len).max().unwrap_or(0);
    let root = Rng::new(seed);
    let mut out = Vec::with_capacity(target * ids_by_class.len());
    for (class, ids) in ids_by_class {
        out.extend(ids.iter().cloned());
        if ids.is_empty() {
            continue;
        }
        let mut rng = root.derive(class.id() as u64);
        for _ in ids.len()..target {
            out.push(ids[rng.below(ids.len())].clone());
        }
    }
    out
}
