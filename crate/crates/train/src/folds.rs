//! Patient-level stratified k-fold assignment.

use std::collections::{BTreeMap, BTreeSet};

use ecgtl_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Patient id to fold index.
    pub assignment: BTreeMap<String, usize>,
    /// Patient id to stratification label.
    pub labels: BTreeMap<String, bool>,
}

impl FoldPlan {
    /// Patients of fold `f`, sorted.
    pub fn fold(&self, f: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &g)| g == f)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn fold_positives(&self) -> Vec<usize> {
        let mut pos = vec![0; self.k];
        for (p, &f) in &self.assignment {
            if self.labels[p] {
                pos[f] += 1;
            }
        }
        pos
    }
}

/// Shuffles positives and negatives separately, deals the positives round
/// robin over the folds and continues dealing the negatives from the next
/// fold, so both the per-fold positives and the fold sizes differ by at
/// most one.
///
/// Units are patients: `patient_ids` must be unique.
pub fn make_folds(labels: &[bool], patient_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if labels.len() != patient_ids.len() {
        return Err(Error::Data(format!("{} labels for {} patients", labels.len(), patient_ids.len())));
    }
    if k < 2 {
        return Err(Error::Config(format!("k = {k}; at least 2 folds are needed")));
    }
    if k > patient_ids.len() {
        return Err(Error::Config(format!("k = {k} exceeds {} patients", patient_ids.len())));
    }
    let unique: BTreeSet<&String> = patient_ids.iter().collect();
    if unique.len() != patient_ids.len() {
        return Err(Error::Data("duplicate patient ids".into()));
    }
    // sort first so the plan does not depend on input order
    let mut pairs: Vec<(&String, bool)> = patient_ids.iter().zip(labels.iter().copied()).collect();
    pairs.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<&String> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
    let mut neg: Vec<&String> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignment = BTreeMap::new();
    for (slot, id) in pos.iter().chain(neg.iter()).enumerate() {
        assignment.insert((*id).clone(), slot % k);
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
        labels: pairs.iter().map(|(p, l)| ((*p).clone(), *l)).collect(),
    })
}
