use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::rngkey::stream_rng;

const FOLD_STREAM: u64 = 0xF01D;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn test_ids(&self, fold: usize) -> Vec<String> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(id, _)| id.clone()).collect()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.assignment.iter().filter(|(_, &f)| f != fold).map(|(id, _)| id.clone()).collect()
    }

    pub fn fold_of(&self, study_id: &str) -> Option<usize> {
        self.assignment.get(study_id).copied()
    }
}

/// Shuffled round-robin assignment of whole studies to `k` folds.
pub fn make_folds(study_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    if k == 0 {
        return Err(DataError::Param("fold count must be positive".into()));
    }
    let mut ids: Vec<String> = study_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < k {
        return Err(DataError::TooFewStudies { k, got: ids.len() });
    }
    ids.shuffle(&mut stream_rng(seed, FOLD_STREAM));
    let assignment = ids.into_iter().enumerate().map(|(i, id)| (id, i % k)).collect();
    Ok(FoldPlan { k, assignment })
}
