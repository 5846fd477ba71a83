use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::SampleRecord;
use crate::hash::mix64;

pub const TRAIN_FRACTION: f64 = 0.8;
pub const MIN_SOURCES: usize = 5;

/// One train/test session over source contents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// 1-based.
    pub session: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitPlan {
    /// Records whose source is in the train set, then those in the test set.
    pub fn partition<'a>(&self, records: &'a [SampleRecord]) -> (Vec<&'a SampleRecord>, Vec<&'a SampleRecord>) {
        let train: BTreeSet<&str> = self.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.test.iter().map(String::as_str).collect();
        let pick = |set: &BTreeSet<&str>| records.iter().filter(|r| set.contains(r.source_id.as_str())).collect();
        (pick(&train), pick(&test))
    }
}

/// `sessions` random 80/20 partitions of the distinct source ids.
pub fn make_splits(source_ids: &[String], sessions: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    let ids: Vec<String> = source_ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < MIN_SOURCES {
        return Err(Error::domain(format!("need at least {MIN_SOURCES} distinct sources, got {}", ids.len())));
    }
    let n_train = ((ids.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, ids.len() - 1);
    Ok((1..=sessions)
        .map(|session| {
            let session_seed = mix64(seed ^ session as u64);
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(session_seed));
            let mut train = shuffled[..n_train].to_vec();
            let mut test = shuffled[n_train..].to_vec();
            train.sort();
            test.sort();
            SplitPlan { session, train, test, seed: session_seed }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn ten_sources_eight_two() {
        let plans = make_splits(&ids(10), 10, 3).unwrap();
        assert_eq!(plans.len(), 10);
        for p in &plans {
            assert_eq!((p.train.len(), p.test.len()), (8, 2));
            assert!(p.train.iter().all(|t| !p.test.contains(t)));
        }
        assert_eq!(plans, make_splits(&ids(10), 10, 3).unwrap());
        assert_ne!(plans, make_splits(&ids(10), 10, 4).unwrap());
    }

    #[test]
    fn too_few_sources() {
        assert!(make_splits(&ids(4), 10, 0).is_err());
        let mut dup = ids(4);
        dup.push("s0".into());
        assert!(make_splits(&dup, 1, 0).is_err());
    }
}
