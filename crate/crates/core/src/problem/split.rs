use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProblemInstance;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub protocol: String,
    pub seed: u64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub multi_groups: usize,
    pub singleton_groups: usize,
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<ProblemInstance>,
    pub validation: Vec<ProblemInstance>,
    pub test: Vec<ProblemInstance>,
    pub meta: SplitMeta,
}

/// Ids per partition plus the split metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub meta: SplitMeta,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[ProblemInstance]| v.iter().map(|p| p.id.clone()).collect();
        SplitManifest {
            meta: self.meta.clone(),
            train: ids(&self.train),
            validation: ids(&self.validation),
            test: ids(&self.test),
        }
    }

    /// Rebuilds a split from a manifest and the instances it names.
    pub fn from_manifest(manifest: &SplitManifest, instances: &[ProblemInstance]) -> Result<Self> {
        let by_id: HashMap<&str, &ProblemInstance> = instances.iter().map(|p| (p.id.as_str(), p)).collect();
        let pick = |ids: &[String]| {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|p| (*p).clone())
                        .ok_or_else(|| Error::Config(format!("manifest names unknown problem {id}")))
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            train: pick(&manifest.train)?,
            validation: pick(&manifest.validation)?,
            test: pick(&manifest.test)?,
            meta: manifest.meta.clone(),
        })
    }
}

/// Groups instances by key, preserving first-appearance order of groups and
/// of members within a group.
fn group_by(instances: Vec<ProblemInstance>, key: &dyn Fn(&ProblemInstance) -> String) -> Vec<Vec<ProblemInstance>> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<ProblemInstance>> = Vec::new();
    for p in instances {
        let k = key(&p);
        let i = *index.entry(k).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[i].push(p);
    }
    groups
}

fn check_unique_ids(instances: &[ProblemInstance]) -> Result<()> {
    let mut seen = HashSet::new();
    for p in instances {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Config(format!("duplicate problem id {}", p.id)));
        }
    }
    Ok(())
}

/// One random member of every multi-member group trains and the rest test;
/// singleton groups form the validation set.
pub fn one_to_many_split(
    instances: Vec<ProblemInstance>,
    key: &dyn Fn(&ProblemInstance) -> String,
    seed: u64,
) -> Result<DatasetSplit> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("one-to-many split".into()));
    }
    check_unique_ids(&instances)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let (mut multi, mut single) = (0, 0);
    for mut group in group_by(instances, key) {
        if group.len() == 1 {
            single += 1;
            validation.extend(group);
        } else {
            multi += 1;
            let pick = rng.random_range(0..group.len());
            train.push(group.remove(pick));
            test.extend(group);
        }
    }
    let meta = SplitMeta {
        protocol: "one-to-many".into(),
        seed,
        train: train.len(),
        validation: validation.len(),
        test: test.len(),
        multi_groups: multi,
        singleton_groups: single,
    };
    Ok(DatasetSplit { train, validation, test, meta })
}

/// Applies the one-to-many rule to an existing test set: one member of each
/// multi-member test group joins the original training set, singleton test
/// groups join the original validation set, and the rest stay in test.
pub fn regroup_test_split(
    train: Vec<ProblemInstance>,
    validation: Vec<ProblemInstance>,
    test: Vec<ProblemInstance>,
    key: &dyn Fn(&ProblemInstance) -> String,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut all: Vec<ProblemInstance> = Vec::with_capacity(train.len() + validation.len() + test.len());
    all.extend(train.iter().cloned());
    all.extend(validation.iter().cloned());
    all.extend(test.iter().cloned());
    check_unique_ids(&all)?;
    let inner = one_to_many_split(test, key, seed)?;
    let mut out_train = train;
    out_train.extend(inner.train);
    let mut out_valid = validation;
    out_valid.extend(inner.validation);
    let meta = SplitMeta {
        protocol: "one-to-many-test-regroup".into(),
        seed,
        train: out_train.len(),
        validation: out_valid.len(),
        test: inner.test.len(),
        multi_groups: inner.meta.multi_groups,
        singleton_groups: inner.meta.singleton_groups,
    };
    Ok(DatasetSplit { train: out_train, validation: out_valid, test: inner.test, meta })
}

/// Shuffles whole groups and assigns them to train, validation and test by
/// the given fractions, so that no context appears in two partitions.
pub fn grouped_random_split(
    instances: Vec<ProblemInstance>,
    key: &dyn Fn(&ProblemInstance) -> String,
    train_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("grouped split".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction)
        || !(0.0..=1.0).contains(&validation_fraction)
        || train_fraction + validation_fraction > 1.0
    {
        return Err(Error::Config("split fractions must lie in [0, 1] and sum to at most 1".into()));
    }
    check_unique_ids(&instances)?;
    let mut groups = group_by(instances, key);
    let (mut multi, mut single) = (0, 0);
    for g in &groups {
        if g.len() > 1 {
            multi += 1;
        } else {
            single += 1;
        }
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = groups.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let n_valid = ((validation_fraction * n as f64).round() as usize).min(n - n_train);
    let mut it = groups.into_iter();
    let train: Vec<_> = it.by_ref().take(n_train).flatten().collect();
    let validation: Vec<_> = it.by_ref().take(n_valid).flatten().collect();
    let test: Vec<_> = it.flatten().collect();
    let meta = SplitMeta {
        protocol: "grouped-random".into(),
        seed,
        train: train.len(),
        validation: validation.len(),
        test: test.len(),
        multi_groups: multi,
        singleton_groups: single,
    };
    Ok(DatasetSplit { train, validation, test, meta })
}
