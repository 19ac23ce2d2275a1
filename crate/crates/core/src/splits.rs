//! Deterministic train/dev/test construction for the two evaluation
//! scenarios: stratified unseen-question splits and held-out-LALM splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EvalInstance, Modality};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitsError {
    #[error("need at least 3 question groups, got {0}")]
    TooFewGroups(usize),
    #[error("held-out LALM `{0}` does not appear in the corpus")]
    UnknownLalm(String),
    #[error("holdout takes exactly 2 LALM ids, got {0}")]
    HoldoutCount(usize),
    #[error("canonical holdout pairs need at least 10 LALM ids, got {0}")]
    NotEnoughLalms(usize),
    #[error("manifest serialization failed: {0}")]
    Serialization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    UnseenQuestion,
    UnseenLalm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

/// Persisted split assignment, decoupling split identity from corpus file
/// ordering. Serialization is canonical (sorted keys), so a (corpus, seed)
/// pair always reproduces the manifest byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub scenario: Scenario,
    pub seed: u64,
    pub ratios: (u32, u32, u32),
    pub held_out_lalms: Vec<String>,
    pub assignment: BTreeMap<String, Partition>,
}

impl SplitManifest {
    pub fn to_json(&self) -> Result<String, SplitsError> {
        serde_json::to_string_pretty(self).map_err(|e| SplitsError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, SplitsError> {
        serde_json::from_str(text).map_err(|e| SplitsError::Serialization(e.to_string()))
    }

    pub fn ids_in(&self, partition: Partition) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, &p)| p == partition)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Question groups: instances sharing a question_id move through splitting as
/// one unit. Returns question_id → sorted instance ids.
fn question_groups(instances: &[EvalInstance]) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for inst in instances {
        groups.entry(inst.question_id.clone()).or_default().push(inst.instance_id.clone());
    }
    for ids in groups.values_mut() {
        ids.sort();
    }
    groups
}

/// Largest-remainder apportionment of `n` units across weighted partitions;
/// remainder ties break in (train, dev, test) order.
fn largest_remainder(n: usize, weights: [u32; 3]) -> [usize; 3] {
    let total: u32 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|&w| n as f64 * w as f64 / total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &p in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[p] += 1;
        leftover -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Strata below this many question groups fall back to the next coarser
/// level (category → modality → global).
const MIN_STRATUM_GROUPS: usize = 10;

/// Builds the final stratum list: (modality, category) strata with enough
/// groups, then modality-level pools of the small ones, then a global pool.
/// Iteration order is fixed, so the single RNG stream is reproducible.
fn build_strata(
    instances: &[EvalInstance],
    groups: &BTreeMap<String, Vec<String>>,
) -> Vec<Vec<String>> {
    let meta: BTreeMap<&str, (&Modality, &str)> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), (&i.modality, i.category.as_str())))
        .collect();

    let mut by_category: BTreeMap<(Modality, String), Vec<String>> = BTreeMap::new();
    for (qid, ids) in groups {
        // A question's instances share metadata; read it off the first id.
        let (m, c) = meta[ids[0].as_str()];
        by_category.entry((*m, c.to_string())).or_default().push(qid.clone());
    }

    let mut strata = Vec::new();
    let mut by_modality: BTreeMap<Modality, Vec<String>> = BTreeMap::new();
    for ((modality, _), qids) in by_category {
        if qids.len() >= MIN_STRATUM_GROUPS {
            strata.push(qids);
        } else {
            by_modality.entry(modality).or_default().extend(qids);
        }
    }
    let mut global = Vec::new();
    for (_, qids) in by_modality {
        if qids.len() >= MIN_STRATUM_GROUPS {
            strata.push(qids);
        } else {
            global.extend(qids);
        }
    }
    if !global.is_empty() {
        strata.push(global);
    }
    strata
}

fn assign_stratified(
    instances: &[EvalInstance],
    groups: &BTreeMap<String, Vec<String>>,
    weights: [u32; 3],
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, Partition> {
    let mut assignment = BTreeMap::new();
    for mut qids in build_strata(instances, groups) {
        qids.shuffle(rng);
        let [n_train, n_dev, _] = largest_remainder(qids.len(), weights);
        for (pos, qid) in qids.iter().enumerate() {
            let partition = if pos < n_train {
                Partition::Train
            } else if pos < n_train + n_dev {
                Partition::Dev
            } else {
                Partition::Test
            };
            for id in &groups[qid] {
                assignment.insert(id.clone(), partition);
            }
        }
    }
    assignment
}

/// Scenario 1: unseen-question split. Question groups are shuffled within
/// each (modality, category) stratum and apportioned 8:1:1 by largest
/// remainder, so no question appears in two partitions.
pub fn stratified_split(instances: &[EvalInstance], seed: u64) -> Result<SplitManifest, SplitsError> {
    let groups = question_groups(instances);
    if groups.len() < 3 {
        return Err(SplitsError::TooFewGroups(groups.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = assign_stratified(instances, &groups, [8, 1, 1], &mut rng);
    Ok(SplitManifest {
        scenario: Scenario::UnseenQuestion,
        seed,
        ratios: (8, 1, 1),
        held_out_lalms: Vec::new(),
        assignment,
    })
}

/// Scenario 2: every instance of the two held-out LALMs goes to test; the
/// remainder is split train/dev 8:1 by the stratified procedure.
pub fn lalm_holdout_split(
    instances: &[EvalInstance],
    held_out: &[String],
    seed: u64,
) -> Result<SplitManifest, SplitsError> {
    if held_out.len() != 2 {
        return Err(SplitsError::HoldoutCount(held_out.len()));
    }
    for lalm in held_out {
        if !instances.iter().any(|i| &i.lalm_id == lalm) {
            return Err(SplitsError::UnknownLalm(lalm.clone()));
        }
    }
    let (test, rest): (Vec<&EvalInstance>, Vec<&EvalInstance>) =
        instances.iter().partition(|i| held_out.contains(&i.lalm_id));
    let rest: Vec<EvalInstance> = rest.into_iter().cloned().collect();

    let groups = question_groups(&rest);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = assign_stratified(&rest, &groups, [8, 1, 0], &mut rng);
    for inst in test {
        assignment.insert(inst.instance_id.clone(), Partition::Test);
    }

    let mut held_out_lalms = held_out.to_vec();
    held_out_lalms.sort();
    Ok(SplitManifest {
        scenario: Scenario::UnseenLalm,
        seed,
        ratios: (8, 1, 1),
        held_out_lalms,
        assignment,
    })
}

/// The five canonical holdout pairs: the lexicographically first 10 LALM ids,
/// paired consecutively, so the pairs cover 10 distinct LALMs.
pub fn canonical_lalm_pairs(lalm_ids: &[String]) -> Result<Vec<(String, String)>, SplitsError> {
    let mut ids: Vec<String> = lalm_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 10 {
        return Err(SplitsError::NotEnoughLalms(ids.len()));
    }
    Ok((0..5).map(|k| (ids[2 * k].clone(), ids[2 * k + 1].clone())).collect())
}
