//! Traceability trials.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{apply_attack, AttackKind, AttackSpec};
use crate::error::{Error, Result};
use crate::optimizer::WatermarkedHistogram;
use crate::pipeline::Owner;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTrials {
    pub trials: usize,
    pub attack: Option<(AttackKind, f64)>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOutcome {
    pub trials: usize,
    pub correct: usize,
    /// Trials traced to a different buyer.
    pub wrong_buyer: usize,
    pub accuracy: f64,
}

/// Optimized histograms keyed by codebook index, shared across trials.
pub type HistogramCache = BTreeMap<usize, WatermarkedHistogram>;

/// Histograms for `indices`, optimizing only those missing from `cache`.
pub fn fill_cache(owner: &Owner, indices: &[usize], cache: &mut HistogramCache) -> Result<()> {
    let mut todo: Vec<usize> = indices.iter().copied().filter(|i| !cache.contains_key(i)).collect();
    todo.sort_unstable();
    todo.dedup();
    let fresh: Vec<(usize, Result<WatermarkedHistogram>)> = todo
        .par_iter()
        .map(|&i| {
            let w = owner.db.watermark_at(i).expect("database is bound");
            (i, owner.histogram_for(&w))
        })
        .collect();
    for (i, h) in fresh {
        cache.insert(i, h?);
    }
    Ok(())
}

/// Codebook index used by trial `t`.
pub fn trial_index(owner: &Owner, seed: u64, t: usize) -> usize {
    rng::stream(seed, "trace-buyer", t as u64).random_range(0..owner.db.n)
}

/// Runs encode, optional attack and identification for fresh buyers. Every
/// codebook entry is assigned a buyer so that wrong matches are possible.
pub fn traceability_accuracy(owner: &Owner, spec: &TraceTrials, cache: &mut HistogramCache) -> Result<TraceOutcome> {
    if spec.trials == 0 {
        return Err(Error::validation("need at least one trial"));
    }
    let mut owner = owner.clone();
    owner.assign_all("buyer-")?;
    let indices: Vec<usize> = (0..spec.trials).map(|t| trial_index(&owner, spec.seed, t)).collect();
    fill_cache(&owner, &indices, cache)?;
    let by_index: BTreeMap<usize, String> = owner.db.assignments.iter().map(|(b, &i)| (i, b.clone())).collect();
    let outcomes: Vec<Result<(bool, bool)>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let idx = indices[t];
            let x = &cache[&idx].x;
            let release_seed = rng::child_seed(spec.seed, "trace-release", t as u64);
            let mut table = owner.synthesize(x, release_seed)?;
            if let Some((kind, intensity)) = spec.attack {
                let attack_seed = rng::child_seed(spec.seed, "trace-attack", t as u64);
                let a = AttackSpec::new(kind, intensity, attack_seed)?;
                table = apply_attack(&table, &a, owner.config.m, owner.config.l)?;
            }
            let (_, who) = owner.identify(&table)?;
            let right = who.as_deref() == Some(by_index[&idx].as_str());
            Ok((right, who.is_some() && !right))
        })
        .collect();
    let mut correct = 0;
    let mut wrong = 0;
    for o in outcomes {
        let (r, w) = o?;
        correct += usize::from(r);
        wrong += usize::from(w);
    }
    Ok(TraceOutcome {
        trials: spec.trials,
        correct,
        wrong_buyer: wrong,
        accuracy: correct as f64 / spec.trials as f64,
    })
}
