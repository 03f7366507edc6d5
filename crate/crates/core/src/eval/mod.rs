//! Traceability and utility evaluation.

mod metrics;
mod trace;
mod workload;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use metrics::{correlation_gap, ks_statistic, marginal_gap, quantile, tvd};
pub use trace::{fill_cache, trial_index, traceability_accuracy, HistogramCache, TraceOutcome, TraceTrials};
pub use workload::{
    generate_workload, query_error, raqe, raqe_cell, AggKind, Bucket, Predicate, Query, QueryWorkload, RaqeCell,
    WorkloadConfig,
};

use crate::attack::AttackKind;
use crate::error::Result;
use crate::pipeline::Owner;
use crate::rng;
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub trials: usize,
    pub attacks: Vec<(AttackKind, f64)>,
    pub workload: WorkloadConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 100,
            attacks: AttackKind::ALL.iter().map(|&k| (k, 0.05)).collect(),
            workload: WorkloadConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    pub attack: Option<AttackKind>,
    pub intensity: f64,
    pub outcome: TraceOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityEntry {
    pub marginal_gap: f64,
    pub correlation_gap: f64,
    pub raqe: Vec<RaqeCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: Vec<AccuracyEntry>,
    pub watermarked: UtilityEntry,
    pub baseline: UtilityEntry,
}

pub fn utility(syn: &Table, orig: &Table, workload: &QueryWorkload) -> Result<UtilityEntry> {
    Ok(UtilityEntry {
        marginal_gap: marginal_gap(syn, orig)?,
        correlation_gap: correlation_gap(syn, orig)?,
        raqe: raqe(workload, syn, orig, false)?,
    })
}

/// Accuracy without and under each configured attack, then utility of one
/// watermarked table against the table synthesized from the original histogram.
pub fn run_evaluation(owner: &Owner, table_o: &Table, config: &EvalConfig) -> Result<EvaluationReport> {
    let mut cache = HistogramCache::new();
    let mut accuracy = Vec::new();
    let runs = std::iter::once(None).chain(config.attacks.iter().map(|&a| Some(a)));
    for attack in runs {
        let spec = TraceTrials {
            trials: config.trials,
            attack,
            seed: config.seed,
        };
        accuracy.push(AccuracyEntry {
            attack: attack.map(|a| a.0),
            intensity: attack.map_or(0.0, |a| a.1),
            outcome: traceability_accuracy(owner, &spec, &mut cache)?,
        });
    }
    let workload = generate_workload(table_o, &config.workload, rng::child_seed(config.seed, "eval-workload", 0))?;
    let idx = trial_index(owner, config.seed, 0);
    fill_cache(owner, &[idx], &mut cache)?;
    let release = rng::child_seed(config.seed, "eval-utility", 0);
    let marked = owner.synthesize(&cache[&idx].x, release)?;
    let plain = owner.synthesize(&owner.model.h, release)?;
    Ok(EvaluationReport {
        accuracy,
        watermarked: utility(&marked, table_o, &workload)?,
        baseline: utility(&plain, table_o, &workload)?,
    })
}

impl EvaluationReport {
    /// Aligned text table: one row per synthetic table.
    pub fn to_text(&self) -> String {
        let mut head: Vec<String> = vec!["table".into()];
        let mut acc: Vec<String> = Vec::new();
        for e in &self.accuracy {
            head.push(match e.attack {
                None => "acc".into(),
                Some(k) => format!("{}@{}", k, e.intensity),
            });
            acc.push(format!("{:.3}", e.outcome.accuracy));
        }
        head.push("marg_gap".into());
        head.push("corr_gap".into());
        let cells: Vec<(AggKind, Bucket)> = self.watermarked.raqe.iter().map(|c| (c.agg, c.bucket)).collect();
        for (a, b) in &cells {
            head.push(format!("raqe95_{}_{}", if *a == AggKind::Count { "count" } else { "avg" }, b.name()));
        }
        let row = |name: &str, u: &UtilityEntry, acc: Option<&[String]>| -> Vec<String> {
            let mut r = vec![name.to_string()];
            match acc {
                Some(a) => r.extend(a.iter().cloned()),
                None => r.extend(std::iter::repeat_n("-".to_string(), self.accuracy.len())),
            }
            r.push(format!("{:.4}", u.marginal_gap));
            r.push(format!("{:.4}", u.correlation_gap));
            for (a, b) in &cells {
                r.push(raqe_cell(&u.raqe, *a, *b).map_or("-".into(), |c| format!("{:.4}", c.p95)));
            }
            r
        };
        let rows = [
            head,
            row("watermarked", &self.watermarked, Some(&acc)),
            row("baseline", &self.baseline, None),
        ];
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::desk_table;
    use crate::pipeline::{fit_owner, PipelineConfig};
    use crate::robustness::RobustnessParams;
    use crate::template::SecretKey;

    #[test]
    fn small_evaluation_runs_and_renders() {
        let t = desk_table(3000, 4);
        let config = PipelineConfig {
            m: 32,
            l: 14,
            n: 6,
            robustness: RobustnessParams {
                t: Some(400),
                deletion_sims: 20,
                ..Default::default()
            },
            seed: 2,
            ..Default::default()
        };
        let owner = fit_owner(&t, &SecretKey::from_bytes([9u8; 32]), &config).unwrap();
        let eval = EvalConfig {
            trials: 4,
            attacks: vec![(AttackKind::Delete, 0.05)],
            workload: WorkloadConfig {
                per_bucket: 20,
                ..Default::default()
            },
            seed: 1,
        };
        let report = run_evaluation(&owner, &t, &eval).unwrap();
        assert_eq!(report.accuracy.len(), 2);
        assert_eq!(report.accuracy[0].outcome.accuracy, 1.0);
        assert!(report.watermarked.marginal_gap < 0.2);
        let text = report.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("delete@0.05"), "{text}");
        let json = serde_json::to_string(&report).unwrap();
        let back: EvaluationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
