//! Random aggregation-query workloads and their relative errors.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{check_pair, quantile};
use crate::error::{Error, Result};
use crate::rng;
use crate::table::{ColumnKind, Row, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Low,
    Medium,
    High,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Low, Bucket::Medium, Bucket::High];

    pub fn center(self) -> f64 {
        match self {
            Bucket::Low => 0.01,
            Bucket::Medium => 0.05,
            Bucket::High => 0.2,
        }
    }

    /// Retention band: within half the center on either side.
    pub fn accepts(self, selectivity: f64) -> bool {
        let c = self.center();
        selectivity >= 0.5 * c && selectivity <= 1.5 * c
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Low => "low",
            Bucket::Medium => "medium",
            Bucket::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggKind {
    Count,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    Le { col: usize, value: f64 },
    Ge { col: usize, value: f64 },
    Eq { col: usize, value: u32 },
}

impl Predicate {
    fn col(&self) -> usize {
        match *self {
            Predicate::Le { col, .. } | Predicate::Ge { col, .. } | Predicate::Eq { col, .. } => col,
        }
    }

    fn holds(&self, row: &Row) -> bool {
        match *self {
            Predicate::Le { col, value } => row[col].as_num() <= value,
            Predicate::Ge { col, value } => row[col].as_num() >= value,
            Predicate::Eq { col, value } => row[col].as_cat() == value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub agg: AggKind,
    /// Column aggregated by AVG.
    pub target: usize,
    pub predicates: Vec<Predicate>,
    pub group_by: Option<usize>,
    pub bucket: Bucket,
    /// Selectivity of the full predicate set on the original table.
    pub selectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryWorkload {
    pub queries: Vec<Query>,
    pub per_bucket: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub per_bucket: usize,
    pub group_by_fraction: f64,
    /// Candidate queries allowed per requested query.
    pub max_attempts_factor: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            per_bucket: 1000,
            group_by_fraction: 0.1,
            max_attempts_factor: 200,
        }
    }
}

fn candidate(table: &Table, numeric: &[usize], r: &mut rng::Rng) -> (usize, Vec<Predicate>) {
    let schema = table.schema();
    let k = schema.len();
    let target = numeric[r.random_range(0..numeric.len())];
    let f = r.random_range(1..=k);
    let cols = index::sample(r, k, f).into_vec();
    let tuple = &table.rows()[r.random_range(0..table.len())];
    let mut preds: Vec<Predicate> = cols
        .into_iter()
        .map(|col| match schema.columns[col].kind {
            ColumnKind::Numerical => {
                let value = tuple[col].as_num();
                if r.random::<bool>() {
                    Predicate::Le { col, value }
                } else {
                    Predicate::Ge { col, value }
                }
            }
            ColumnKind::Categorical => Predicate::Eq {
                col,
                value: tuple[col].as_cat(),
            },
        })
        .collect();
    preds.sort_by_key(Predicate::col);
    (target, preds)
}

fn selectivity(table: &Table, preds: &[Predicate]) -> f64 {
    let hits = table.rows().iter().filter(|r| preds.iter().all(|p| p.holds(r))).count();
    hits as f64 / table.len() as f64
}

/// Rejection-samples `per_bucket` queries for every (aggregation, bucket) cell.
/// AVG cells are skipped when the table has no numerical column.
pub fn generate_workload(table_o: &Table, config: &WorkloadConfig, seed: u64) -> Result<QueryWorkload> {
    if table_o.is_empty() {
        return Err(Error::validation("workload generation needs a non-empty table"));
    }
    let schema = table_o.schema();
    let numeric = schema.numerical_indices();
    let aggs: Vec<AggKind> = if numeric.is_empty() {
        vec![AggKind::Count]
    } else {
        vec![AggKind::Count, AggKind::Avg]
    };
    let targets: Vec<usize> = if numeric.is_empty() { vec![0] } else { numeric.clone() };
    let cells = aggs.len() * Bucket::ALL.len();
    let mut filled: Vec<Vec<Query>> = vec![Vec::new(); cells];
    let cap = config.max_attempts_factor.max(1) * config.per_bucket * cells;
    let mut r = rng::stream(seed, "workload", 0);
    let mut attempts = 0;
    while filled.iter().any(|c| c.len() < config.per_bucket) {
        if attempts >= cap {
            let report: Vec<String> = filled.iter().map(|c| c.len().to_string()).collect();
            return Err(Error::validation(format!(
                "workload generation stopped after {attempts} candidates with bucket fill [{}] of {}",
                report.join(", "),
                config.per_bucket
            )));
        }
        attempts += 1;
        let (target, predicates) = candidate(table_o, &targets, &mut r);
        let s = selectivity(table_o, &predicates);
        let Some(b) = Bucket::ALL.iter().position(|b| b.accepts(s)) else {
            continue;
        };
        let Some(a) = (0..aggs.len()).find(|&a| filled[a * 3 + b].len() < config.per_bucket) else {
            continue;
        };
        filled[a * 3 + b].push(Query {
            agg: aggs[a],
            target,
            predicates,
            group_by: None,
            bucket: Bucket::ALL[b],
            selectivity: s,
        });
    }
    let mut grouping = rng::stream(seed, "workload-group-by", 0);
    let mut queries = Vec::with_capacity(cells * config.per_bucket);
    for mut cell in filled {
        let eligible: Vec<usize> = (0..cell.len())
            .filter(|&i| cell[i].predicates.iter().any(|p| matches!(p, Predicate::Eq { .. })))
            .collect();
        let take = (config.group_by_fraction * eligible.len() as f64).round() as usize;
        let mut chosen = eligible;
        chosen.shuffle(&mut grouping);
        for &i in &chosen[..take] {
            let q = &mut cell[i];
            let cats: Vec<usize> = (0..q.predicates.len())
                .filter(|&j| matches!(q.predicates[j], Predicate::Eq { .. }))
                .collect();
            let j = cats[grouping.random_range(0..cats.len())];
            q.group_by = Some(q.predicates.remove(j).col());
        }
        queries.extend(cell);
    }
    Ok(QueryWorkload {
        queries,
        per_bucket: config.per_bucket,
    })
}

/// Per-group (or single) aggregate values; `None` where AVG has no rows.
fn evaluate(q: &Query, table: &Table, count_scale: f64) -> Vec<(u32, Option<f64>)> {
    let groups = q
        .group_by
        .map_or(1, |c| table.schema().columns[c].domain().len());
    let mut count = vec![0usize; groups];
    let mut sum = vec![0.0; groups];
    for row in table.rows() {
        if q.predicates.iter().all(|p| p.holds(row)) {
            let g = q.group_by.map_or(0, |c| row[c].as_cat() as usize);
            count[g] += 1;
            if q.agg == AggKind::Avg {
                sum[g] += row[q.target].as_num();
            }
        }
    }
    (0..groups)
        .map(|g| {
            let v = match q.agg {
                AggKind::Count => Some(count[g] as f64 * count_scale),
                AggKind::Avg => (count[g] > 0).then(|| sum[g] / count[g] as f64),
            };
            (g as u32, v)
        })
        .collect()
}

/// Relative error of one query, averaged over its groups; `None` when no group
/// yields a comparable answer.
pub fn query_error(q: &Query, syn: &Table, orig: &Table, scale_counts: bool) -> Option<f64> {
    let scale = if scale_counts {
        orig.len() as f64 / syn.len() as f64
    } else {
        1.0
    };
    let a = evaluate(q, syn, scale);
    let b = evaluate(q, orig, 1.0);
    let mut errs = Vec::new();
    for ((_, s), (_, o)) in a.iter().zip(&b) {
        match (s, o) {
            (Some(s), Some(o)) => {
                if q.agg == AggKind::Count && *s == 0.0 && *o == 0.0 && q.group_by.is_some() {
                    continue;
                }
                errs.push((s - o).abs() / o.abs().max(1.0));
            }
            _ => continue,
        }
    }
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaqeCell {
    pub agg: AggKind,
    pub bucket: Bucket,
    pub p95: f64,
    pub mean: f64,
    pub evaluated: usize,
}

pub fn raqe(workload: &QueryWorkload, syn: &Table, orig: &Table, scale_counts: bool) -> Result<Vec<RaqeCell>> {
    if workload.queries.is_empty() {
        return Err(Error::validation("workload is empty"));
    }
    check_pair(syn, orig)?;
    let errors: Vec<Option<f64>> = workload
        .queries
        .par_iter()
        .map(|q| query_error(q, syn, orig, scale_counts))
        .collect();
    let mut out = Vec::new();
    for agg in [AggKind::Count, AggKind::Avg] {
        for bucket in Bucket::ALL {
            let vals: Vec<f64> = workload
                .queries
                .iter()
                .zip(&errors)
                .filter(|(q, _)| q.agg == agg && q.bucket == bucket)
                .filter_map(|(_, e)| *e)
                .collect();
            if vals.is_empty() {
                continue;
            }
            out.push(RaqeCell {
                agg,
                bucket,
                p95: quantile(&vals, 0.95),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                evaluated: vals.len(),
            });
        }
    }
    Ok(out)
}

/// Looks up one cell of a RAQE result.
pub fn raqe_cell(cells: &[RaqeCell], agg: AggKind, bucket: Bucket) -> Option<&RaqeCell> {
    cells.iter().find(|c| c.agg == agg && c.bucket == bucket)
}
