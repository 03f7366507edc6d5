//! Per-cluster conditional tuple generation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cluster::{assign_clusters, ClusterModel};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::table::{read_json, write_json, ColumnKind, Row, Table, TableSchema, Value};

pub const SAMPLER_FORMAT: &str = "histmark-sampler-v1";
pub const DEFAULT_JITTER: f64 = 0.02;

/// Anything that can produce tuples conditioned on a cluster label.
pub trait TupleGenerator: Sync {
    fn schema(&self) -> &TableSchema;
    fn clusters(&self) -> usize;
    fn sample_cluster(&self, cluster: usize, count: usize, rng: &mut Rng) -> Vec<Row>;
}

/// Resamples rows of the original table within each cluster and jitters numerics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSampler {
    schema: TableSchema,
    rows: Vec<Row>,
    pools: Vec<Vec<u32>>,
    jitter: f64,
    column_sds: Vec<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SamplerArtifact {
    format: String,
    schema: TableSchema,
    jitter: f64,
    column_sds: Vec<f64>,
    seed: u64,
    rows: Vec<Vec<f64>>,
    pools: Vec<Vec<u32>>,
}

/// Population standard deviation of each numerical column (0 for categorical).
pub fn column_sds(table: &Table) -> Vec<f64> {
    let n = table.len().max(1) as f64;
    table
        .schema()
        .columns
        .iter()
        .enumerate()
        .map(|(c, col)| match col.kind {
            ColumnKind::Categorical => 0.0,
            ColumnKind::Numerical => {
                let v = table.numeric_column(c);
                let mean = v.iter().sum::<f64>() / n;
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
            }
        })
        .collect()
}

impl ConditionalSampler {
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn pool_sizes(&self) -> Vec<u64> {
        self.pools.iter().map(|p| p.len() as u64).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let artifact = SamplerArtifact {
            format: SAMPLER_FORMAT.into(),
            schema: self.schema.clone(),
            jitter: self.jitter,
            column_sds: self.column_sds.clone(),
            seed: self.seed,
            rows: self.rows.iter().map(|r| r.iter().map(Value::as_num).collect()).collect(),
            pools: self.pools.clone(),
        };
        write_json(path, &artifact)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: SamplerArtifact = read_json(path)?;
        if a.format != SAMPLER_FORMAT {
            return Err(Error::validation(format!("unsupported sampler format {:?}", a.format)));
        }
        let rows: Vec<Row> = a
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&a.schema.columns)
                    .map(|(&v, col)| match col.kind {
                        ColumnKind::Numerical => Value::Num(v),
                        ColumnKind::Categorical => Value::Cat(v as u32),
                    })
                    .collect()
            })
            .collect();
        let table = Table::new(a.schema, rows)?;
        if a.pools.iter().flatten().any(|&i| i as usize >= table.len()) || a.pools.iter().any(Vec::is_empty) {
            return Err(Error::validation("sampler pools are inconsistent with its rows"));
        }
        let schema = table.schema().clone();
        Ok(ConditionalSampler {
            schema,
            rows: table.into_rows(),
            pools: a.pools,
            jitter: a.jitter,
            column_sds: a.column_sds,
            seed: a.seed,
        })
    }
}

impl TupleGenerator for ConditionalSampler {
    fn schema(&self) -> &TableSchema {
        &self.schema
    }

    fn clusters(&self) -> usize {
        self.pools.len()
    }

    fn sample_cluster(&self, cluster: usize, count: usize, rng: &mut Rng) -> Vec<Row> {
        let pool = &self.pools[cluster];
        (0..count)
            .map(|_| {
                let mut row = self.rows[pool[rng.random_range(0..pool.len())] as usize].clone();
                if self.jitter > 0.0 {
                    for (cell, &sd) in row.iter_mut().zip(&self.column_sds) {
                        if let Value::Num(v) = cell {
                            if sd > 0.0 {
                                let noise = Normal::new(0.0, self.jitter * sd).expect("finite sd");
                                *v += noise.sample(rng);
                            }
                        }
                    }
                }
                row
            })
            .collect()
    }
}

/// Partitions `table_o` by its fitted cluster labels.
pub fn fit_sampler(table_o: &Table, model: &ClusterModel, jitter: f64, seed: u64) -> Result<ConditionalSampler> {
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::validation("jitter must be a non-negative finite number"));
    }
    let labels = assign_clusters(model, table_o)?;
    let mut pools = vec![Vec::new(); model.m];
    for (i, &l) in labels.iter().enumerate() {
        pools[l as usize].push(i as u32);
    }
    if let Some(k) = pools.iter().position(Vec::is_empty) {
        return Err(Error::validation(format!("cluster {k} has no rows to sample from")));
    }
    Ok(ConditionalSampler {
        schema: table_o.schema().clone(),
        rows: table_o.rows().to_vec(),
        pools,
        jitter,
        column_sds: column_sds(table_o),
        seed,
    })
}

/// Draws `x[j]` tuples for every cluster `j` and shuffles them. Each cluster uses
/// its own random stream, so histograms that agree on a cluster share its draws.
pub fn synthesize(generator: &dyn TupleGenerator, x: &[u64], seed: u64) -> Result<Table> {
    Ok(synthesize_labelled(generator, x, seed)?.0)
}

/// As [`synthesize`], also returning the cluster each emitted row was drawn for.
pub fn synthesize_labelled(generator: &dyn TupleGenerator, x: &[u64], seed: u64) -> Result<(Table, Vec<u32>)> {
    if x.len() != generator.clusters() {
        return Err(Error::validation(format!(
            "histogram has {} entries but the generator has {} clusters",
            x.len(),
            generator.clusters()
        )));
    }
    let total: u64 = x.iter().sum();
    if total == 0 {
        return Err(Error::validation("histogram is empty"));
    }
    let mut rows = Vec::with_capacity(total as usize);
    let mut labels = Vec::with_capacity(total as usize);
    for (j, &count) in x.iter().enumerate() {
        let mut rng = rng::stream(seed, "synthesize", j as u64);
        rows.extend(generator.sample_cluster(j, count as usize, &mut rng));
        labels.extend(std::iter::repeat_n(j as u32, count as usize));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng::stream(seed, "synthesize-shuffle", 0));
    let mut slots: Vec<Option<Row>> = rows.into_iter().map(Some).collect();
    let shuffled_rows = order.iter().map(|&i| slots[i].take().expect("each row once")).collect();
    let shuffled_labels = order.iter().map(|&i| labels[i]).collect();
    Ok((
        Table::from_trusted(generator.schema().clone(), shuffled_rows),
        shuffled_labels,
    ))
}
