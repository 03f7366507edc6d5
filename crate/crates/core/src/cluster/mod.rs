//! The watermark channel: tuple encoding, PCA, K-means, and cluster histograms.

mod encoder;
pub mod kmeans;
mod pca;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use encoder::{EncodedColumn, FeatureEncoder, ONE_HOT_SCALE};
pub use kmeans::Points;
pub use pca::PcaBasis;

use crate::error::{Error, Result};
use crate::table::{read_json, write_json, Table, TableSchema};

pub const CLUSTER_FORMAT: &str = "histmark-cluster-v1";

/// Default fraction of latent variance kept by PCA.
pub const DEFAULT_VARIANCE_TARGET: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub format: String,
    pub schema: TableSchema,
    pub encoder: FeatureEncoder,
    pub basis: PcaBasis,
    /// `m` rows of `basis.output_dim()` coordinates.
    pub centroids: Vec<Vec<f64>>,
    pub m: usize,
    pub h: Vec<u64>,
    pub seed: u64,
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.basis.output_dim()
    }

    pub fn total(&self) -> u64 {
        self.h.iter().sum()
    }

    /// Row-major latent coordinates of every row.
    pub fn embed(&self, table: &Table) -> Result<Vec<f64>> {
        self.check_schema(table.schema())?;
        Ok(embed_with(&self.encoder, &self.basis, table))
    }

    pub fn check_schema(&self, schema: &TableSchema) -> Result<()> {
        if schema != &self.schema {
            return Err(Error::SchemaMismatch(
                "table schema differs from the schema the cluster model was fitted on".into(),
            ));
        }
        Ok(())
    }

    fn flat_centroids(&self) -> Vec<f64> {
        self.centroids.iter().flatten().copied().collect()
    }

    /// Nearest-centroid label for each row of already embedded data.
    pub fn assign_latent(&self, latent: &[f64]) -> Vec<u32> {
        if latent.is_empty() {
            return Vec::new();
        }
        kmeans::nearest_centroids(Points::new(latent, self.dim()), &self.flat_centroids()).0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: ClusterModel = read_json(path)?;
        if model.format != CLUSTER_FORMAT {
            return Err(Error::validation(format!(
                "unsupported cluster model format {:?}",
                model.format
            )));
        }
        if model.centroids.len() != model.m || model.h.len() != model.m {
            return Err(Error::validation("cluster model is internally inconsistent"));
        }
        Ok(model)
    }
}

fn embed_with(encoder: &FeatureEncoder, basis: &PcaBasis, table: &Table) -> Vec<f64> {
    let raw = encoder.encode_table(table);
    basis.project(&raw)
}

/// Fits encoder, PCA basis and K-means centroids on `table`, and records the
/// resulting cluster histogram.
pub fn fit_cluster_model(table: &Table, m: usize, variance_target: f64, seed: u64) -> Result<ClusterModel> {
    if m < 1 {
        return Err(Error::validation("cluster count must be positive"));
    }
    if table.is_empty() {
        return Err(Error::validation("cannot cluster an empty table"));
    }
    if m > table.len() {
        return Err(Error::validation(format!(
            "cluster count {m} exceeds row count {}",
            table.len()
        )));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::validation("variance target must lie in (0, 1]"));
    }
    let encoder = FeatureEncoder::fit(table);
    if encoder.dim == 0 {
        return Err(Error::validation("table has no columns"));
    }
    let raw = encoder.encode_table(table);
    let basis = PcaBasis::fit(&raw, encoder.dim, variance_target);
    let latent = basis.project(&raw);
    let fit = kmeans::kmeans(Points::new(&latent, basis.output_dim()), m, seed)?;
    let dim = basis.output_dim();
    Ok(ClusterModel {
        format: CLUSTER_FORMAT.into(),
        schema: table.schema().clone(),
        encoder,
        centroids: fit.centroids.chunks(dim).map(<[f64]>::to_vec).collect(),
        basis,
        m,
        h: fit.counts,
        seed,
    })
}

/// Nearest-centroid cluster of every row (lowest index on ties).
pub fn assign_clusters(model: &ClusterModel, table: &Table) -> Result<Vec<u32>> {
    let latent = model.embed(table)?;
    Ok(model.assign_latent(&latent))
}

pub fn histogram_of(assignments: &[u32], m: usize) -> Result<Vec<u64>> {
    let mut y = vec![0u64; m];
    for &a in assignments {
        let slot = y
            .get_mut(a as usize)
            .ok_or_else(|| Error::validation(format!("cluster index {a} out of range for {m} clusters")))?;
        *slot += 1;
    }
    Ok(y)
}
