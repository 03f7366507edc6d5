//! Watermark extraction and buyer identification.

use crate::bits::BitString;
use crate::cluster::{assign_clusters, histogram_of, ClusterModel};
use crate::codebook::WatermarkDatabase;
use crate::error::{Error, Result};
use crate::table::Table;
use crate::template::WatermarkTemplate;

/// Cluster histogram of a suspect table.
pub fn suspect_histogram(table_s: &Table, model: &ClusterModel) -> Result<Vec<u64>> {
    if table_s.is_empty() {
        return Err(Error::validation("suspect table is empty"));
    }
    histogram_of(&assign_clusters(model, table_s)?, model.m)
}

pub fn decode(table_s: &Table, model: &ClusterModel, template: &WatermarkTemplate) -> Result<BitString> {
    template.validate(model.m)?;
    Ok(template.read_bits(&suspect_histogram(table_s, model)?))
}

/// Decoded bits together with the buyer they match, if any.
pub fn identify(
    table_s: &Table,
    model: &ClusterModel,
    template: &WatermarkTemplate,
    db: &WatermarkDatabase,
) -> Result<(BitString, Option<String>)> {
    if db.w_star.is_none() {
        return Err(Error::validation("watermark database is not bound to a dataset"));
    }
    let bits = decode(table_s, model, template)?;
    Ok((bits, db.match_watermark(&bits).map(str::to_owned)))
}
