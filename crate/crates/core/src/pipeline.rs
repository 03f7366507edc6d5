//! The owner's end-to-end workflow: fit once, then encode per buyer and trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::cluster::{fit_cluster_model, ClusterModel, DEFAULT_VARIANCE_TARGET};
use crate::codebook::{derive_delta_be, WatermarkDatabase};
use crate::decode::identify;
use crate::error::{Error, Result};
use crate::optimizer::{optimize, OptimizerConfig, WatermarkedHistogram};
use crate::rng;
use crate::robustness::{fit_robustness, RobustnessModel, RobustnessParams};
use crate::synth::{fit_sampler, synthesize, ConditionalSampler, TupleGenerator, DEFAULT_JITTER};
use crate::table::{read_json, write_json, Table, TableSchema};
use crate::template::{optimal_watermark, pair_clusters, select_template_clusters, SecretKey, WatermarkTemplate, PAIR_CONTEXT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub m: usize,
    pub l: usize,
    pub n: usize,
    pub variance_target: f64,
    pub jitter: f64,
    pub robustness: RobustnessParams,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Forces the bit-error tolerance instead of deriving it from the false-positive
    /// target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_be: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            m: 256,
            l: 32,
            n: 1000,
            variance_target: DEFAULT_VARIANCE_TARGET,
            jitter: DEFAULT_JITTER,
            robustness: RobustnessParams::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            delta_be: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.l > 64 {
            return Err(Error::validation("L must lie in 1..=64"));
        }
        if self.n == 0 {
            return Err(Error::validation("N must be positive"));
        }
        if self.m < 2 * self.l {
            return Err(Error::Capacity(format!("M = {} is below 2L = {}", self.m, 2 * self.l)));
        }
        if self.delta_be.is_some_and(|d| d >= self.l) {
            return Err(Error::validation("delta_BE must be below L"));
        }
        self.robustness.validate()?;
        self.optimizer.validate()
    }

    pub fn derived_delta_be(&self) -> Result<usize> {
        match self.delta_be {
            Some(d) => Ok(d),
            None => derive_delta_be(self.n, self.l, self.robustness.delta_fpr),
        }
    }
}

/// Every artifact the owner keeps after fitting.
#[derive(Debug, Clone)]
pub struct Owner {
    pub config: PipelineConfig,
    pub model: ClusterModel,
    pub sampler: ConditionalSampler,
    pub template: WatermarkTemplate,
    pub robustness: RobustnessModel,
    pub db: WatermarkDatabase,
}

/// One buyer's watermarked release.
#[derive(Debug, Clone)]
pub struct Release {
    pub buyer: String,
    pub watermark: BitString,
    pub histogram: WatermarkedHistogram,
    pub table: Table,
}

pub fn fit_owner(table_o: &Table, key: &SecretKey, config: &PipelineConfig) -> Result<Owner> {
    config.validate()?;
    let seed = config.seed;
    let model = fit_cluster_model(table_o, config.m, config.variance_target, rng::child_seed(seed, "cluster", 0))?;
    let sampler = fit_sampler(table_o, &model, config.jitter, rng::child_seed(seed, "sampler", 0))?;
    let selected = select_template_clusters(&model.h, config.l)?;
    let template = pair_clusters(&selected, key, PAIR_CONTEXT)?;
    let delta_be = config.derived_delta_be()?;
    let robustness = fit_robustness(
        table_o,
        &model,
        &sampler,
        &template,
        &config.robustness,
        delta_be,
        rng::child_seed(seed, "robustness", 0),
    )?;
    let mut db = WatermarkDatabase::generate(config.n, config.l, delta_be)?;
    db.bind(optimal_watermark(&model.h, &template))?;
    Ok(Owner {
        config: config.clone(),
        model,
        sampler,
        template,
        robustness,
        db,
    })
}

/// File names inside an owner's artifact directory.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const SCHEMA: &str = "schema.json";
    pub const CLUSTER: &str = "cluster.json";
    pub const SAMPLER: &str = "sampler.json";
    pub const TEMPLATE: &str = "template.json";
    pub const ROBUSTNESS: &str = "robustness.json";
    pub const DATABASE: &str = "db.json";
}

impl Owner {
    /// Writes every fitted artifact except the watermark database.
    pub fn save_channel(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(dir.join(files::CONFIG), &self.config)?;
        self.sampler.schema().save_json(dir.join(files::SCHEMA))?;
        self.model.save(&dir.join(files::CLUSTER))?;
        self.sampler.save(&dir.join(files::SAMPLER))?;
        write_json(dir.join(files::TEMPLATE), &self.template)?;
        self.robustness.save(&dir.join(files::ROBUSTNESS))
    }

    pub fn save_db(&self, dir: &Path) -> Result<()> {
        self.db.save(&dir.join(files::DATABASE))
    }

    /// Loads a fitted owner. The template is re-derived from `key` and must match
    /// the stored one. Without a saved database a fresh one is generated and bound.
    pub fn load(dir: &Path, key: &SecretKey) -> Result<Owner> {
        let config: PipelineConfig = read_json(dir.join(files::CONFIG))?;
        config.validate()?;
        let model = ClusterModel::load(&dir.join(files::CLUSTER))?;
        let sampler = ConditionalSampler::load(&dir.join(files::SAMPLER))?;
        let schema = TableSchema::load_json(dir.join(files::SCHEMA))?;
        if sampler.schema() != &schema {
            return Err(Error::SchemaMismatch("sampler and schema artifacts disagree".into()));
        }
        model.check_schema(&schema)?;
        let stored: WatermarkTemplate = read_json(dir.join(files::TEMPLATE))?;
        let template = pair_clusters(&select_template_clusters(&model.h, config.l)?, key, PAIR_CONTEXT)?;
        if stored != template {
            return Err(Error::validation("the secret key does not match this owner's template"));
        }
        let robustness = RobustnessModel::load(&dir.join(files::ROBUSTNESS))?;
        if robustness.transition.m() != model.m {
            return Err(Error::validation("robustness artifact has the wrong cluster count"));
        }
        let w_star = optimal_watermark(&model.h, &template);
        let db_path = dir.join(files::DATABASE);
        let db = if db_path.exists() {
            let db = WatermarkDatabase::load(&db_path)?;
            if db.l != config.l || db.w_star.is_some_and(|w| w != w_star) {
                return Err(Error::validation("watermark database belongs to a different owner"));
            }
            db
        } else {
            let mut db = WatermarkDatabase::generate(config.n, config.l, robustness.delta_be)?;
            db.bind(w_star)?;
            db
        };
        Ok(Owner {
            config,
            model,
            sampler,
            template,
            robustness,
            db,
        })
    }

    pub fn w_star(&self) -> BitString {
        optimal_watermark(&self.model.h, &self.template)
    }

    /// Optimized histogram carrying `watermark`.
    pub fn histogram_for(&self, watermark: &BitString) -> Result<WatermarkedHistogram> {
        let coeffs = self.robustness.coefficients(&self.template, watermark)?;
        optimize(&self.model.h, &coeffs, &self.config.optimizer)
    }

    /// Synthesizes a table from `x` with a release seed.
    pub fn synthesize(&self, x: &[u64], seed: u64) -> Result<Table> {
        synthesize(&self.sampler, x, rng::child_seed(self.config.seed, "release", seed))
    }

    /// Assigns `buyer` a watermark (or reuses theirs) and produces their table.
    pub fn encode(&mut self, buyer: &str, seed: u64) -> Result<Release> {
        let watermark = self.db.bind_and_assign(self.w_star(), buyer)?;
        let histogram = self.histogram_for(&watermark)?;
        let table = self.synthesize(&histogram.x, seed)?;
        Ok(Release {
            buyer: buyer.to_string(),
            watermark,
            histogram,
            table,
        })
    }

    /// Gives every unassigned offset a buyer named `{prefix}{index}`.
    pub fn assign_all(&mut self, prefix: &str) -> Result<()> {
        let w = self.w_star();
        for i in self.db.assignments.len()..self.db.n {
            self.db.bind_and_assign(w, &format!("{prefix}{i}"))?;
        }
        Ok(())
    }

    pub fn identify(&self, table_s: &Table) -> Result<(BitString, Option<String>)> {
        identify(table_s, &self.model, &self.template, &self.db)
    }
}
