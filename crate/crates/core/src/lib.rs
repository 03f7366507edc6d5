//! Multi-bit, buyer-traceable watermarks for synthetic tables.
//!
//! A table is clustered; the watermark is carried by the size ordering of keyed
//! cluster pairs, and the watermarked histogram is chosen by a constrained integer
//! optimization that meets target false-positive and false-negative rates under
//! modeled attacks.

pub mod attack;
pub mod bits;
pub mod cluster;
pub mod codebook;
pub mod decode;
pub mod desk;
pub mod error;
pub mod eval;
pub mod optimizer;
pub mod pipeline;
pub mod rng;
pub mod robustness;
pub mod synth;
pub mod table;
pub mod template;

pub use bits::BitString;
pub use cluster::{assign_clusters, fit_cluster_model, histogram_of, ClusterModel};
pub use attack::{apply_attack, AttackKind, AttackSpec};
pub use codebook::WatermarkDatabase;
pub use decode::{decode, identify};
pub use error::{Error, Result};
pub use eval::{run_evaluation, EvalConfig, EvaluationReport};
pub use optimizer::{optimize, OptimizerConfig, WatermarkedHistogram};
pub use pipeline::{fit_owner, Owner, PipelineConfig, Release};
pub use robustness::RobustnessParams;
pub use table::{load_table, save_table, Column, ColumnKind, Row, Table, TableSchema, Value};
pub use template::{SecretKey, WatermarkTemplate};
